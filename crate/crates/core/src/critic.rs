//! Advantage critic.
//!
//! A two-layer regressor over `(obs_t || obs_pred || obs_g)` estimating
//! the goal-distance reduction of the plan that produced `obs_pred`.
//! An oracle variant computes the exact advantage from shadow states via
//! the expert; both sit behind [`AdvantageEstimator`] so swapping them
//! changes nothing else.

use crate::env::{interaction_features, Observation, PuzzleState, INTERACTION_LEN, OBS_LEN};
use crate::expert::Expert;
use crate::nn::{
    linear_backward, linear_forward, relu_backward, relu_inplace, shuffled_indices,
    split_validation, Adam, ModelError,
};
use crate::scalar::{s, Scalar};
use crate::seeding::root_rng;

/// Scores an imagined trajectory's advantage from whatever inputs the
/// implementation needs (observations for the learned critic, shadow
/// states for the oracle).
pub trait AdvantageEstimator<T: Scalar> {
    fn estimate(&self, q: &AdvantageQuery<'_, T>) -> T;
}

pub struct AdvantageQuery<'a, T> {
    pub obs_t: &'a Observation<T>,
    pub obs_pred: &'a Observation<T>,
    pub obs_g: &'a Observation<T>,
    pub state_t: &'a PuzzleState,
    pub state_pred: &'a PuzzleState,
}

/// Exact advantage of moving between two shadow states.
pub fn oracle_advantage(expert: &Expert<'_>, state_t: &PuzzleState, state_th: &PuzzleState) -> i64 {
    let d_t = expert.goal_distance(state_t).expect("reachable state");
    let d_th = expert.goal_distance(state_th).expect("reachable state");
    crate::expert::advantage(d_t, d_th)
}

/// Upper-bound variant: perfect value estimation via the expert.
pub struct OracleAdvantage<'a, 'b> {
    pub expert: &'a Expert<'b>,
}

impl<T: Scalar> AdvantageEstimator<T> for OracleAdvantage<'_, '_> {
    fn estimate(&self, q: &AdvantageQuery<'_, T>) -> T {
        s(oracle_advantage(self.expert, q.state_t, q.state_pred) as f64)
    }
}

impl<T: Scalar> AdvantageEstimator<T> for CriticModel<T> {
    fn estimate(&self, q: &AdvantageQuery<'_, T>) -> T {
        self.predict(q.obs_t, q.obs_pred, q.obs_g)
            .expect("observation shapes match the critic")
    }
}

#[derive(Clone, Debug)]
pub struct CriticExample<T> {
    pub obs_t: Observation<T>,
    pub obs_pred: Observation<T>,
    pub obs_g: Observation<T>,
    /// Exact advantage label from the expert oracle.
    pub label: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CriticShape {
    pub obs_len: usize,
    pub hidden: usize,
}

impl CriticShape {
    fn input_len(&self) -> usize {
        // Interaction features only make sense for full-size observations
        // (unit tests use truncated ones).
        if self.obs_len == OBS_LEN {
            3 * self.obs_len + 2 * INTERACTION_LEN
        } else {
            3 * self.obs_len
        }
    }

    pub fn n_params(&self) -> usize {
        self.hidden * self.input_len() + self.hidden + self.hidden + 1
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CriticTrainOpts {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Labels are clipped to [-clip, clip] (twice the horizon by default).
    pub label_clip: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for CriticTrainOpts {
    fn default() -> Self {
        CriticTrainOpts {
            max_epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            patience: 10,
            label_clip: 10.0,
            weight_decay: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticTrainReport {
    pub train_mse: Vec<f64>,
    pub val_mse: f64,
    pub best_epoch: usize,
    /// Variance of the validation labels: the constant-predictor baseline.
    pub val_label_variance: f64,
}

#[derive(Clone, Debug)]
pub struct CriticModel<T> {
    shape: CriticShape,
    params: Vec<T>,
}

impl<T: Scalar> CriticModel<T> {
    pub fn zeros(shape: CriticShape) -> Self {
        CriticModel {
            shape,
            params: vec![T::zero(); shape.n_params()],
        }
    }

    /// Glorot trunk, zero output layer: the regressor starts flat and
    /// grows structure only where the data demands it.
    pub fn random(shape: CriticShape, seed: u64) -> Self {
        let mut model = Self::zeros(shape);
        let mut rng = root_rng(seed);
        let input = shape.input_len();
        let w1_len = shape.hidden * input;
        crate::nn::glorot_init(&mut model.params[..w1_len], input, shape.hidden, &mut rng);
        model
    }

    pub fn shape(&self) -> CriticShape {
        self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn from_params(shape: CriticShape, params: Vec<T>) -> Result<Self, ModelError> {
        if params.len() != shape.n_params() {
            return Err(ModelError::ShapeMismatch {
                expected: shape.n_params(),
                got: params.len(),
            });
        }
        Ok(CriticModel { shape, params })
    }

    fn forward(&self, x: &[T]) -> (Vec<T>, T) {
        let input = self.shape.input_len();
        let h_len = self.shape.hidden;
        let (w1, rest) = self.params.split_at(h_len * input);
        let (b1, rest) = rest.split_at(h_len);
        let (w2, b2) = rest.split_at(h_len);
        let mut h = vec![T::zero(); h_len];
        linear_forward(w1, b1, x, &mut h);
        relu_inplace(&mut h);
        let mut out = [T::zero()];
        linear_forward(w2, b2, &h, &mut out);
        (h, out[0])
    }

    fn input_of(&self, obs_t: &Observation<T>, obs_pred: &Observation<T>, obs_g: &Observation<T>) -> Vec<T> {
        let mut x = Vec::with_capacity(self.shape.input_len());
        x.extend_from_slice(obs_t.as_slice());
        x.extend_from_slice(obs_pred.as_slice());
        x.extend_from_slice(obs_g.as_slice());
        if self.shape.obs_len == OBS_LEN {
            x.extend(interaction_features(obs_t, obs_g));
            x.extend(interaction_features(obs_pred, obs_g));
        }
        x
    }

    /// Estimated advantage for the `(current, predicted, goal)` triple.
    pub fn predict(
        &self,
        obs_t: &Observation<T>,
        obs_pred: &Observation<T>,
        obs_g: &Observation<T>,
    ) -> Result<T, ModelError> {
        for obs in [obs_t, obs_pred, obs_g] {
            if obs.len() != self.shape.obs_len {
                return Err(ModelError::ShapeMismatch {
                    expected: self.shape.obs_len,
                    got: obs.len(),
                });
            }
        }
        let x = self.input_of(obs_t, obs_pred, obs_g);
        Ok(self.forward(&x).1)
    }

    /// Mean squared error over `batch` and its parameter gradient.
    pub fn loss_and_grad(&self, batch: &[&CriticExample<T>], label_clip: f64) -> (T, Vec<T>) {
        let input = self.shape.input_len();
        let h_len = self.shape.hidden;
        let mut grads = vec![T::zero(); self.params.len()];
        let mut total = T::zero();
        let scale = s::<T>(1.0 / batch.len() as f64);
        let w1_len = h_len * input;
        for ex in batch {
            let x = self.input_of(&ex.obs_t, &ex.obs_pred, &ex.obs_g);
            let (h, pred) = self.forward(&x);
            let label = s::<T>(ex.label.clamp(-label_clip, label_clip));
            let err = pred - label;
            total += err * err * scale;
            let dpred = [s::<T>(2.0) * err * scale];
            let (front, tail) = grads.split_at_mut(w1_len + h_len);
            let (dw1, db1) = front.split_at_mut(w1_len);
            let (dw2, db2) = tail.split_at_mut(h_len);
            let w2 = &self.params[w1_len + h_len..w1_len + 2 * h_len];
            let mut dh = vec![T::zero(); h_len];
            linear_backward(w2, &h, &dpred, dw2, db2, Some(&mut dh));
            relu_backward(&h, &mut dh);
            linear_backward(&self.params[..w1_len], &x, &dh, dw1, db1, None);
        }
        (total, grads)
    }

    /// Train with a seeded 9:1 split; keeps the parameters from the best
    /// validation epoch.
    pub fn train(
        &mut self,
        dataset: &[CriticExample<T>],
        opts: CriticTrainOpts,
    ) -> Result<CriticTrainReport, ModelError> {
        if dataset.len() < 10 {
            return Err(ModelError::DatasetTooSmall { min: 10 });
        }
        let mut rng = root_rng(opts.seed);
        let (train_idx, val_idx) = split_validation(dataset.len(), opts.val_fraction, &mut rng);
        let val: Vec<&CriticExample<T>> = val_idx.iter().map(|&i| &dataset[i]).collect();
        let mut adam = Adam::with_decay(self.params.len(), opts.learning_rate, opts.weight_decay);
        let mut curve = Vec::new();
        let mut best = (f64::INFINITY, self.params.clone(), 0usize);
        let mut since_best = 0usize;
        for epoch in 0..opts.max_epochs {
            let order = shuffled_indices(train_idx.len(), &mut rng);
            let mut epoch_loss = 0.0;
            for (bi, chunk) in order.chunks(opts.batch_size.max(1)).enumerate() {
                let batch: Vec<&CriticExample<T>> =
                    chunk.iter().map(|&i| &dataset[train_idx[i]]).collect();
                let (loss, grads) = self.loss_and_grad(&batch, opts.label_clip);
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch, batch: bi });
                }
                adam.step(&mut self.params, &grads);
                epoch_loss += loss.to_f64_lossy() * chunk.len() as f64;
            }
            curve.push(epoch_loss / train_idx.len() as f64);
            let val_mse = self.mse(&val, opts.label_clip);
            if val_mse < best.0 {
                best = (val_mse, self.params.clone(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= opts.patience {
                    break;
                }
            }
        }
        self.params = best.1;
        Ok(CriticTrainReport {
            train_mse: curve,
            val_mse: best.0,
            best_epoch: best.2,
            val_label_variance: label_variance(&val, opts.label_clip),
        })
    }

    /// Mean squared error on a slice of examples (clipped labels).
    pub fn mse(&self, examples: &[&CriticExample<T>], label_clip: f64) -> f64 {
        let mut total = 0.0;
        for ex in examples {
            let pred = self
                .predict(&ex.obs_t, &ex.obs_pred, &ex.obs_g)
                .expect("shapes")
                .to_f64_lossy();
            let err = pred - ex.label.clamp(-label_clip, label_clip);
            total += err * err;
        }
        total / examples.len() as f64
    }
}

/// Variance of (clipped) labels: MSE of the best constant predictor.
pub fn label_variance<T: Scalar>(examples: &[&CriticExample<T>], label_clip: f64) -> f64 {
    let labels: Vec<f64> = examples
        .iter()
        .map(|e| e.label.clamp(-label_clip, label_clip))
        .collect();
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    labels.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{PieceSpec, SlotSpec, StartPos, TaskInstance};
    use rand::Rng;

    fn shape() -> CriticShape {
        CriticShape {
            obs_len: 8,
            hidden: 16,
        }
    }

    fn obs(values: &[f64]) -> Observation<f64> {
        Observation(values.to_vec())
    }

    fn rand_obs(rng: &mut impl Rng) -> Observation<f64> {
        Observation((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_model_predicts_zero() {
        let model = CriticModel::<f64>::zeros(shape());
        let o = obs(&[0.5; 8]);
        assert_eq!(model.predict(&o, &o, &o).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = CriticModel::<f64>::zeros(shape());
        let good = obs(&[0.0; 8]);
        let bad = obs(&[0.0; 5]);
        assert!(model.predict(&good, &bad, &good).is_err());
    }

    #[test]
    fn constant_labels_regress_to_the_constant() {
        let mut rng = crate::seeding::root_rng(3);
        let data: Vec<CriticExample<f64>> = (0..128)
            .map(|_| CriticExample {
                obs_t: rand_obs(&mut rng),
                obs_pred: rand_obs(&mut rng),
                obs_g: rand_obs(&mut rng),
                label: 3.0,
            })
            .collect();
        let mut model = CriticModel::random(shape(), 1);
        let report = model
            .train(
                &data,
                CriticTrainOpts {
                    max_epochs: 100,
                    batch_size: 4,
                    learning_rate: 1e-2,
                    patience: 100,
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(report.val_mse < 0.05, "val mse {}", report.val_mse);
        let mut rng = crate::seeding::root_rng(9);
        let mean_probe = (0..20)
            .map(|_| {
                model
                    .predict(&rand_obs(&mut rng), &rand_obs(&mut rng), &rand_obs(&mut rng))
                    .unwrap()
            })
            .sum::<f64>()
            / 20.0;
        assert!((mean_probe - 3.0).abs() < 0.3, "mean prediction {mean_probe}");
    }

    #[test]
    fn recovers_a_linear_label_function() {
        // label = 4 * first feature of obs_pred.
        let mut rng = crate::seeding::root_rng(4);
        let data: Vec<CriticExample<f64>> = (0..256)
            .map(|_| {
                let obs_pred = rand_obs(&mut rng);
                CriticExample {
                    obs_t: rand_obs(&mut rng),
                    label: 4.0 * obs_pred.0[0],
                    obs_pred,
                    obs_g: rand_obs(&mut rng),
                }
            })
            .collect();
        let mut model = CriticModel::random(shape(), 2);
        let report = model
            .train(
                &data,
                CriticTrainOpts {
                    max_epochs: 100,
                    batch_size: 8,
                    learning_rate: 1e-2,
                    patience: 100,
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(report.val_mse < 0.05, "val mse {}", report.val_mse);
        assert!(report.val_mse < report.val_label_variance);
    }

    #[test]
    fn identity_pairs_learn_near_zero_advantage() {
        let mut rng = crate::seeding::root_rng(5);
        let data: Vec<CriticExample<f64>> = (0..128)
            .map(|_| {
                let o = rand_obs(&mut rng);
                CriticExample {
                    obs_t: o.clone(),
                    obs_pred: o.clone(),
                    obs_g: rand_obs(&mut rng),
                    label: 0.0,
                }
            })
            .collect();
        let mut model = CriticModel::random(shape(), 3);
        model.train(&data, CriticTrainOpts::default()).unwrap();
        let mean_abs: f64 = data
            .iter()
            .map(|e| {
                model
                    .predict(&e.obs_t, &e.obs_pred, &e.obs_g)
                    .unwrap()
                    .abs()
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!(mean_abs < 0.2, "mean abs prediction {mean_abs}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let mut rng = crate::seeding::root_rng(6);
        let data: Vec<CriticExample<f64>> = (0..32)
            .map(|_| CriticExample {
                obs_t: rand_obs(&mut rng),
                obs_pred: rand_obs(&mut rng),
                obs_g: rand_obs(&mut rng),
                label: rng.gen_range(-2.0..2.0),
            })
            .collect();
        let opts = CriticTrainOpts {
            max_epochs: 10,
            seed: 42,
            ..Default::default()
        };
        let mut a = CriticModel::random(shape(), 7);
        let mut b = CriticModel::random(shape(), 7);
        a.train(&data, opts).unwrap();
        b.train(&data, opts).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = CriticShape {
            obs_len: 4,
            hidden: 3,
        };
        let mut rng = crate::seeding::root_rng(8);
        let ex = CriticExample {
            obs_t: Observation((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            obs_pred: Observation((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            obs_g: Observation((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            label: 1.7,
        };
        let model = CriticModel::<f64>::random(shape, 11);
        let (_, analytic) = model.loss_and_grad(&[&ex], 10.0);
        let mut params = model.params().to_vec();
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let lp = CriticModel::from_params(shape, params.clone())
                .unwrap()
                .loss_and_grad(&[&ex], 10.0)
                .0;
            params[i] = orig - h;
            let lm = CriticModel::from_params(shape, params.clone())
                .unwrap()
                .loss_and_grad(&[&ex], 10.0)
                .0;
            params[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(num.abs()).max(1e-6);
            max_rel = max_rel.max((analytic[i] - num).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn oracle_mode_returns_exact_integer_advantages() {
        let task = TaskInstance {
            task_id: 0,
            num_pieces: 2,
            slots: vec![
                SlotSpec {
                    slot_id: 0,
                    accepts: 0,
                    requires_orientation: false,
                    prerequisites: vec![],
                },
                SlotSpec {
                    slot_id: 1,
                    accepts: 1,
                    requires_orientation: false,
                    prerequisites: vec![0],
                },
            ],
            pieces: vec![
                PieceSpec {
                    piece_id: 0,
                    color_id: 0,
                    start: StartPos::Table,
                },
                PieceSpec {
                    piece_id: 1,
                    color_id: 1,
                    start: StartPos::Table,
                },
            ],
            seed: 0,
        };
        let expert = Expert::new(&task);
        let start = task.initial_state();
        let goal = task.goal_state();
        assert_eq!(oracle_advantage(&expert, &start, &start), 0);
        assert_eq!(oracle_advantage(&expert, &start, &goal), 4);
        assert_eq!(oracle_advantage(&expert, &goal, &start), -4);
    }
}
