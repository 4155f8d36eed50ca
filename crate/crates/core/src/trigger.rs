//! Confidence-based early-exit trigger.
//!
//! A two-layer binary classifier over the policy's final hidden state:
//! `p = sigmoid(relu(e W1 + b1) W2 + b2)`. Label 1 means the proposed
//! action matched the expert at collection time. Reflection is invoked
//! when the confidence falls below the threshold `tau`; at exactly `tau`
//! the proposal is accepted.
//!
//! Training minimizes the weighted binary cross-entropy
//! `-(1/N) sum(w a3 y log p + (1 - y) log(1 - p))`; the default weight
//! `w a3 = N0/N1` rebalances the (mostly correct) collected proposals.

use crate::nn::{
    linear_backward, linear_forward, relu_backward, relu_inplace, shuffled_indices, sigmoid,
    softplus, split_validation, Adam, ModelError,
};
use crate::scalar::{s, Scalar};
use crate::seeding::root_rng;

#[derive(Clone, Debug)]
pub struct TriggerExample<T> {
    pub hidden: Vec<T>,
    /// True when the proposal matched the expert action.
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TriggerShape {
    pub input: usize,
    pub hidden: usize,
}

impl TriggerShape {
    pub fn n_params(&self) -> usize {
        self.hidden * self.input + self.hidden + self.hidden + 1
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TriggerTrainOpts {
    /// Weight on the positive (y = 1) loss term; `None` uses N0/N1.
    pub pos_weight: Option<f64>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub patience: usize,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TriggerTrainOpts {
    fn default() -> Self {
        TriggerTrainOpts {
            pos_weight: None,
            max_epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            patience: 10,
            weight_decay: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TriggerTrainReport {
    pub loss: Vec<f64>,
    pub val_accuracy: f64,
    /// Recall on y = 0 at the 0.5 decision threshold.
    pub val_recall_incorrect: f64,
    pub pos_weight: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct TriggerModel<T> {
    shape: TriggerShape,
    params: Vec<T>,
}

/// Reflect exactly when the confidence is below `tau`; the boundary
/// accepts the proposal.
pub fn should_reflect<T: Scalar>(confidence: T, tau: T) -> bool {
    confidence < tau
}

impl<T: Scalar> TriggerModel<T> {
    pub fn zeros(shape: TriggerShape) -> Self {
        TriggerModel {
            shape,
            params: vec![T::zero(); shape.n_params()],
        }
    }

    /// Glorot trunk, zero output layer: the classifier starts at 0.5
    /// confidence everywhere.
    pub fn random(shape: TriggerShape, seed: u64) -> Self {
        let mut model = Self::zeros(shape);
        let mut rng = root_rng(seed);
        let w1_len = shape.hidden * shape.input;
        crate::nn::glorot_init(&mut model.params[..w1_len], shape.input, shape.hidden, &mut rng);
        model
    }

    pub fn shape(&self) -> TriggerShape {
        self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn from_params(shape: TriggerShape, params: Vec<T>) -> Result<Self, ModelError> {
        if params.len() != shape.n_params() {
            return Err(ModelError::ShapeMismatch {
                expected: shape.n_params(),
                got: params.len(),
            });
        }
        Ok(TriggerModel { shape, params })
    }

    fn forward(&self, e: &[T]) -> (Vec<T>, T) {
        let w1_len = self.shape.hidden * self.shape.input;
        let (w1, rest) = self.params.split_at(w1_len);
        let (b1, rest) = rest.split_at(self.shape.hidden);
        let (w2, b2) = rest.split_at(self.shape.hidden);
        let mut h = vec![T::zero(); self.shape.hidden];
        linear_forward(w1, b1, e, &mut h);
        relu_inplace(&mut h);
        let mut z = [T::zero()];
        linear_forward(w2, b2, &h, &mut z);
        (h, z[0])
    }

    /// Confidence that the proposal is correct, strictly inside (0, 1).
    /// The sigmoid saturates to exactly 0/1 in floating point for large
    /// logits, so the output is clamped to the open interval.
    pub fn confidence(&self, e: &[T]) -> Result<T, ModelError> {
        if e.len() != self.shape.input {
            return Err(ModelError::ShapeMismatch {
                expected: self.shape.input,
                got: e.len(),
            });
        }
        let p = sigmoid(self.forward(e).1);
        Ok(p.max(T::min_positive_value()).min(T::one() - T::epsilon()))
    }

    /// Weighted BCE over `batch` and its parameter gradient.
    pub fn loss_and_grad(&self, batch: &[&TriggerExample<T>], pos_weight: f64) -> (T, Vec<T>) {
        let w1_len = self.shape.hidden * self.shape.input;
        let h_len = self.shape.hidden;
        let mut grads = vec![T::zero(); self.params.len()];
        let mut total = T::zero();
        let scale = s::<T>(1.0 / batch.len() as f64);
        let w = s::<T>(pos_weight);
        for ex in batch {
            let (h, z) = self.forward(&ex.hidden);
            let p = sigmoid(z);
            // y=1 term: -w log p = w softplus(-z); y=0: -log(1-p) = softplus(z)
            let (loss, dz) = if ex.label {
                (w * softplus(-z), w * (p - T::one()))
            } else {
                (softplus(z), p)
            };
            total += loss * scale;
            let dzv = [dz * scale];
            let (front, tail) = grads.split_at_mut(w1_len + h_len);
            let (dw1, db1) = front.split_at_mut(w1_len);
            let (dw2, db2) = tail.split_at_mut(h_len);
            let w2 = &self.params[w1_len + h_len..w1_len + 2 * h_len];
            let mut dh = vec![T::zero(); h_len];
            linear_backward(w2, &h, &dzv, dw2, db2, Some(&mut dh));
            relu_backward(&h, &mut dh);
            linear_backward(&self.params[..w1_len], &ex.hidden, &dh, dw1, db1, None);
        }
        (total, grads)
    }

    /// Train with a seeded 9:1 split, early-stopping on validation
    /// accuracy; keeps the best-accuracy parameters.
    pub fn train(
        &mut self,
        dataset: &[TriggerExample<T>],
        opts: TriggerTrainOpts,
    ) -> Result<TriggerTrainReport, ModelError> {
        if dataset.len() < 10 {
            return Err(ModelError::DatasetTooSmall { min: 10 });
        }
        let n1 = dataset.iter().filter(|e| e.label).count();
        let n0 = dataset.len() - n1;
        if n0 == 0 || n1 == 0 {
            return Err(ModelError::SingleClassDataset);
        }
        let pos_weight = opts.pos_weight.unwrap_or(n0 as f64 / n1 as f64);
        let mut rng = root_rng(opts.seed);
        let (train_idx, val_idx) = split_validation(dataset.len(), opts.val_fraction, &mut rng);
        let val: Vec<&TriggerExample<T>> = val_idx.iter().map(|&i| &dataset[i]).collect();
        let mut adam = Adam::with_decay(self.params.len(), opts.learning_rate, opts.weight_decay);
        let mut curve = Vec::new();
        let mut best = (-1.0f64, self.params.clone(), 0usize);
        let mut since_best = 0usize;
        for epoch in 0..opts.max_epochs {
            let order = shuffled_indices(train_idx.len(), &mut rng);
            let mut epoch_loss = 0.0;
            for (bi, chunk) in order.chunks(opts.batch_size.max(1)).enumerate() {
                let batch: Vec<&TriggerExample<T>> =
                    chunk.iter().map(|&i| &dataset[train_idx[i]]).collect();
                let (loss, grads) = self.loss_and_grad(&batch, pos_weight);
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch, batch: bi });
                }
                adam.step(&mut self.params, &grads);
                epoch_loss += loss.to_f64_lossy() * chunk.len() as f64;
            }
            curve.push(epoch_loss / train_idx.len() as f64);
            let acc = self.accuracy(&val);
            if acc > best.0 {
                best = (acc, self.params.clone(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= opts.patience {
                    break;
                }
            }
        }
        self.params = best.1;
        let recall = self.recall_incorrect(&val, 0.5);
        Ok(TriggerTrainReport {
            loss: curve,
            val_accuracy: best.0,
            val_recall_incorrect: recall,
            pos_weight,
            best_epoch: best.2,
        })
    }

    /// Classification accuracy at the 0.5 threshold.
    pub fn accuracy(&self, examples: &[&TriggerExample<T>]) -> f64 {
        let correct = examples
            .iter()
            .filter(|e| {
                let p = self.confidence(&e.hidden).expect("shapes").to_f64_lossy();
                (p >= 0.5) == e.label
            })
            .count();
        correct as f64 / examples.len() as f64
    }

    /// Fraction of y=0 examples that would trigger reflection at `tau`.
    pub fn recall_incorrect(&self, examples: &[&TriggerExample<T>], tau: f64) -> f64 {
        let negatives: Vec<f64> = examples
            .iter()
            .filter(|e| !e.label)
            .map(|e| self.confidence(&e.hidden).expect("shapes").to_f64_lossy())
            .collect();
        if negatives.is_empty() {
            return 1.0;
        }
        negatives.iter().filter(|&&p| p < tau).count() as f64 / negatives.len() as f64
    }

    /// Smallest threshold whose y=0 recall on `examples` meets
    /// `min_recall_on_incorrect`. Larger thresholds reflect more, so the
    /// smallest sufficient one buys the recall target at the least cost.
    pub fn calibrate_threshold(
        &self,
        examples: &[&TriggerExample<T>],
        min_recall_on_incorrect: f64,
    ) -> Result<f64, ModelError> {
        if !(0.0..=1.0).contains(&min_recall_on_incorrect) {
            return Err(ModelError::UnachievableTarget {
                target: min_recall_on_incorrect,
            });
        }
        if !examples.iter().any(|e| !e.label) || !examples.iter().any(|e| e.label) {
            return Err(ModelError::SingleClassDataset);
        }
        let mut candidates: Vec<f64> = examples
            .iter()
            .map(|e| self.confidence(&e.hidden).expect("shapes").to_f64_lossy())
            .collect();
        candidates.push(0.0);
        candidates.push(1.0);
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        for tau in candidates {
            if self.recall_incorrect(examples, tau) >= min_recall_on_incorrect {
                return Ok(tau);
            }
        }
        Err(ModelError::UnachievableTarget {
            target: min_recall_on_incorrect,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn shape() -> TriggerShape {
        TriggerShape {
            input: 8,
            hidden: 16,
        }
    }

    /// Linearly separable toy set: label = (sum of features > 0).
    fn separable(n: usize, seed: u64) -> Vec<TriggerExample<f64>> {
        let mut rng = crate::seeding::root_rng(seed);
        (0..n)
            .map(|_| {
                let hidden: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let label = hidden.iter().sum::<f64>() > 0.0;
                TriggerExample { hidden, label }
            })
            .collect()
    }

    #[test]
    fn zero_parameters_give_half_confidence() {
        let model = TriggerModel::<f64>::zeros(shape());
        let p = model.confidence(&[0.3; 8]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn confidence_stays_strictly_inside_unit_interval() {
        let model = TriggerModel::<f64>::random(shape(), 1);
        let mut rng = crate::seeding::root_rng(2);
        for _ in 0..200 {
            let e: Vec<f64> = (0..8).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let p = model.confidence(&e).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn should_reflect_boundary_accepts() {
        assert!(!should_reflect(0.5, 0.5));
        assert!(should_reflect(0.49, 0.5));
        assert!(!should_reflect(0.7, 0.0)); // tau=0 never reflects
        assert!(should_reflect(0.999, 1.0)); // tau=1 always reflects
        // Monotone in tau for fixed confidence.
        assert!(!should_reflect(0.6, 0.3));
        assert!(should_reflect(0.6, 0.9));
    }

    #[test]
    fn unit_weight_reduces_to_plain_bce() {
        // w a3 = 1 must equal the unweighted BCE to machine precision.
        let model = TriggerModel::<f64>::random(shape(), 3);
        let data = separable(16, 10);
        let refs: Vec<&TriggerExample<f64>> = data.iter().collect();
        let (weighted, _) = model.loss_and_grad(&refs, 1.0);
        let mut plain = 0.0;
        for ex in &data {
            let p = model.confidence(&ex.hidden).unwrap();
            plain -= if ex.label { p.ln() } else { (1.0 - p).ln() };
        }
        plain /= data.len() as f64;
        assert!((weighted - plain).abs() < 1e-12);
    }

    #[test]
    fn default_weight_is_the_class_ratio() {
        let mut data = separable(40, 11);
        // Force imbalance: 30 positive, 10 negative.
        for (i, ex) in data.iter_mut().enumerate() {
            ex.label = i % 4 != 0;
        }
        let mut model = TriggerModel::<f64>::random(shape(), 4);
        let report = model
            .train(
                &data,
                TriggerTrainOpts {
                    max_epochs: 2,
                    ..Default::default()
                },
            )
            .unwrap();
        assert!((report.pos_weight - 10.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn separable_data_trains_to_high_accuracy() {
        let data = separable(400, 12);
        let mut model = TriggerModel::<f64>::random(shape(), 5);
        let report = model
            .train(
                &data,
                TriggerTrainOpts {
                    max_epochs: 100,
                    learning_rate: 1e-2,
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(report.val_accuracy > 0.95, "accuracy {}", report.val_accuracy);
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let mut data = separable(20, 13);
        for ex in &mut data {
            ex.label = true;
        }
        let mut model = TriggerModel::<f64>::random(shape(), 6);
        assert!(matches!(
            model.train(&data, TriggerTrainOpts::default()),
            Err(ModelError::SingleClassDataset)
        ));
    }

    #[test]
    fn confidence_is_monotone_along_a_positive_path() {
        // Build a model with nonnegative W1 and positive W2 by hand, then
        // push mass along an input direction: confidence must increase.
        let shape = TriggerShape { input: 4, hidden: 4 };
        let mut params = vec![0.0f64; shape.n_params()];
        for i in 0..4 {
            params[i * 4 + i] = 1.0; // W1 = I
        }
        for i in 0..4 {
            params[16 + 4 + i] = 0.5; // W2 > 0
        }
        let model = TriggerModel::from_params(shape, params).unwrap();
        let mut last = 0.0;
        for k in 0..10 {
            let e = vec![0.1 * f64::from(k); 4];
            let p = model.confidence(&e).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = TriggerShape { input: 5, hidden: 4 };
        let mut rng = crate::seeding::root_rng(14);
        let examples: Vec<TriggerExample<f64>> = (0..3)
            .map(|i| TriggerExample {
                hidden: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: i % 2 == 0,
            })
            .collect();
        let refs: Vec<&TriggerExample<f64>> = examples.iter().collect();
        let model = TriggerModel::<f64>::random(shape, 15);
        let w = 0.37;
        let (_, analytic) = model.loss_and_grad(&refs, w);
        let mut params = model.params().to_vec();
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let lp = TriggerModel::from_params(shape, params.clone())
                .unwrap()
                .loss_and_grad(&refs, w)
                .0;
            params[i] = orig - h;
            let lm = TriggerModel::from_params(shape, params.clone())
                .unwrap()
                .loss_and_grad(&refs, w)
                .0;
            params[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(num.abs()).max(1e-6);
            max_rel = max_rel.max((analytic[i] - num).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn threshold_calibration_meets_the_recall_target() {
        let data = separable(400, 16);
        let mut model = TriggerModel::<f64>::random(shape(), 17);
        model
            .train(
                &data,
                TriggerTrainOpts {
                    max_epochs: 60,
                    learning_rate: 1e-2,
                    ..Default::default()
                },
            )
            .unwrap();
        let (cal, held) = data.split_at(200);
        let cal_refs: Vec<&TriggerExample<f64>> = cal.iter().collect();
        let held_refs: Vec<&TriggerExample<f64>> = held.iter().collect();

        // target 0 -> tau = 0 (never reflect).
        assert_eq!(model.calibrate_threshold(&cal_refs, 0.0).unwrap(), 0.0);

        // target 1 -> tau above every y=0 confidence.
        let tau1 = model.calibrate_threshold(&cal_refs, 1.0).unwrap();
        let max_neg = cal
            .iter()
            .filter(|e| !e.label)
            .map(|e| model.confidence(&e.hidden).unwrap())
            .fold(0.0f64, f64::max);
        assert!(tau1 >= max_neg);

        // Intermediate target transfers to a held-out split within 0.05.
        let tau = model.calibrate_threshold(&cal_refs, 0.7).unwrap();
        let recall = model.recall_incorrect(&held_refs, tau);
        assert!(recall >= 0.7 - 0.05, "held-out recall {recall}");
    }
}
