//! Token-level stochastic action policy.
//!
//! Stand-in for the VLM: a two-layer feed-forward trunk over the context
//! features, decoding an action as a verb token followed by an object
//! token. The object position conditions on the chosen verb through a
//! one-hot prefix block feeding the trunk, so the final hidden activation
//! at the object token carries the decision the trigger later inspects.
//!
//! Two context kinds share the network: `Propose` sees only the current
//! and goal observations; `Reflect` additionally carries one candidate
//! plan and its scaled advantage feedback.

use std::cell::Cell;

use rand::Rng;

use crate::env::{interaction_features, Action, Observation, Verb, INTERACTION_LEN, NUM_VERBS, P_MAX};
use crate::nn::{
    self, argmax, glorot_init, linear_backward, linear_forward, log_softmax, relu_backward,
    relu_inplace, softmax, Adam, ModelError,
};
use crate::scalar::{s, Scalar};
use crate::seeding::root_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextKind {
    Propose,
    Reflect,
}

/// Everything the policy conditions on at one decision point.
#[derive(Clone, Debug)]
pub struct PolicyContext<T> {
    pub kind: ContextKind,
    pub obs_t: Observation<T>,
    pub obs_g: Observation<T>,
    /// Object-vocabulary size for this task (its piece count).
    pub num_objects: usize,
    /// Reflect only: estimated advantage of the candidate plan.
    pub advantage: T,
    /// Reflect only: candidate plan, at most `horizon` actions.
    pub plan: Vec<Action>,
}

impl<T: Scalar> PolicyContext<T> {
    pub fn propose(obs_t: Observation<T>, obs_g: Observation<T>, num_objects: usize) -> Self {
        PolicyContext {
            kind: ContextKind::Propose,
            obs_t,
            obs_g,
            num_objects,
            advantage: T::zero(),
            plan: Vec::new(),
        }
    }

    pub fn reflect(
        obs_t: Observation<T>,
        obs_g: Observation<T>,
        num_objects: usize,
        advantage: T,
        plan: Vec<Action>,
    ) -> Self {
        PolicyContext {
            kind: ContextKind::Reflect,
            obs_t,
            obs_g,
            num_objects,
            advantage,
            plan,
        }
    }
}

/// Labeled training pair.
#[derive(Clone, Debug)]
pub struct PolicyExample<T> {
    pub ctx: PolicyContext<T>,
    pub target: Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyShape {
    pub obs_len: usize,
    pub hidden: usize,
    pub horizon: usize,
}

impl PolicyShape {
    pub fn input_len(&self) -> usize {
        // obs_t | obs_g | current/goal relations | kind | advantage |
        // plan one-hots | verb prefix. Relations only exist for full-size
        // observations (unit tests use truncated ones).
        let relations = if self.obs_len == crate::env::OBS_LEN {
            INTERACTION_LEN
        } else {
            0
        };
        2 * self.obs_len + relations + 2 + self.horizon * (NUM_VERBS + P_MAX) + NUM_VERBS
    }

    pub fn n_params(&self) -> usize {
        let input = self.input_len();
        self.hidden * input + self.hidden            // w1, b1
            + NUM_VERBS * self.hidden + NUM_VERBS    // wv, bv
            + P_MAX * self.hidden + P_MAX            // wo, bo
    }
}

/// Greedy decode result.
#[derive(Clone, Debug)]
pub struct Proposal<T> {
    pub action: Action,
    pub log_prob: T,
    /// Final hidden activation at the object token, length `hidden`.
    pub hidden: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyTrainOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PolicyTrainOpts {
    fn default() -> Self {
        PolicyTrainOpts {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolicyModel<T> {
    shape: PolicyShape,
    params: Vec<T>,
    forward_count: Cell<u64>,
}

/// Parameter block boundaries inside the flat vector.
#[derive(Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    end: usize,
}

impl Offsets {
    fn of(shape: &PolicyShape) -> Self {
        let input = shape.input_len();
        let h = shape.hidden;
        let w1 = 0;
        let b1 = w1 + h * input;
        let wv = b1 + h;
        let bv = wv + NUM_VERBS * h;
        let wo = bv + NUM_VERBS;
        let bo = wo + P_MAX * h;
        let end = bo + P_MAX;
        Offsets { w1, b1, wv, bv, wo, bo, end }
    }
}

impl<T: Scalar> PolicyModel<T> {
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyModel {
            shape,
            params: vec![T::zero(); shape.n_params()],
            forward_count: Cell::new(0),
        }
    }

    /// Glorot trunk, zero decoding heads: a fresh policy decodes uniform
    /// token distributions and sharpens only with training.
    pub fn random(shape: PolicyShape, seed: u64) -> Self {
        let mut model = Self::zeros(shape);
        let mut rng = root_rng(seed);
        let o = Offsets::of(&shape);
        let input = shape.input_len();
        glorot_init(&mut model.params[o.w1..o.b1], input, shape.hidden, &mut rng);
        model
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn from_params(shape: PolicyShape, params: Vec<T>) -> Result<Self, ModelError> {
        if params.len() != shape.n_params() {
            return Err(ModelError::ShapeMismatch {
                expected: shape.n_params(),
                got: params.len(),
            });
        }
        Ok(PolicyModel {
            shape,
            params,
            forward_count: Cell::new(0),
        })
    }

    /// Trunk forward passes since construction (or the last reset);
    /// the hardware-independent latency measure.
    pub fn forward_passes(&self) -> u64 {
        self.forward_count.get()
    }

    pub fn reset_forward_passes(&self) {
        self.forward_count.set(0);
    }

    fn check_ctx(&self, ctx: &PolicyContext<T>) -> Result<(), ModelError> {
        if ctx.obs_t.len() != self.shape.obs_len || ctx.obs_g.len() != self.shape.obs_len {
            return Err(ModelError::ShapeMismatch {
                expected: self.shape.obs_len,
                got: ctx.obs_t.len(),
            });
        }
        if ctx.num_objects == 0 || ctx.num_objects > P_MAX {
            return Err(ModelError::ShapeMismatch {
                expected: P_MAX,
                got: ctx.num_objects,
            });
        }
        if ctx.plan.len() > self.shape.horizon {
            return Err(ModelError::ShapeMismatch {
                expected: self.shape.horizon,
                got: ctx.plan.len(),
            });
        }
        Ok(())
    }

    /// Flat input features for `ctx` with an optional decoded-verb prefix.
    fn encode_input(&self, ctx: &PolicyContext<T>, prefix: &[usize]) -> Vec<T> {
        let mut x = Vec::with_capacity(self.shape.input_len());
        x.extend_from_slice(ctx.obs_t.as_slice());
        x.extend_from_slice(ctx.obs_g.as_slice());
        if self.shape.obs_len == crate::env::OBS_LEN {
            x.extend(interaction_features(&ctx.obs_t, &ctx.obs_g));
        }
        match ctx.kind {
            ContextKind::Propose => {
                x.push(T::zero());
                x.push(T::zero());
            }
            ContextKind::Reflect => {
                x.push(T::one());
                // Advantage feedback scaled by the horizon, clipped to [-1, 1].
                let h = s::<T>(self.shape.horizon as f64);
                let one = T::one();
                let scaled = (ctx.advantage / h).min(one).max(-one);
                x.push(scaled);
            }
        }
        let plan_base = x.len();
        x.resize(plan_base + self.shape.horizon * (NUM_VERBS + P_MAX), T::zero());
        for (step, action) in ctx.plan.iter().enumerate() {
            let at = plan_base + step * (NUM_VERBS + P_MAX);
            x[at + action.verb.code()] = T::one();
            x[at + NUM_VERBS + action.object as usize] = T::one();
        }
        let prefix_base = x.len();
        x.resize(prefix_base + NUM_VERBS, T::zero());
        if let Some(&verb) = prefix.first() {
            x[prefix_base + verb] = T::one();
        }
        debug_assert_eq!(x.len(), self.shape.input_len());
        x
    }

    fn trunk(&self, x: &[T]) -> Vec<T> {
        self.forward_count.set(self.forward_count.get() + 1);
        let o = Offsets::of(&self.shape);
        let mut h = vec![T::zero(); self.shape.hidden];
        linear_forward(&self.params[o.w1..o.b1], &self.params[o.b1..o.wv], x, &mut h);
        relu_inplace(&mut h);
        h
    }

    fn head(&self, h: &[T], position: usize, num_objects: usize) -> Vec<T> {
        let o = Offsets::of(&self.shape);
        if position == 0 {
            let mut out = vec![T::zero(); NUM_VERBS];
            linear_forward(&self.params[o.wv..o.bv], &self.params[o.bv..o.wo], h, &mut out);
            out
        } else {
            let mut out = vec![T::zero(); P_MAX];
            linear_forward(&self.params[o.wo..o.bo], &self.params[o.bo..o.end], h, &mut out);
            out.truncate(num_objects);
            out
        }
    }

    /// Raw scores at `position` (0: verbs, 1: objects) given the decoded
    /// prefix so far.
    pub fn logits(
        &self,
        ctx: &PolicyContext<T>,
        prefix: &[usize],
        position: usize,
    ) -> Result<Vec<T>, ModelError> {
        self.check_ctx(ctx)?;
        match position {
            0 if prefix.is_empty() => {}
            1 if prefix.len() == 1 && prefix[0] < NUM_VERBS => {}
            _ => return Err(ModelError::MalformedPrefix),
        }
        let x = self.encode_input(ctx, prefix);
        let h = self.trunk(&x);
        Ok(self.head(&h, position, ctx.num_objects))
    }

    /// Greedy decode: argmax verb, then argmax object given the verb.
    /// Returns the summed token log-probability and the hidden activation
    /// at the object token.
    pub fn propose(&self, ctx: &PolicyContext<T>) -> Proposal<T> {
        self.check_ctx(ctx).expect("valid context");
        let xv = self.encode_input(ctx, &[]);
        let hv = self.trunk(&xv);
        let fv = self.head(&hv, 0, ctx.num_objects);
        let lv = log_softmax(&fv);
        let verb = argmax(&fv);
        let xo = self.encode_input(ctx, &[verb]);
        let ho = self.trunk(&xo);
        let fo = self.head(&ho, 1, ctx.num_objects);
        let lo = log_softmax(&fo);
        let object = argmax(&fo);
        Proposal {
            action: Action::new(Verb::from_code(verb).unwrap(), object as u8),
            log_prob: lv[verb] + lo[object],
            hidden: ho,
        }
    }

    /// Sample an action token-by-token from the softmax distributions.
    pub fn sample<R: Rng + ?Sized>(&self, ctx: &PolicyContext<T>, rng: &mut R) -> (Action, T) {
        self.check_ctx(ctx).expect("valid context");
        let fv = self.logits(ctx, &[], 0).unwrap();
        let pv = softmax(&fv);
        let verb = nn::sample_index(&pv, rng);
        let fo = self.logits(ctx, &[verb], 1).unwrap();
        let po = softmax(&fo);
        let object = nn::sample_index(&po, rng);
        let lp = log_softmax(&fv)[verb] + log_softmax(&fo)[object];
        (Action::new(Verb::from_code(verb).unwrap(), object as u8), lp)
    }

    /// Top `w` actions by joint token probability, descending; ties break
    /// lexicographically on (verb, object).
    pub fn top_w(&self, ctx: &PolicyContext<T>, w: usize) -> Vec<(Action, T)> {
        assert!(w >= 1);
        self.check_ctx(ctx).expect("valid context");
        let fv = self.logits(ctx, &[], 0).unwrap();
        let lv = log_softmax(&fv);
        let mut ranked: Vec<(Action, T)> = Vec::with_capacity(NUM_VERBS * ctx.num_objects);
        for verb in 0..NUM_VERBS {
            let fo = self.logits(ctx, &[verb], 1).unwrap();
            let lo = log_softmax(&fo);
            for object in 0..ctx.num_objects {
                ranked.push((
                    Action::new(Verb::from_code(verb).unwrap(), object as u8),
                    lv[verb] + lo[object],
                ));
            }
        }
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite log probs")
                .then(a.0.cmp(&b.0))
        });
        ranked.truncate(w);
        ranked
    }

    /// Mean factored cross-entropy over `batch` and its gradient w.r.t.
    /// the flat parameter vector.
    pub fn loss_and_grad(&self, batch: &[&PolicyExample<T>]) -> (T, Vec<T>) {
        let mut grads = vec![T::zero(); self.params.len()];
        let mut total = T::zero();
        let scale = s::<T>(1.0 / batch.len() as f64);
        for ex in batch {
            debug_assert!(self.check_ctx(&ex.ctx).is_ok());
            let verb = ex.target.verb.code();
            // Verb position.
            let x0 = self.encode_input(&ex.ctx, &[]);
            let h0 = self.trunk(&x0);
            let f0 = self.head(&h0, 0, ex.ctx.num_objects);
            total -= log_softmax(&f0)[verb] * scale;
            let mut df0 = softmax(&f0);
            df0[verb] -= T::one();
            for v in df0.iter_mut() {
                *v *= scale;
            }
            self.backward(&mut grads, &x0, &h0, &df0, 0);
            // Object position, teacher-forced on the target verb.
            let x1 = self.encode_input(&ex.ctx, &[verb]);
            let h1 = self.trunk(&x1);
            let f1 = self.head(&h1, 1, ex.ctx.num_objects);
            let obj = ex.target.object as usize;
            total -= log_softmax(&f1)[obj] * scale;
            let mut df1 = softmax(&f1);
            df1[obj] -= T::one();
            for v in df1.iter_mut() {
                *v *= scale;
            }
            self.backward(&mut grads, &x1, &h1, &df1, 1);
        }
        (total, grads)
    }

    fn backward(&self, grads: &mut [T], x: &[T], h: &[T], dlogits: &[T], position: usize) {
        let o = Offsets::of(&self.shape);
        let hid = self.shape.hidden;
        let mut dh = vec![T::zero(); hid];
        {
            // Split the flat gradient buffer into disjoint blocks.
            let (front, tail) = grads.split_at_mut(o.wv);
            let (dw1, db1) = front.split_at_mut(o.b1);
            let (dwv_block, tail) = tail.split_at_mut(o.wo - o.wv);
            let (dwv, dbv) = dwv_block.split_at_mut(o.bv - o.wv);
            let (dwo, dbo) = tail.split_at_mut(o.bo - o.wo);
            if position == 0 {
                linear_backward(&self.params[o.wv..o.bv], h, dlogits, dwv, dbv, Some(&mut dh));
            } else {
                // Only the first num_objects rows of the object head
                // participate; the rest keep zero gradient.
                let rows = dlogits.len();
                linear_backward(
                    &self.params[o.wo..o.wo + rows * hid],
                    h,
                    dlogits,
                    &mut dwo[..rows * hid],
                    &mut dbo[..rows],
                    Some(&mut dh),
                );
            }
            relu_backward(h, &mut dh);
            linear_backward(&self.params[o.w1..o.b1], x, &dh, dw1, db1, None);
        }
    }

    /// Minimize the summed propose/reflect cross-entropy with mini-batch
    /// adaptive-moment descent. Returns the per-epoch mean loss curve.
    pub fn train(
        &mut self,
        dataset: &[PolicyExample<T>],
        opts: PolicyTrainOpts,
    ) -> Result<Vec<f64>, ModelError> {
        if dataset.is_empty() {
            return Err(ModelError::DatasetTooSmall { min: 1 });
        }
        let mut adam = Adam::new(self.params.len(), opts.learning_rate);
        let mut rng = root_rng(opts.seed);
        let mut curve = Vec::with_capacity(opts.epochs);
        for epoch in 0..opts.epochs {
            let order = nn::shuffled_indices(dataset.len(), &mut rng);
            let mut epoch_loss = 0.0;
            for (bi, chunk) in order.chunks(opts.batch_size.max(1)).enumerate() {
                let batch: Vec<&PolicyExample<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
                let (loss, grads) = self.loss_and_grad(&batch);
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch, batch: bi });
                }
                adam.step(&mut self.params, &grads);
                epoch_loss += loss.to_f64_lossy() * chunk.len() as f64;
            }
            curve.push(epoch_loss / dataset.len() as f64);
        }
        Ok(curve)
    }
}
