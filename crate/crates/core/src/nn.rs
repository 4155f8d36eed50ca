//! Hand-differentiated building blocks shared by the policy, critic, and
//! trigger networks: dense layers, stable softmax machinery, and an
//! adaptive-moment optimizer. Everything works on flat parameter vectors
//! so finite-difference gradient checks stay trivial.

use rand::Rng;
use thiserror::Error;

use crate::scalar::{s, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("malformed decoding prefix")]
    MalformedPrefix,
    #[error("dataset must contain at least {min} examples")]
    DatasetTooSmall { min: usize },
    #[error("dataset must contain both classes")]
    SingleClassDataset,
    #[error("loss became non-finite at epoch {epoch} (batch {batch})")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("recall target {target} is unachievable")]
    UnachievableTarget { target: f64 },
    #[error("distributions have different support: {left} vs {right}")]
    MismatchedSupport { left: usize, right: usize },
}

/// out = W x + b, with `w` row-major `[out_len x in_len]`.
pub fn linear_forward<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let in_len = x.len();
    debug_assert_eq!(w.len(), out.len() * in_len);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * in_len..(i + 1) * in_len];
        let mut acc = b[i];
        for (wi, xi) in row.iter().zip(x.iter()) {
            acc += *wi * *xi;
        }
        *o = acc;
    }
}

/// Accumulates dW and db for a linear layer and (optionally) returns the
/// gradient w.r.t. x through `dx`.
pub fn linear_backward<T: Scalar>(
    w: &[T],
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let in_len = x.len();
    if let Some(dx) = dx.as_deref_mut() {
        for v in dx.iter_mut() {
            *v = T::zero();
        }
    }
    for (i, &g) in dy.iter().enumerate() {
        db[i] += g;
        let row = &mut dw[i * in_len..(i + 1) * in_len];
        for (j, xj) in x.iter().enumerate() {
            row[j] += g * *xj;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let wrow = &w[i * in_len..(i + 1) * in_len];
            for (dxj, wj) in dx.iter_mut().zip(wrow.iter()) {
                *dxj += g * *wj;
            }
        }
    }
}

pub fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes upstream gradients where the activation was clamped.
pub fn relu_backward<T: Scalar>(activation: &[T], dy: &mut [T]) {
    for (g, a) in dy.iter_mut().zip(activation.iter()) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut out: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum = out.iter().copied().fold(T::zero(), |a, b| a + b);
    for v in out.iter_mut() {
        *v = *v / sum;
    }
    out
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let log_sum = logits
        .iter()
        .map(|&x| (x - max).exp())
        .fold(T::zero(), |a, b| a + b)
        .ln();
    logits.iter().map(|&x| x - max - log_sum).collect()
}

/// log(1 + e^x) without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Index of the maximum value; ties break toward the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Draw an index from a normalized distribution.
pub fn sample_index<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.to_f64_lossy();
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Uniform Glorot-style initialization for a `[fan_out x fan_in]` matrix.
pub fn glorot_init<T: Scalar, R: Rng + ?Sized>(w: &mut [T], fan_in: usize, fan_out: usize, rng: &mut R) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w.iter_mut() {
        *v = s(rng.gen_range(-bound..bound));
    }
}

/// Adaptive-moment gradient descent (bias-corrected) with optional
/// decoupled weight decay.
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    decay: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self::with_decay(n, learning_rate, 0.0)
    }

    pub fn with_decay(n: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Adam {
            lr: s(learning_rate),
            beta1: s(0.9),
            beta2: s(0.999),
            eps: s(1e-8),
            decay: s(weight_decay),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = params[i] - self.lr * (mhat / (vhat.sqrt() + self.eps) + self.decay * params[i]);
        }
    }
}

/// Seeded shuffled index order for one epoch.
pub fn shuffled_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Seeded 9:1-style split: returns (train indices, validation indices).
pub fn split_validation<R: Rng + ?Sized>(
    n: usize,
    val_fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let idx = shuffled_indices(n, rng);
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let (val, train) = idx.split_at(n_val);
    (train.to_vec(), val.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::root_rng;

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = root_rng(1);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let p = softmax(&logits);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let logits = vec![0.3f64, -1.2, 2.0];
        let p = softmax(&logits);
        let lp = log_softmax(&logits);
        for (a, b) in p.iter().zip(lp.iter()) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = root_rng(5);
        let (rows, cols) = (3, 4);
        let w: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Scalar loss: sum of squared outputs.
        let loss = |w: &[f64], b: &[f64], x: &[f64]| {
            let mut y = vec![0.0; rows];
            linear_forward(w, b, x, &mut y);
            y.iter().map(|v| v * v).sum::<f64>()
        };
        let mut y = vec![0.0; rows];
        linear_forward(&w, &b, &x, &mut y);
        let dy: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let mut dw = vec![0.0; rows * cols];
        let mut db = vec![0.0; rows];
        let mut dx = vec![0.0; cols];
        linear_backward(&w, &x, &dy, &mut dw, &mut db, Some(&mut dx));
        let h = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let num = (loss(&wp, &b, &x) - loss(&wm, &b, &x)) / (2.0 * h);
            assert!((num - dw[i]).abs() < 1e-6, "dW[{i}]");
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let num = (loss(&w, &b, &xp) - loss(&w, &b, &xm)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-6, "dx[{i}]");
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut params = vec![5.0f64, -3.0];
        let mut adam = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            adam.step(&mut params, &grads);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "{params:?}");
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
