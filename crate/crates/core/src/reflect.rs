//! Multi-path reflection.
//!
//! Beam-searches H-step futures with the proposal policy and the
//! imagination model, scores each leaf trajectory's advantage, stratifies
//! the streams into a base set and promising/suboptimal reference sets,
//! and decodes one revised action token-by-token. At every position each
//! base stream's logits are combined with every reference stream's:
//! promising references are added (complementary), suboptimal references
//! are added when the softmax distributions are close in Jensen-Shannon
//! divergence and subtracted (contrastive) when they diverge. The final
//! token distribution is the flat average over all (base, reference)
//! pairs.

use serde::{Deserialize, Serialize};

use crate::critic::{AdvantageEstimator, AdvantageQuery};
use crate::dynamics::{imagine_step, ImaginationConfig};
use crate::env::{Action, Observation, PuzzleState, TaskInstance, Verb};
use crate::nn::{argmax, sample_index, softmax, ModelError};
use crate::policy::{PolicyContext, PolicyModel};
use crate::scalar::{s, Scalar};
use crate::seeding::{derive_seed, derived_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Argmax,
    Sample,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReflectConfig {
    /// Imagination horizon H.
    pub horizon: usize,
    /// Beam width W; the leaf count K equals the surviving beam count.
    pub beam_width: usize,
    /// Base-set size N (top-ranked trajectories).
    pub base_size: usize,
    /// Advantage threshold sigma splitting reference streams.
    pub advantage_threshold: f64,
    /// Jensen-Shannon divergence threshold gamma gating contrastive
    /// decoding.
    pub jsd_threshold: f64,
    /// Complementary weight alpha1.
    pub alpha1: f64,
    /// Contrastive weight alpha2.
    pub alpha2: f64,
    pub selection: SelectionRule,
}

impl Default for ReflectConfig {
    fn default() -> Self {
        ReflectConfig {
            horizon: 5,
            beam_width: 3,
            base_size: 2,
            advantage_threshold: 0.5,
            jsd_threshold: 0.3,
            alpha1: 0.5,
            alpha2: 0.5,
            selection: SelectionRule::Argmax,
        }
    }
}

impl ReflectConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.horizon >= 1
            && self.beam_width >= 1
            && self.base_size >= 1
            && (0.0..=1.0).contains(&self.jsd_threshold)
            && self.alpha1 >= 0.0
            && self.alpha2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::NonFiniteInput)
        }
    }
}

/// One imagined H-step future.
#[derive(Clone, Debug)]
pub struct ImaginedTrajectory<T> {
    /// At most H actions; shorter when the shadow state reached the goal.
    pub actions: Vec<Action>,
    /// Predicted observation after each action.
    pub observations: Vec<Observation<T>>,
    pub final_state: PuzzleState,
    /// Cumulative token log-probability.
    pub log_prob: T,
    /// Estimated advantage, filled by [`score_and_stratify`].
    pub advantage: T,
}

/// Stream indices after stratification: disjoint, union covers all K.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSets {
    pub base: Vec<usize>,
    pub promising: Vec<usize>,
    pub suboptimal: Vec<usize>,
}

/// Probability vector over one decoding position's vocabulary.
#[derive(Clone, Debug)]
pub struct TokenDistribution<T> {
    pub position: usize,
    pub probs: Vec<T>,
}

impl<T: Scalar> TokenDistribution<T> {
    pub fn sum(&self) -> T {
        self.probs.iter().copied().fold(T::zero(), |a, b| a + b)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.probs.iter().all(|p| *p >= T::zero())
            && (self.sum() - T::one()).abs() <= s(tol)
    }
}

#[derive(Clone, Debug)]
struct Beam<T> {
    state: PuzzleState,
    frontier_obs: Observation<T>,
    actions: Vec<Action>,
    observations: Vec<Observation<T>>,
    log_prob: T,
    done: bool,
}

/// Fixed-width beam search over imagined futures. Expands every live beam
/// with the policy's top-W actions on its own predicted observation and
/// keeps the global top-W continuations by cumulative log-probability.
/// Leaves come back sorted by log-probability, descending.
pub fn beam_futures<T: Scalar>(
    state_t: &PuzzleState,
    obs_t: &Observation<T>,
    obs_g: &Observation<T>,
    task: &TaskInstance,
    policy: &PolicyModel<T>,
    dyn_cfg: &ImaginationConfig,
    width: usize,
    horizon: usize,
    imagine_seed: u64,
) -> Vec<ImaginedTrajectory<T>> {
    assert!(width >= 1 && horizon >= 1);
    let num_objects = task.num_pieces();
    let mut beams = vec![Beam {
        state: state_t.clone(),
        frontier_obs: obs_t.clone(),
        actions: Vec::new(),
        observations: Vec::new(),
        log_prob: T::zero(),
        done: task.is_goal(state_t),
    }];
    for depth in 0..horizon {
        if beams.iter().all(|b| b.done) {
            break;
        }
        // Sort keys: log_prob descending, then parent index, then
        // expansion rank, so survivor order is fully deterministic.
        let mut candidates: Vec<(T, usize, usize, Beam<T>)> = Vec::new();
        for (parent, beam) in beams.iter().enumerate() {
            if beam.done {
                candidates.push((beam.log_prob, parent, 0, beam.clone()));
                continue;
            }
            let ctx = PolicyContext::propose(
                beam.frontier_obs.clone(),
                obs_g.clone(),
                num_objects,
            );
            let expansions = policy.top_w(&ctx, width);
            let mut rng = derived_rng(imagine_seed, &[depth as u64, parent as u64]);
            for (rank, (action, lp)) in expansions.into_iter().enumerate() {
                let (next, obs) = imagine_step(&beam.state, task, action, dyn_cfg, &mut rng);
                let mut actions = beam.actions.clone();
                actions.push(action);
                let mut observations = beam.observations.clone();
                observations.push(obs.clone());
                let done = task.is_goal(&next);
                candidates.push((
                    beam.log_prob + lp,
                    parent,
                    rank + 1,
                    Beam {
                        state: next,
                        frontier_obs: obs,
                        actions,
                        observations,
                        log_prob: beam.log_prob + lp,
                        done,
                    },
                ));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("finite log probs")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(width);
        beams = candidates.into_iter().map(|(_, _, _, b)| b).collect();
    }
    beams
        .into_iter()
        .map(|b| ImaginedTrajectory {
            actions: b.actions,
            observations: b.observations,
            final_state: b.state,
            log_prob: b.log_prob,
            advantage: T::zero(),
        })
        .collect()
}

/// Pure stratification rule over already-known advantages: rank
/// descending (ties by stream index), take the top `n` as the base set,
/// split the rest by `sigma`.
pub fn stratify<T: Scalar>(advantages: &[T], n: usize, sigma: f64) -> StreamSets {
    let mut order: Vec<usize> = (0..advantages.len()).collect();
    order.sort_by(|&a, &b| {
        advantages[b]
            .partial_cmp(&advantages[a])
            .expect("finite advantages")
            .then(a.cmp(&b))
    });
    let n_base = n.min(order.len());
    let base = order[..n_base].to_vec();
    let mut promising = Vec::new();
    let mut suboptimal = Vec::new();
    let sigma = s::<T>(sigma);
    for &k in &order[n_base..] {
        if advantages[k] >= sigma {
            promising.push(k);
        } else {
            suboptimal.push(k);
        }
    }
    StreamSets {
        base,
        promising,
        suboptimal,
    }
}

/// Estimate each trajectory's advantage and stratify the streams.
pub fn score_and_stratify<T: Scalar, E: AdvantageEstimator<T>>(
    trajectories: &mut [ImaginedTrajectory<T>],
    estimator: &E,
    obs_t: &Observation<T>,
    obs_g: &Observation<T>,
    state_t: &PuzzleState,
    n: usize,
    sigma: f64,
) -> StreamSets {
    for traj in trajectories.iter_mut() {
        let obs_pred = traj.observations.last().unwrap_or(obs_t);
        traj.advantage = estimator.estimate(&AdvantageQuery {
            obs_t,
            obs_pred,
            obs_g,
            state_t,
            state_pred: &traj.final_state,
        });
    }
    let advantages: Vec<T> = trajectories.iter().map(|t| t.advantage).collect();
    stratify(&advantages, n, sigma)
}

/// Base-2 Jensen-Shannon divergence between two normalized distributions
/// on the same support; lands in [0, 1].
pub fn jsd<T: Scalar>(p: &[T], q: &[T]) -> Result<T, ModelError> {
    if p.len() != q.len() {
        return Err(ModelError::MismatchedSupport {
            left: p.len(),
            right: q.len(),
        });
    }
    let half = s::<T>(0.5);
    let ln2 = s::<T>(std::f64::consts::LN_2);
    let mut acc = T::zero();
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        let mi = half * (pi + qi);
        if pi > T::zero() {
            acc += half * pi * (pi / mi).ln() / ln2;
        }
        if qi > T::zero() {
            acc += half * qi * (qi / mi).ln() / ln2;
        }
    }
    Ok(acc.max(T::zero()).min(T::one()))
}

/// Result of aggregating one decoding position.
#[derive(Clone, Debug)]
pub struct AggregateOutcome<T> {
    pub dist: TokenDistribution<T>,
    /// Divergences measured against suboptimal references, in (base,
    /// reference) iteration order.
    pub jsd_values: Vec<T>,
}

/// Hybrid complementary/contrastive aggregation of one position's logits.
/// With no reference streams the base streams' softmaxes are averaged.
pub fn aggregate_position<T: Scalar>(
    base: &[Vec<T>],
    promising: &[Vec<T>],
    suboptimal: &[Vec<T>],
    alpha1: T,
    alpha2: T,
    gamma: T,
    position: usize,
) -> Result<AggregateOutcome<T>, ModelError> {
    if base.is_empty() {
        return Err(ModelError::DatasetTooSmall { min: 1 });
    }
    let len = base[0].len();
    for logits in base.iter().chain(promising).chain(suboptimal) {
        if logits.len() != len {
            return Err(ModelError::MismatchedSupport {
                left: len,
                right: logits.len(),
            });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
    }
    let n_refs = promising.len() + suboptimal.len();
    let mut jsd_values = Vec::new();
    let mut out = vec![T::zero(); len];
    let outer = s::<T>(1.0 / base.len() as f64);
    for fk in base {
        if n_refs == 0 {
            for (o, p) in out.iter_mut().zip(softmax(fk)) {
                *o += outer * p;
            }
            continue;
        }
        let pk = softmax(fk);
        let inner = s::<T>(1.0 / n_refs as f64);
        let mut acc = vec![T::zero(); len];
        let mix = |dist: Vec<T>, acc: &mut Vec<T>| {
            for (a, p) in acc.iter_mut().zip(dist) {
                *a += inner * p;
            }
        };
        for fl in promising {
            let combined: Vec<T> = fk.iter().zip(fl).map(|(&a, &b)| a + alpha1 * b).collect();
            mix(softmax(&combined), &mut acc);
        }
        for fl in suboptimal {
            let pl = softmax(fl);
            let d = jsd(&pk, &pl)?;
            jsd_values.push(d);
            let combined: Vec<T> = if d < gamma {
                fk.iter().zip(fl).map(|(&a, &b)| a + alpha1 * b).collect()
            } else {
                fk.iter()
                    .zip(fl)
                    .map(|(&a, &b)| (T::one() + alpha2) * a - alpha2 * b)
                    .collect()
            };
            mix(softmax(&combined), &mut acc);
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o += outer * a;
        }
    }
    Ok(AggregateOutcome {
        dist: TokenDistribution {
            position,
            probs: out,
        },
        jsd_values,
    })
}

/// Per-decision reflection diagnostics for the metrics stream.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReflectDiagnostics {
    pub k: usize,
    pub advantages: Vec<f64>,
    pub base_size: usize,
    pub promising: usize,
    pub suboptimal: usize,
    pub jsd_values: Vec<f64>,
    /// The decoded pair violates the current state's preconditions; it is
    /// returned anyway and the environment treats it as invalid.
    pub illegal: bool,
}

/// Full reflection pass: imagine, score, stratify, and decode one revised
/// action with every stream conditioned on its own trajectory feedback
/// and the shared decoded prefix.
#[allow(clippy::too_many_arguments)]
pub fn reflect_decide<T: Scalar, E: AdvantageEstimator<T>>(
    state_t: &PuzzleState,
    obs_t: &Observation<T>,
    obs_g: &Observation<T>,
    task: &TaskInstance,
    policy: &PolicyModel<T>,
    estimator: &E,
    dyn_cfg: &ImaginationConfig,
    cfg: &ReflectConfig,
    decision_seed: u64,
) -> (Action, ReflectDiagnostics) {
    cfg.validate().expect("valid reflect config");
    let imagine_seed = derive_seed(dyn_cfg.seed, &[decision_seed]);
    let mut trajectories = beam_futures(
        state_t,
        obs_t,
        obs_g,
        task,
        policy,
        dyn_cfg,
        cfg.beam_width,
        cfg.horizon,
        imagine_seed,
    );
    let sets = score_and_stratify(
        &mut trajectories,
        estimator,
        obs_t,
        obs_g,
        state_t,
        cfg.base_size,
        cfg.advantage_threshold,
    );
    let num_objects = task.num_pieces();
    let contexts: Vec<PolicyContext<T>> = trajectories
        .iter()
        .map(|t| {
            PolicyContext::reflect(
                obs_t.clone(),
                obs_g.clone(),
                num_objects,
                t.advantage,
                t.actions.clone(),
            )
        })
        .collect();
    let alpha1 = s::<T>(cfg.alpha1);
    let alpha2 = s::<T>(cfg.alpha2);
    let gamma = s::<T>(cfg.jsd_threshold);
    let mut selection_rng = derived_rng(decision_seed, &[0x5E1EC7]);
    let mut prefix: Vec<usize> = Vec::new();
    let mut all_jsd = Vec::new();
    for position in 0..2 {
        let logits_of = |idx: &[usize]| -> Vec<Vec<T>> {
            idx.iter()
                .map(|&k| {
                    policy
                        .logits(&contexts[k], &prefix, position)
                        .expect("stream context is well-formed")
                })
                .collect()
        };
        let base = logits_of(&sets.base);
        let promising = logits_of(&sets.promising);
        let suboptimal = logits_of(&sets.suboptimal);
        let outcome = aggregate_position(
            &base,
            &promising,
            &suboptimal,
            alpha1,
            alpha2,
            gamma,
            position,
        )
        .expect("aggregation over finite logits");
        all_jsd.extend(outcome.jsd_values.iter().map(|d| d.to_f64_lossy()));
        let token = match cfg.selection {
            SelectionRule::Argmax => argmax(&outcome.dist.probs),
            SelectionRule::Sample => sample_index(&outcome.dist.probs, &mut selection_rng),
        };
        prefix.push(token);
    }
    let action = Action::new(Verb::from_code(prefix[0]).unwrap(), prefix[1] as u8);
    let diagnostics = ReflectDiagnostics {
        k: trajectories.len(),
        advantages: trajectories
            .iter()
            .map(|t| t.advantage.to_f64_lossy())
            .collect(),
        base_size: sets.base.len(),
        promising: sets.promising.len(),
        suboptimal: sets.suboptimal.len(),
        jsd_values: all_jsd,
        illegal: !task.action_valid(state_t, action),
    };
    (action, diagnostics)
}
