//! Forward model for imagination.
//!
//! `Exact` mode replays the nominal environment dynamics and encoding
//! bit-for-bit. `Corrupted` mode emulates a learned pixel-space predictor:
//! with probability `transition_noise` an imagined step silently drops its
//! action, and every emitted observation feature is independently
//! perturbed with probability `obs_noise` (bits flip, the slot-index
//! feature resamples uniformly over its valid values). Corruption touches
//! only the emitted observations; the shadow state stays whatever the
//! (possibly dropped) transitions produced.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    feature_layout, slot_feature_values, Action, EnvError, FeatureKind, Observation, PuzzleState,
    TaskInstance,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImaginationMode {
    Exact,
    Corrupted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImaginationConfig {
    pub mode: ImaginationMode,
    /// Per-feature perturbation probability on emitted observations.
    pub obs_noise: f64,
    /// Probability an imagined step silently drops its action.
    pub transition_noise: f64,
    pub seed: u64,
}

impl ImaginationConfig {
    pub fn exact(seed: u64) -> Self {
        ImaginationConfig {
            mode: ImaginationMode::Exact,
            obs_noise: 0.0,
            transition_noise: 0.0,
            seed,
        }
    }

    pub fn corrupted(obs_noise: f64, transition_noise: f64, seed: u64) -> Result<Self, EnvError> {
        let cfg = ImaginationConfig {
            mode: ImaginationMode::Corrupted,
            obs_noise,
            transition_noise,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for (name, value) in [
            ("obs_noise", self.obs_noise),
            ("transition_noise", self.transition_noise),
        ] {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(EnvError::ParamOutOfRange {
                    name,
                    value,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        if self.mode == ImaginationMode::Exact
            && (self.obs_noise != 0.0 || self.transition_noise != 0.0)
        {
            return Err(EnvError::ParamOutOfRange {
                name: "exact mode noise",
                value: self.obs_noise.max(self.transition_noise),
                lo: 0.0,
                hi: 0.0,
            });
        }
        Ok(())
    }
}

/// One imagined transition: nominal dynamics plus configured corruption.
pub fn imagine_step<T: Scalar, R: Rng + ?Sized>(
    state: &PuzzleState,
    task: &TaskInstance,
    action: Action,
    cfg: &ImaginationConfig,
    rng: &mut R,
) -> (PuzzleState, Observation<T>) {
    let dropped = cfg.mode == ImaginationMode::Corrupted
        && cfg.transition_noise > 0.0
        && rng.gen::<f64>() < cfg.transition_noise;
    let next = if dropped {
        state.clone()
    } else {
        task.apply_nominal(state, action).0
    };
    let mut obs: Observation<T> = task.encode(&next);
    if cfg.mode == ImaginationMode::Corrupted && cfg.obs_noise > 0.0 {
        corrupt_observation(&mut obs, cfg.obs_noise, rng);
    }
    (next, obs)
}

fn corrupt_observation<T: Scalar, R: Rng + ?Sized>(obs: &mut Observation<T>, p: f64, rng: &mut R) {
    let layout = feature_layout();
    let slot_values = slot_feature_values::<T>();
    for (value, kind) in obs.0.iter_mut().zip(layout.iter()) {
        if rng.gen::<f64>() >= p {
            continue;
        }
        match kind {
            FeatureKind::Bit => *value = T::one() - *value,
            FeatureKind::SlotIndex => {
                *value = slot_values[rng.gen_range(0..slot_values.len())];
            }
        }
    }
}

/// Sequential imagined rollout; returns the final shadow state and the
/// emitted observation per step.
pub fn imagine_rollout<T: Scalar, R: Rng + ?Sized>(
    state: &PuzzleState,
    task: &TaskInstance,
    actions: &[Action],
    cfg: &ImaginationConfig,
    rng: &mut R,
) -> (PuzzleState, Vec<Observation<T>>) {
    let mut current = state.clone();
    let mut observations = Vec::with_capacity(actions.len());
    for &action in actions {
        let (next, obs) = imagine_step(&current, task, action, cfg, rng);
        observations.push(obs);
        current = next;
    }
    (current, observations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_task, StepResult, TaskParams, Verb, NUM_VERBS, OBS_LEN};
    use crate::expert::Expert;
    use crate::seeding::root_rng;

    fn task() -> TaskInstance {
        generate_task(
            3,
            &TaskParams {
                pieces: 4,
                dep_density: 0.4,
                orient_frac: 0.5,
                misplace_prob: 0.3,
            },
        )
        .unwrap()
    }

    #[test]
    fn exact_mode_matches_env_dynamics() {
        // Equivalence oracle over 1,000 random (state, action) pairs.
        let task = task();
        let cfg = ImaginationConfig::exact(0);
        let mut rng = root_rng(12);
        let mut state = task.initial_state();
        for _ in 0..1_000 {
            let action = Action::new(
                Verb::from_code(rng.gen_range(0..NUM_VERBS)).unwrap(),
                rng.gen_range(0..task.num_pieces),
            );
            let (imagined, obs): (PuzzleState, Observation<f64>) =
                imagine_step(&state, &task, action, &cfg, &mut rng);
            let reference: StepResult<f64> = task.step(&state, action, &mut root_rng(0), 0.0);
            assert!(imagined.same_configuration(&reference.next_state));
            assert_eq!(obs, task.encode(&imagined));
            state = imagined;
        }
    }

    #[test]
    fn corrupted_with_zero_noise_equals_exact() {
        let task = task();
        let exact = ImaginationConfig::exact(0);
        let zero = ImaginationConfig::corrupted(0.0, 0.0, 0).unwrap();
        let state = task.initial_state();
        let actions = vec![
            Action::new(Verb::PickUp, 0),
            Action::new(Verb::Reorient, 0),
            Action::new(Verb::Insert, 0),
        ];
        let (fa, oa): (PuzzleState, Vec<Observation<f64>>) =
            imagine_rollout(&state, &task, &actions, &exact, &mut root_rng(5));
        let (fb, ob): (PuzzleState, Vec<Observation<f64>>) =
            imagine_rollout(&state, &task, &actions, &zero, &mut root_rng(5));
        assert_eq!(fa, fb);
        assert_eq!(oa, ob);
    }

    #[test]
    fn exact_config_rejects_nonzero_noise() {
        let bad = ImaginationConfig {
            mode: ImaginationMode::Exact,
            obs_noise: 0.1,
            transition_noise: 0.0,
            seed: 0,
        };
        assert!(bad.validate().is_err());
        assert!(ImaginationConfig::corrupted(1.5, 0.0, 0).is_err());
    }

    #[test]
    fn observation_corruption_rate_is_calibrated() {
        // Fraction of changed features over 10^4 emissions. Slot-index
        // resampling may redraw the same value, so the changed fraction
        // sits slightly below obs_noise; still well inside +-0.02.
        let task = task();
        let cfg = ImaginationConfig::corrupted(0.2, 0.0, 0).unwrap();
        let state = task.initial_state();
        let action = Action::new(Verb::PickUp, 0);
        let clean: Observation<f64> = {
            let (next, _) = task.apply_nominal(&state, action);
            task.encode(&next)
        };
        let mut rng = root_rng(321);
        let mut changed = 0u64;
        let n = 10_000;
        for _ in 0..n {
            let (_, obs): (PuzzleState, Observation<f64>) =
                imagine_step(&state, &task, action, &cfg, &mut rng);
            changed += obs
                .0
                .iter()
                .zip(clean.0.iter())
                .filter(|(a, b)| a != b)
                .count() as u64;
        }
        let frac = changed as f64 / (n as f64 * OBS_LEN as f64);
        assert!((frac - 0.2).abs() <= 0.02, "changed fraction {frac}");
    }

    #[test]
    fn corruption_never_touches_the_shadow_state() {
        // With transition noise off, the corrupted-mode final state must
        // equal the exact-mode final state for the same action sequence.
        let task = task();
        let noisy = ImaginationConfig::corrupted(0.5, 0.0, 0).unwrap();
        let exact = ImaginationConfig::exact(0);
        let state = task.initial_state();
        let mut rng = root_rng(77);
        let actions: Vec<Action> = (0..20)
            .map(|_| {
                Action::new(
                    Verb::from_code(rng.gen_range(0..NUM_VERBS)).unwrap(),
                    rng.gen_range(0..task.num_pieces),
                )
            })
            .collect();
        let (fa, _): (PuzzleState, Vec<Observation<f64>>) =
            imagine_rollout(&state, &task, &actions, &noisy, &mut root_rng(1));
        let (fb, _): (PuzzleState, Vec<Observation<f64>>) =
            imagine_rollout(&state, &task, &actions, &exact, &mut root_rng(2));
        assert_eq!(fa.locations, fb.locations);
        assert_eq!(fa.oriented, fb.oriented);
    }

    #[test]
    fn expert_plan_reaches_goal_in_imagination() {
        let task = task();
        let expert = Expert::new(&task);
        let mut state = task.initial_state();
        let mut plan = Vec::new();
        while !task.is_goal(&state) {
            let a = expert.action(&state).unwrap();
            plan.push(a);
            state = task.apply_nominal(&state, a).0;
        }
        let cfg = ImaginationConfig::exact(0);
        let (final_state, observations): (PuzzleState, Vec<Observation<f64>>) =
            imagine_rollout(&task.initial_state(), &task, &plan, &cfg, &mut root_rng(0));
        assert!(task.is_goal(&final_state));
        assert_eq!(observations.len(), plan.len());
    }

    #[test]
    fn single_step_rollout_equals_imagine_step() {
        let task = task();
        let cfg = ImaginationConfig::corrupted(0.3, 0.2, 0).unwrap();
        let state = task.initial_state();
        let action = Action::new(Verb::PickUp, 1);
        let (sa, oa): (PuzzleState, Observation<f64>) =
            imagine_step(&state, &task, action, &cfg, &mut root_rng(9));
        let (sb, ob): (PuzzleState, Vec<Observation<f64>>) =
            imagine_rollout(&state, &task, &[action], &cfg, &mut root_rng(9));
        assert_eq!(sa, sb);
        assert_eq!(vec![oa], ob);
    }

    #[test]
    fn rollouts_are_deterministic_under_a_fixed_seed() {
        let task = task();
        let cfg = ImaginationConfig::corrupted(0.3, 0.2, 0).unwrap();
        let state = task.initial_state();
        let actions = vec![Action::new(Verb::PickUp, 0), Action::new(Verb::PutDown, 0)];
        let a: (PuzzleState, Vec<Observation<f64>>) =
            imagine_rollout(&state, &task, &actions, &cfg, &mut root_rng(4));
        let b: (PuzzleState, Vec<Observation<f64>>) =
            imagine_rollout(&state, &task, &actions, &cfg, &mut root_rng(4));
        assert_eq!(a, b);
    }
}
