//! Experiment orchestration: agent modes, episode execution with the
//! two-phase proposal/reflection loop, and suite evaluation.

pub mod report;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{CriticModel, OracleAdvantage};
use crate::dynamics::ImaginationConfig;
use crate::env::{Action, EnvError, StepResult, TaskInstance};
use crate::expert::Expert;
use crate::nn::ModelError;
use crate::policy::{PolicyContext, PolicyModel, Proposal};
use crate::reflect::{beam_futures, reflect_decide, ImaginedTrajectory, ReflectConfig};
use crate::scalar::Scalar;
use crate::seeding::{derive_seed, derived_rng};
use crate::trigger::{should_reflect, TriggerModel};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("training and evaluation suites share {0} structural seeds")]
    SeedOverlap(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    /// Proposal only, never reflects.
    Bc,
    /// Width-1 reflection at every step.
    SingleTraj,
    /// Beam the futures, pick the top-probability trajectory's first
    /// action (post-generation selection).
    BestOfN,
    /// Beam the futures, pick the modal first action.
    MajorityVote,
    /// Full aggregated multi-path reflection at every step.
    MultiPath,
    /// Multi-path reflection gated by the confidence trigger.
    MultiPathTrigger,
    /// Cheating baseline for harness validation: executes expert actions.
    ExpertOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticKind {
    Learned,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentMode {
    pub kind: ModeKind,
    pub critic: CriticKind,
}

impl AgentMode {
    pub fn new(kind: ModeKind) -> Self {
        AgentMode {
            kind,
            critic: CriticKind::Learned,
        }
    }

    pub fn with_oracle(kind: ModeKind) -> Self {
        AgentMode {
            kind,
            critic: CriticKind::Oracle,
        }
    }

    pub fn label(&self) -> String {
        let base = match self.kind {
            ModeKind::Bc => "bc",
            ModeKind::SingleTraj => "single-traj",
            ModeKind::BestOfN => "best-of-n",
            ModeKind::MajorityVote => "majority-vote",
            ModeKind::MultiPath => "multi-path",
            ModeKind::MultiPathTrigger => "multi-path-trigger",
            ModeKind::ExpertOracle => "expert",
        };
        let uses_critic = matches!(
            self.kind,
            ModeKind::SingleTraj | ModeKind::MultiPath | ModeKind::MultiPathTrigger
        );
        if uses_critic && self.critic == CriticKind::Oracle {
            format!("{base}-oracle")
        } else {
            base.to_string()
        }
    }

    pub fn parse(label: &str) -> Option<AgentMode> {
        let (base, critic) = match label.strip_suffix("-oracle") {
            Some(base) => (base, CriticKind::Oracle),
            None => (label, CriticKind::Learned),
        };
        let kind = match base {
            "bc" => ModeKind::Bc,
            "single-traj" => ModeKind::SingleTraj,
            "best-of-n" => ModeKind::BestOfN,
            "majority-vote" => ModeKind::MajorityVote,
            "multi-path" => ModeKind::MultiPath,
            "multi-path-trigger" => ModeKind::MultiPathTrigger,
            "expert" => ModeKind::ExpertOracle,
            _ => return None,
        };
        Some(AgentMode { kind, critic })
    }

    /// The full ablation matrix: aggregation strategies plus the
    /// oracle-value upper bound and the triggered variant.
    pub fn ablation_matrix() -> Vec<AgentMode> {
        vec![
            AgentMode::new(ModeKind::Bc),
            AgentMode::new(ModeKind::SingleTraj),
            AgentMode::new(ModeKind::BestOfN),
            AgentMode::new(ModeKind::MajorityVote),
            AgentMode::new(ModeKind::MultiPath),
            AgentMode::with_oracle(ModeKind::MultiPath),
            AgentMode::new(ModeKind::MultiPathTrigger),
        ]
    }
}

/// Read-only model handles for episode execution.
pub struct EpisodeModels<'a, T> {
    pub policy: &'a PolicyModel<T>,
    pub critic: &'a CriticModel<T>,
    pub trigger: &'a TriggerModel<T>,
}

#[derive(Clone, Debug)]
pub struct EpisodeOpts {
    pub epsilon: f64,
    /// Early-exit threshold for the trigger mode.
    pub tau: f64,
    pub budget_factor: u32,
    pub budget_slack: u32,
    pub max_steps: u32,
    pub reflect: ReflectConfig,
    /// Imagination template; its seed field is re-derived per decision.
    pub dynamics: ImaginationConfig,
}

/// One evaluated episode. Wall-clock time is kept out of the serialized
/// record so metric files stay byte-identical across reruns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: u64,
    pub mode: String,
    pub seed: u64,
    pub success: bool,
    pub steps: u32,
    pub budget: u32,
    pub initial_distance: u32,
    /// Times the reflection machinery ran.
    pub reflections: u32,
    /// Times the executed action differed from the proposal.
    pub revisions: u32,
    /// Steps whose proposal matched the expert action.
    pub proposal_optimal: u32,
    /// Oracle one-step advantage of each revised proposal.
    pub revised_advantages: Vec<i64>,
    pub forward_passes: u64,
    #[serde(skip)]
    pub wall_clock_ms: f64,
}

/// First action of the highest cumulative-log-probability trajectory.
pub fn select_best_of_n<T: Scalar>(trajectories: &[ImaginedTrajectory<T>]) -> Action {
    trajectories
        .iter()
        .filter(|t| !t.actions.is_empty())
        .max_by(|a, b| a.log_prob.partial_cmp(&b.log_prob).expect("finite"))
        .map(|t| t.actions[0])
        .expect("at least one non-empty trajectory")
}

/// Modal first action; ties prefer the higher summed log-probability,
/// then the lexicographically smaller action.
pub fn select_majority<T: Scalar>(trajectories: &[ImaginedTrajectory<T>]) -> Action {
    let mut tally: std::collections::BTreeMap<Action, (usize, f64)> = Default::default();
    for t in trajectories {
        if let Some(&first) = t.actions.first() {
            let entry = tally.entry(first).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += t.log_prob.to_f64_lossy();
        }
    }
    let mut entries: Vec<(Action, usize, f64)> =
        tally.into_iter().map(|(a, (c, lp))| (a, c, lp)).collect();
    entries.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(b.2.partial_cmp(&a.2).expect("finite"))
            .then(a.0.cmp(&b.0))
    });
    entries.first().expect("at least one trajectory").0
}

/// Run one episode of `task` under `mode`. Deterministic given the seed.
pub fn run_episode<T: Scalar>(
    task: &TaskInstance,
    expert: &Expert<'_>,
    models: &EpisodeModels<'_, T>,
    mode: AgentMode,
    opts: &EpisodeOpts,
    seed: u64,
) -> EpisodeRecord {
    let (mut state, mut obs, goal_obs) = task.reset::<T>();
    let d0 = expert.goal_distance(&state).expect("solvable task");
    let budget = opts
        .max_steps
        .min(opts.budget_factor * d0 + opts.budget_slack);
    let mut env_rng = derived_rng(seed, &[0xE0]);
    let mut reflect_cfg = opts.reflect;
    if mode.kind == ModeKind::SingleTraj {
        reflect_cfg.beam_width = 1;
    }
    models.policy.reset_forward_passes();
    let started = Instant::now();
    let mut record = EpisodeRecord {
        task_id: task.task_id,
        mode: mode.label(),
        seed,
        success: task.is_goal(&state),
        steps: 0,
        budget,
        initial_distance: d0,
        reflections: 0,
        revisions: 0,
        proposal_optimal: 0,
        revised_advantages: Vec::new(),
        forward_passes: 0,
        wall_clock_ms: 0.0,
    };
    while record.steps < budget && !record.success {
        let decision_seed = derive_seed(seed, &[u64::from(record.steps)]);
        let mut dyn_cfg = opts.dynamics;
        dyn_cfg.seed = derive_seed(seed, &[0xD1, u64::from(record.steps)]);
        let proposal: Option<Proposal<T>> = if mode.kind == ModeKind::ExpertOracle {
            None
        } else {
            let ctx = PolicyContext::propose(obs.clone(), goal_obs.clone(), task.num_pieces());
            Some(models.policy.propose(&ctx))
        };
        let expert_action = expert.action(&state).expect("not at goal");
        if let Some(p) = &proposal {
            if p.action == expert_action {
                record.proposal_optimal += 1;
            }
        }
        let chosen = match mode.kind {
            ModeKind::ExpertOracle => expert_action,
            ModeKind::Bc => proposal.as_ref().unwrap().action,
            ModeKind::BestOfN | ModeKind::MajorityVote => {
                record.reflections += 1;
                let trajectories = beam_futures(
                    &state,
                    &obs,
                    &goal_obs,
                    task,
                    models.policy,
                    &dyn_cfg,
                    reflect_cfg.beam_width,
                    reflect_cfg.horizon,
                    derive_seed(dyn_cfg.seed, &[decision_seed]),
                );
                if mode.kind == ModeKind::BestOfN {
                    select_best_of_n(&trajectories)
                } else {
                    select_majority(&trajectories)
                }
            }
            ModeKind::SingleTraj | ModeKind::MultiPath | ModeKind::MultiPathTrigger => {
                let triggered = if mode.kind == ModeKind::MultiPathTrigger {
                    let confidence = models
                        .trigger
                        .confidence(&proposal.as_ref().unwrap().hidden)
                        .expect("trigger input is the policy hidden state");
                    should_reflect(confidence.to_f64_lossy(), opts.tau)
                } else {
                    true
                };
                if triggered {
                    record.reflections += 1;
                    let (action, _diag) = match mode.critic {
                        CriticKind::Learned => reflect_decide(
                            &state,
                            &obs,
                            &goal_obs,
                            task,
                            models.policy,
                            models.critic,
                            &dyn_cfg,
                            &reflect_cfg,
                            decision_seed,
                        ),
                        CriticKind::Oracle => {
                            let estimator = OracleAdvantage { expert };
                            reflect_decide(
                                &state,
                                &obs,
                                &goal_obs,
                                task,
                                models.policy,
                                &estimator,
                                &dyn_cfg,
                                &reflect_cfg,
                                decision_seed,
                            )
                        }
                    };
                    action
                } else {
                    proposal.as_ref().unwrap().action
                }
            }
        };
        if let Some(p) = &proposal {
            if chosen != p.action {
                record.revisions += 1;
                let (next, _) = task.apply_nominal(&state, p.action);
                let d_now = expert.goal_distance(&state).expect("solvable");
                let d_next = expert.goal_distance(&next).expect("solvable");
                record
                    .revised_advantages
                    .push(crate::expert::advantage(d_now, d_next));
            }
        }
        let result: StepResult<T> = task.step(&state, chosen, &mut env_rng, opts.epsilon);
        state = result.next_state;
        obs = result.observation;
        record.steps += 1;
        record.success = result.reached_goal;
    }
    record.forward_passes = models.policy.forward_passes();
    record.wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
    record
}

/// Evaluate `modes` over the suite. Episode seeds depend only on the
/// task and repetition, never on the mode, so every mode faces the same
/// environment noise.
pub fn evaluate<T: Scalar>(
    suite: &[TaskInstance],
    models: &EpisodeModels<'_, T>,
    modes: &[AgentMode],
    opts: &EpisodeOpts,
    repetitions: u32,
    seed: u64,
) -> Vec<EpisodeRecord> {
    let experts: Vec<Expert<'_>> = suite.iter().map(Expert::new).collect();
    let mut episodes = Vec::with_capacity(suite.len() * modes.len() * repetitions as usize);
    for mode in modes {
        for (task, expert) in suite.iter().zip(experts.iter()) {
            for rep in 0..repetitions {
                let episode_seed = derive_seed(seed, &[task.task_id, u64::from(rep)]);
                episodes.push(run_episode(task, expert, models, *mode, opts, episode_seed));
            }
        }
    }
    episodes
}

/// Training and evaluation suites must not share structural seeds.
pub fn ensure_disjoint_seeds(
    train: &[TaskInstance],
    eval: &[TaskInstance],
) -> Result<(), HarnessError> {
    let train_seeds: std::collections::BTreeSet<u64> = train.iter().map(|t| t.seed).collect();
    let overlap = eval
        .iter()
        .filter(|t| train_seeds.contains(&t.seed))
        .count();
    if overlap > 0 {
        return Err(HarnessError::SeedOverlap(overlap));
    }
    Ok(())
}
