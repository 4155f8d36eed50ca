//! Interactive post-training: expert-mixed rollouts, dual-context
//! relabeling, and dataset aggregation.
//!
//! Rollouts execute the learner's greedy proposal with probability
//! `mix_p` and the expert action otherwise, always recording both plus
//! the proposal's hidden state and the exact goal distance. After an
//! episode terminates, every step yields a propose example; steps with a
//! full H-window additionally yield a reflect example (conditioned on the
//! executed action window and its realized advantage), a critic example,
//! and a trigger example.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::critic::CriticExample;
use crate::env::{Action, Observation, StepResult, TaskInstance};
use crate::expert::Expert;
use crate::nn::ModelError;
use crate::policy::{PolicyContext, PolicyExample, PolicyModel, PolicyTrainOpts};
use crate::scalar::Scalar;
use crate::seeding::{derive_seed, derived_rng};
use crate::trigger::TriggerExample;

#[derive(Clone, Copy, Debug)]
pub struct RolloutConfig {
    /// Probability of executing the learner action instead of the expert.
    pub mix_p: f64,
    /// Action failure rate during execution.
    pub epsilon: f64,
    /// Hard cap on episode length; the effective budget is
    /// `min(max_steps, 4 * d0 + 8)`.
    pub max_steps: u32,
}

#[derive(Clone, Debug)]
pub struct RolloutStep<T> {
    pub obs: Observation<T>,
    pub executed: Action,
    pub learner: Action,
    pub expert_action: Action,
    pub hidden: Vec<T>,
    /// Exact goal distance of the state this step acted from.
    pub dist: u32,
}

#[derive(Clone, Debug)]
pub struct RolloutRecord<T> {
    pub task_id: u64,
    pub num_objects: usize,
    pub goal_obs: Observation<T>,
    pub steps: Vec<RolloutStep<T>>,
    pub reached_goal: bool,
    pub initial_distance: u32,
}

/// Execute one expert-mixed episode and record it.
pub fn rollout<T: Scalar>(
    policy: &PolicyModel<T>,
    expert: &Expert<'_>,
    task: &TaskInstance,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> RolloutRecord<T> {
    let (mut state, mut obs, goal_obs) = task.reset::<T>();
    let d0 = expert.goal_distance(&state).expect("solvable task");
    let budget = cfg.max_steps.min(4 * d0 + 8);
    let mut steps = Vec::new();
    let mut reached_goal = task.is_goal(&state);
    for _ in 0..budget {
        if reached_goal {
            break;
        }
        let dist = expert.goal_distance(&state).expect("solvable task");
        let ctx = PolicyContext::propose(obs.clone(), goal_obs.clone(), task.num_pieces());
        let proposal = policy.propose(&ctx);
        let expert_action = expert.action(&state).expect("not at goal");
        let executed = if rng.gen::<f64>() < cfg.mix_p {
            proposal.action
        } else {
            expert_action
        };
        steps.push(RolloutStep {
            obs: obs.clone(),
            executed,
            learner: proposal.action,
            expert_action,
            hidden: proposal.hidden,
            dist,
        });
        let result: StepResult<T> = task.step(&state, executed, rng, cfg.epsilon);
        state = result.next_state;
        obs = result.observation;
        reached_goal = result.reached_goal;
    }
    RolloutRecord {
        task_id: task.task_id,
        num_objects: task.num_pieces(),
        goal_obs,
        steps,
        reached_goal,
        initial_distance: d0,
    }
}

/// Everything one relabeled rollout contributes to the four datasets.
#[derive(Clone, Debug, Default)]
pub struct RelabeledData<T> {
    pub propose: Vec<PolicyExample<T>>,
    pub reflect: Vec<PolicyExample<T>>,
    pub critic: Vec<CriticExample<T>>,
    pub trigger: Vec<TriggerExample<T>>,
}

impl<T> RelabeledData<T> {
    pub fn extend(&mut self, other: RelabeledData<T>) {
        self.propose.extend(other.propose);
        self.reflect.extend(other.reflect);
        self.critic.extend(other.critic);
        self.trigger.extend(other.trigger);
    }

    /// Propose + reflect examples, the policy fine-tuning dataset.
    pub fn policy_examples(&self) -> Vec<PolicyExample<T>>
    where
        T: Clone,
    {
        let mut out = self.propose.clone();
        out.extend(self.reflect.clone());
        out
    }
}

/// Relabel a terminated rollout. Steps with `t + horizon` inside the
/// record get reflect/critic examples over the executed action window;
/// every step gets a propose and a trigger example.
pub fn relabel<T: Scalar>(record: &RolloutRecord<T>, horizon: usize) -> RelabeledData<T> {
    let mut data = RelabeledData::default();
    let len = record.steps.len();
    for (t, step) in record.steps.iter().enumerate() {
        data.propose.push(PolicyExample {
            ctx: PolicyContext::propose(
                step.obs.clone(),
                record.goal_obs.clone(),
                record.num_objects,
            ),
            target: step.expert_action,
        });
        data.trigger.push(TriggerExample {
            hidden: step.hidden.clone(),
            label: step.learner == step.expert_action,
        });
        if t + horizon < len {
            let future = &record.steps[t + horizon];
            let advantage = i64::from(step.dist) - i64::from(future.dist);
            let window: Vec<Action> = record.steps[t..t + horizon]
                .iter()
                .map(|s| s.executed)
                .collect();
            data.reflect.push(PolicyExample {
                ctx: PolicyContext::reflect(
                    step.obs.clone(),
                    record.goal_obs.clone(),
                    record.num_objects,
                    crate::scalar::s(advantage as f64),
                    window,
                ),
                target: step.expert_action,
            });
            data.critic.push(CriticExample {
                obs_t: step.obs.clone(),
                obs_pred: future.obs.clone(),
                obs_g: record.goal_obs.clone(),
                label: advantage as f64,
            });
        }
    }
    data
}

#[derive(Clone, Copy, Debug)]
pub struct PostTrainConfig {
    /// Outer iterations (single round in the standard protocol).
    pub iters: usize,
    /// Rollouts per iteration.
    pub n_traj: usize,
    pub mix_p: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub max_steps: u32,
    pub train: PolicyTrainOpts,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct PostTrainStats {
    /// Accumulated policy-dataset size after each iteration.
    pub dataset_sizes: Vec<usize>,
    pub propose_examples: usize,
    pub reflect_examples: usize,
    pub rollouts: usize,
    pub goal_rate: f64,
    pub loss_curves: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct PostTrainOutput<T> {
    pub critic_data: Vec<CriticExample<T>>,
    pub trigger_data: Vec<TriggerExample<T>>,
    pub stats: PostTrainStats,
}

/// Run the interactive post-training loop: collect expert-mixed rollouts
/// on the training suite, relabel, fold into the accumulated dataset
/// (which starts from the supplied demonstrations), and fine-tune the
/// policy after every iteration. Critic/trigger side datasets come back
/// for their own training.
pub fn posttrain<T: Scalar>(
    policy: &mut PolicyModel<T>,
    demos: &[PolicyExample<T>],
    suite: &[TaskInstance],
    cfg: &PostTrainConfig,
) -> Result<PostTrainOutput<T>, ModelError> {
    assert!(!suite.is_empty());
    let mut experts: HashMap<u64, Expert<'_>> = HashMap::new();
    let mut dataset: Vec<PolicyExample<T>> = demos.to_vec();
    let mut output = PostTrainOutput::default();
    let rollout_cfg = RolloutConfig {
        mix_p: cfg.mix_p,
        epsilon: cfg.epsilon,
        max_steps: cfg.max_steps,
    };
    let mut goals = 0usize;
    for iter in 0..cfg.iters {
        let mut round = RelabeledData::default();
        let mut pick_rng = derived_rng(cfg.seed, &[iter as u64, 0x7A5C]);
        for n in 0..cfg.n_traj {
            let task = &suite[pick_rng.gen_range(0..suite.len())];
            let expert = experts
                .entry(task.task_id)
                .or_insert_with(|| Expert::new(task));
            let mut rng = derived_rng(cfg.seed, &[iter as u64, n as u64]);
            let record = rollout(policy, expert, task, &rollout_cfg, &mut rng);
            goals += usize::from(record.reached_goal);
            round.extend(relabel(&record, cfg.horizon));
            output.stats.rollouts += 1;
        }
        output.stats.propose_examples += round.propose.len();
        output.stats.reflect_examples += round.reflect.len();
        output.critic_data.extend(round.critic.clone());
        output.trigger_data.extend(round.trigger.clone());
        dataset.extend(round.policy_examples());
        output.stats.dataset_sizes.push(dataset.len());
        let mut opts = cfg.train;
        opts.seed = derive_seed(cfg.train.seed, &[iter as u64]);
        let curve = policy.train(&dataset, opts)?;
        output.stats.loss_curves.push(curve);
    }
    output.stats.goal_rate = goals as f64 / output.stats.rollouts.max(1) as f64;
    Ok(output)
}

/// Expert demonstrations for base-policy pretraining: expert-only
/// rollouts (`mix_p = 0`) relabeled into propose examples. The critic
/// examples from the same records are returned too, as anchor data.
pub fn collect_demos<T: Scalar>(
    policy: &PolicyModel<T>,
    suite: &[TaskInstance],
    epsilon: f64,
    horizon: usize,
    max_steps: u32,
    seed: u64,
) -> (Vec<PolicyExample<T>>, Vec<CriticExample<T>>) {
    let cfg = RolloutConfig {
        mix_p: 0.0,
        epsilon,
        max_steps,
    };
    let mut propose = Vec::new();
    let mut critic = Vec::new();
    for (i, task) in suite.iter().enumerate() {
        let expert = Expert::new(task);
        let mut rng = derived_rng(seed, &[0xDE30, i as u64]);
        let record = rollout(policy, &expert, task, &cfg, &mut rng);
        let data = relabel(&record, horizon);
        propose.extend(data.propose);
        critic.extend(data.critic);
    }
    (propose, critic)
}

const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct CriticLine {
    v: u32,
    obs_t: Vec<f64>,
    obs_pred: Vec<f64>,
    obs_g: Vec<f64>,
    label: f64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TriggerLine {
    v: u32,
    hidden: Vec<f64>,
    label: u8,
}

/// Critic dataset as JSONL, one example per line, schema-versioned.
pub fn write_critic_jsonl<T: Scalar>(
    path: &std::path::Path,
    data: &[CriticExample<T>],
) -> std::io::Result<()> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in data {
        let line = CriticLine {
            v: DATASET_SCHEMA_VERSION,
            obs_t: ex.obs_t.as_slice().iter().map(|x| x.to_f64_lossy()).collect(),
            obs_pred: ex.obs_pred.as_slice().iter().map(|x| x.to_f64_lossy()).collect(),
            obs_g: ex.obs_g.as_slice().iter().map(|x| x.to_f64_lossy()).collect(),
            label: ex.label,
        };
        serde_json::to_writer(&mut file, &line)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_critic_jsonl<T: Scalar>(
    path: &std::path::Path,
) -> std::io::Result<Vec<CriticExample<T>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: CriticLine = serde_json::from_str(line)?;
        let conv = |v: Vec<f64>| Observation(v.into_iter().map(T::from_f64_lossy).collect());
        out.push(CriticExample {
            obs_t: conv(row.obs_t),
            obs_pred: conv(row.obs_pred),
            obs_g: conv(row.obs_g),
            label: row.label,
        });
    }
    Ok(out)
}

/// Trigger dataset as JSONL, one example per line, schema-versioned.
pub fn write_trigger_jsonl<T: Scalar>(
    path: &std::path::Path,
    data: &[TriggerExample<T>],
) -> std::io::Result<()> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in data {
        let line = TriggerLine {
            v: DATASET_SCHEMA_VERSION,
            hidden: ex.hidden.iter().map(|x| x.to_f64_lossy()).collect(),
            label: u8::from(ex.label),
        };
        serde_json::to_writer(&mut file, &line)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trigger_jsonl<T: Scalar>(
    path: &std::path::Path,
) -> std::io::Result<Vec<TriggerExample<T>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: TriggerLine = serde_json::from_str(line)?;
        out.push(TriggerExample {
            hidden: row.hidden.into_iter().map(T::from_f64_lossy).collect(),
            label: row.label != 0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_task, TaskParams, OBS_LEN};
    use crate::policy::PolicyShape;

    fn task(seed: u64) -> TaskInstance {
        generate_task(
            seed,
            &TaskParams {
                pieces: 3,
                dep_density: 0.5,
                orient_frac: 0.5,
                misplace_prob: 0.3,
            },
        )
        .unwrap()
    }

    fn policy() -> PolicyModel<f64> {
        PolicyModel::random(
            PolicyShape {
                obs_len: OBS_LEN,
                hidden: 16,
                horizon: 3,
            },
            9,
        )
    }

    fn cfg(mix_p: f64, epsilon: f64) -> RolloutConfig {
        RolloutConfig {
            mix_p,
            epsilon,
            max_steps: 40,
        }
    }

    #[test]
    fn pure_expert_rollout_is_optimal() {
        let task = task(1);
        let expert = Expert::new(&task);
        let policy = policy();
        let mut rng = crate::seeding::root_rng(0);
        let record = rollout(&policy, &expert, &task, &cfg(0.0, 0.0), &mut rng);
        assert!(record.reached_goal);
        assert_eq!(record.steps.len() as u32, record.initial_distance);
        for step in &record.steps {
            assert_eq!(step.executed, step.expert_action);
        }
        // Distances descend one per executed expert step.
        for (t, step) in record.steps.iter().enumerate() {
            assert_eq!(step.dist, record.initial_distance - t as u32);
        }
    }

    #[test]
    fn pure_learner_rollout_executes_proposals() {
        let task = task(2);
        let expert = Expert::new(&task);
        let policy = policy();
        let mut rng = crate::seeding::root_rng(1);
        let record = rollout(&policy, &expert, &task, &cfg(1.0, 0.0), &mut rng);
        assert!(!record.steps.is_empty());
        for step in &record.steps {
            assert_eq!(step.executed, step.learner);
        }
    }

    #[test]
    fn rollouts_respect_the_budget() {
        for seed in 0..10 {
            let task = task(seed);
            let expert = Expert::new(&task);
            let policy = policy();
            let mut rng = crate::seeding::root_rng(seed);
            let record = rollout(&policy, &expert, &task, &cfg(0.8, 0.1), &mut rng);
            let budget = 40u32.min(4 * record.initial_distance + 8);
            assert!(record.steps.len() as u32 <= budget);
        }
    }

    #[test]
    fn relabel_windows_and_sizes() {
        let task = task(3);
        let expert = Expert::new(&task);
        let policy = policy();
        let mut rng = crate::seeding::root_rng(2);
        let record = rollout(&policy, &expert, &task, &cfg(0.0, 0.0), &mut rng);
        let h = 3usize;
        let data = relabel(&record, h);
        let len = record.steps.len();
        assert_eq!(data.propose.len(), len);
        assert_eq!(data.trigger.len(), len);
        assert_eq!(data.reflect.len(), len.saturating_sub(h));
        assert_eq!(data.critic.len(), len.saturating_sub(h));
        // All-expert record with no failures: every windowed advantage is
        // exactly H.
        for ex in &data.critic {
            assert_eq!(ex.label, h as f64);
        }
        for ex in &data.reflect {
            assert_eq!(ex.ctx.advantage, h as f64);
            assert_eq!(ex.ctx.plan.len(), h);
        }
        // Cross-check: relabeled advantages equal the recorded oracle
        // distance differences.
        for (t, ex) in data.critic.iter().enumerate() {
            let expected =
                i64::from(record.steps[t].dist) - i64::from(record.steps[t + h].dist);
            assert_eq!(ex.label, expected as f64);
        }
    }

    #[test]
    fn short_records_have_no_windowed_examples() {
        let task = task(4);
        let expert = Expert::new(&task);
        let policy = policy();
        let mut rng = crate::seeding::root_rng(3);
        let record = rollout(&policy, &expert, &task, &cfg(0.0, 0.0), &mut rng);
        let h = record.steps.len(); // horizon longer than the episode
        let data = relabel(&record, h + 1);
        assert!(data.reflect.is_empty());
        assert!(data.critic.is_empty());
        assert!(!data.propose.is_empty());
        assert!(!data.trigger.is_empty());
    }

    #[test]
    fn trigger_labels_mark_expert_matches() {
        let task = task(5);
        let expert = Expert::new(&task);
        let policy = policy();
        let mut rng = crate::seeding::root_rng(4);
        let record = rollout(&policy, &expert, &task, &cfg(0.5, 0.0), &mut rng);
        let data = relabel(&record, 3);
        for (step, ex) in record.steps.iter().zip(data.trigger.iter()) {
            assert_eq!(ex.label, step.learner == step.expert_action);
        }
    }

    #[test]
    fn posttrain_accumulates_and_is_reproducible() {
        let tasks: Vec<TaskInstance> = (0..5).map(task).collect();
        let demos: Vec<PolicyExample<f64>> = {
            let (d, _) = collect_demos(&policy(), &tasks, 0.0, 3, 40, 7);
            d
        };
        let cfg = PostTrainConfig {
            iters: 2,
            n_traj: 4,
            mix_p: 0.5,
            epsilon: 0.05,
            horizon: 3,
            max_steps: 40,
            train: PolicyTrainOpts {
                epochs: 2,
                batch_size: 16,
                learning_rate: 1e-3,
                seed: 11,
            },
            seed: 100,
        };
        let mut a = policy();
        let out_a = posttrain(&mut a, &demos, &tasks, &cfg).unwrap();
        let mut b = policy();
        let out_b = posttrain(&mut b, &demos, &tasks, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(out_a.stats.dataset_sizes, out_b.stats.dataset_sizes);
        // Monotone dataset growth across iterations.
        assert!(out_a.stats.dataset_sizes.windows(2).all(|w| w[0] <= w[1]));
        assert!(out_a.stats.dataset_sizes[0] >= demos.len());
        assert_eq!(
            out_a.stats.propose_examples + demos.len() + out_a.stats.reflect_examples,
            *out_a.stats.dataset_sizes.last().unwrap()
        );
        assert!(!out_a.critic_data.is_empty());
        assert!(!out_a.trigger_data.is_empty());
    }
}
