//! End-to-end training pipeline built from the experiment config:
//! demonstrations -> base policy -> interactive post-training -> critic,
//! trigger, and threshold calibration. The CLI subcommands and the
//! acceptance suite both drive these helpers so they stay in lockstep.

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::critic::{CriticExample, CriticModel, CriticShape, CriticTrainOpts, CriticTrainReport};
use crate::dagger::{collect_demos, posttrain, PostTrainConfig, PostTrainOutput};
use crate::env::{TaskInstance, OBS_LEN};
use crate::harness::EpisodeOpts;
use crate::nn::ModelError;
use crate::policy::{PolicyExample, PolicyModel, PolicyShape, PolicyTrainOpts};
use crate::scalar::Scalar;
use crate::seeding::derive_seed;
use crate::trigger::{TriggerExample, TriggerModel, TriggerShape, TriggerTrainOpts, TriggerTrainReport};

pub fn policy_shape(cfg: &ExperimentConfig) -> PolicyShape {
    PolicyShape {
        obs_len: OBS_LEN,
        hidden: cfg.policy.hidden,
        horizon: cfg.policy.horizon,
    }
}

/// Collect expert demonstrations on the training suite and fit the base
/// policy on them. Returns the policy, the demonstration propose
/// examples (the accumulated dataset's seed), and anchor critic data.
pub fn pretrain_bc<T: Scalar>(
    cfg: &ExperimentConfig,
    suite: &[TaskInstance],
    seed: u64,
) -> Result<(PolicyModel<T>, Vec<PolicyExample<T>>, Vec<CriticExample<T>>), ModelError> {
    let mut policy = PolicyModel::random(policy_shape(cfg), derive_seed(seed, &[0x1217]));
    let (demos, critic_anchor) = collect_demos(
        &policy,
        suite,
        cfg.env.epsilon,
        cfg.policy.horizon,
        cfg.posttrain.max_steps,
        derive_seed(seed, &[0xDE30]),
    );
    let curve = policy.train(
        &demos,
        PolicyTrainOpts {
            epochs: cfg.policy.bc_epochs,
            batch_size: cfg.policy.batch_size,
            learning_rate: cfg.policy.learning_rate,
            seed: derive_seed(seed, &[0xBC]),
        },
    )?;
    if std::env::var("VGPLAN_TRACE").is_ok() {
        eprintln!(
            "bc loss: first {:.4} last {:.4}",
            curve.first().copied().unwrap_or(f64::NAN),
            curve.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok((policy, demos, critic_anchor))
}

/// One (or more) rounds of interactive post-training on the accumulated
/// dataset.
pub fn run_posttrain<T: Scalar>(
    cfg: &ExperimentConfig,
    policy: &mut PolicyModel<T>,
    demos: &[PolicyExample<T>],
    suite: &[TaskInstance],
    seed: u64,
) -> Result<PostTrainOutput<T>, ModelError> {
    let pt = PostTrainConfig {
        iters: cfg.posttrain.iters,
        n_traj: cfg.posttrain.n_traj,
        mix_p: cfg.posttrain.mix_p,
        epsilon: cfg.env.epsilon,
        horizon: cfg.policy.horizon,
        max_steps: cfg.posttrain.max_steps,
        train: PolicyTrainOpts {
            epochs: cfg.policy.posttrain_epochs,
            batch_size: cfg.policy.batch_size,
            learning_rate: cfg.policy.learning_rate,
            seed: derive_seed(seed, &[0xF7]),
        },
        seed: derive_seed(seed, &[0xDA66]),
    };
    posttrain(policy, demos, suite, &pt)
}

pub fn train_critic_from<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &[CriticExample<T>],
    seed: u64,
) -> Result<(CriticModel<T>, CriticTrainReport), ModelError> {
    let mut critic = CriticModel::random(
        CriticShape {
            obs_len: OBS_LEN,
            hidden: cfg.critic.hidden,
        },
        derive_seed(seed, &[0xC1]),
    );
    let report = critic.train(
        data,
        CriticTrainOpts {
            max_epochs: cfg.critic.max_epochs,
            batch_size: cfg.critic.batch_size,
            learning_rate: cfg.critic.learning_rate,
            val_fraction: cfg.critic.val_fraction,
            patience: cfg.critic.patience,
            label_clip: 2.0 * cfg.policy.horizon as f64,
            weight_decay: cfg.critic.weight_decay,
            seed: derive_seed(seed, &[0xC2]),
        },
    )?;
    Ok((critic, report))
}

pub fn train_trigger_from<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &[TriggerExample<T>],
    seed: u64,
) -> Result<(TriggerModel<T>, TriggerTrainReport), ModelError> {
    let mut trigger = TriggerModel::random(
        TriggerShape {
            input: cfg.policy.hidden,
            hidden: cfg.trigger.hidden,
        },
        derive_seed(seed, &[0x76]),
    );
    let report = trigger.train(
        data,
        TriggerTrainOpts {
            pos_weight: None,
            max_epochs: cfg.trigger.max_epochs,
            batch_size: cfg.trigger.batch_size,
            learning_rate: cfg.trigger.learning_rate,
            val_fraction: cfg.trigger.val_fraction,
            patience: cfg.trigger.patience,
            weight_decay: cfg.trigger.weight_decay,
            seed: derive_seed(seed, &[0x77]),
        },
    )?;
    Ok((trigger, report))
}

/// Calibrate the early-exit threshold on the validation slice of the
/// trigger data (same seeded split as training when the same seed is
/// passed).
pub fn calibrate_tau<T: Scalar>(
    cfg: &ExperimentConfig,
    trigger: &TriggerModel<T>,
    data: &[TriggerExample<T>],
    seed: u64,
) -> Result<f64, ModelError> {
    let mut rng = crate::seeding::root_rng(derive_seed(seed, &[0x77]));
    let (_, val_idx) = crate::nn::split_validation(data.len(), cfg.trigger.val_fraction, &mut rng);
    let val: Vec<&TriggerExample<T>> = val_idx.iter().map(|&i| &data[i]).collect();
    trigger.calibrate_threshold(&val, cfg.trigger.min_recall_incorrect)
}

/// Episode options for evaluation under this config.
pub fn episode_opts(cfg: &ExperimentConfig, tau: f64, dynamics_seed: u64) -> EpisodeOpts {
    EpisodeOpts {
        epsilon: cfg.env.epsilon,
        tau,
        budget_factor: cfg.eval.budget_factor,
        budget_slack: cfg.eval.budget_slack,
        max_steps: cfg.eval.max_steps,
        reflect: cfg.reflect,
        dynamics: cfg.dynamics.to_config(dynamics_seed),
    }
}

/// Bundle of everything one full pipeline run produces.
pub struct PipelineArtifacts<T> {
    pub base_policy: PolicyModel<T>,
    pub policy: PolicyModel<T>,
    pub critic: CriticModel<T>,
    pub trigger: TriggerModel<T>,
    pub tau: f64,
    pub critic_report: CriticTrainReport,
    pub trigger_report: TriggerTrainReport,
    pub critic_data_len: usize,
    pub trigger_data_len: usize,
}

impl<T: Scalar> PipelineArtifacts<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        ckpt.set_policy(&self.policy);
        ckpt.set_critic(&self.critic);
        ckpt.set_trigger(&self.trigger);
        ckpt.tau = Some(self.tau);
        ckpt
    }
}

/// The full desk-scale protocol: pretrain, one interactive round, critic
/// and trigger fits, threshold calibration.
pub fn run_full_pipeline<T: Scalar>(
    cfg: &ExperimentConfig,
    train_suite: &[TaskInstance],
    seed: u64,
) -> Result<PipelineArtifacts<T>, ModelError> {
    let (mut policy, demos, critic_anchor) = pretrain_bc::<T>(cfg, train_suite, seed)?;
    let base_policy = policy.clone();
    let output = run_posttrain(cfg, &mut policy, &demos, train_suite, seed)?;
    let mut critic_data = critic_anchor;
    critic_data.extend(output.critic_data);
    let (critic, critic_report) = train_critic_from(cfg, &critic_data, seed)?;
    let (trigger, trigger_report) = train_trigger_from(cfg, &output.trigger_data, seed)?;
    let tau = calibrate_tau(cfg, &trigger, &output.trigger_data, seed)?;
    Ok(PipelineArtifacts {
        base_policy,
        policy,
        critic,
        trigger,
        tau,
        critic_report,
        trigger_report,
        critic_data_len: critic_data.len(),
        trigger_data_len: output.trigger_data.len(),
    })
}
