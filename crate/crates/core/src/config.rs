//! Experiment configuration.
//!
//! One JSON file drives every CLI subcommand; any field may be omitted
//! and falls back to the desk-scale defaults below. CLI flags override
//! individual keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ImaginationConfig, ImaginationMode};
use crate::env::SuiteParams;
use crate::reflect::ReflectConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub v: u32,
    pub tasks: TasksSection,
    pub env: EnvSection,
    pub policy: PolicySection,
    pub posttrain: PostTrainSection,
    pub critic: CriticSection,
    pub trigger: TriggerSection,
    pub dynamics: DynamicsSection,
    pub reflect: ReflectConfig,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TasksSection {
    pub train: SuiteParams,
    pub eval: SuiteParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    /// Action failure rate during execution.
    pub epsilon: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySection {
    pub hidden: usize,
    pub horizon: usize,
    pub bc_epochs: usize,
    pub posttrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PostTrainSection {
    pub iters: usize,
    pub n_traj: usize,
    pub mix_p: f64,
    pub max_steps: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticSection {
    pub hidden: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub patience: usize,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerSection {
    pub hidden: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub patience: usize,
    pub weight_decay: f64,
    /// Calibration target: minimum recall on incorrect proposals.
    pub min_recall_incorrect: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsSection {
    pub mode: ImaginationMode,
    pub obs_noise: f64,
    pub transition_noise: f64,
}

impl DynamicsSection {
    pub fn to_config(&self, seed: u64) -> ImaginationConfig {
        ImaginationConfig {
            mode: self.mode,
            obs_noise: self.obs_noise,
            transition_noise: self.transition_noise,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub repetitions: u32,
    /// Episode budget = min(max_steps, budget_factor * d0 + budget_slack).
    pub budget_factor: u32,
    pub budget_slack: u32,
    pub max_steps: u32,
    /// Early-exit threshold; overwritten by calibration.
    pub tau: f64,
    /// Mode labels evaluated by `eval` (see harness::AgentMode::parse).
    pub modes: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            v: CONFIG_SCHEMA_VERSION,
            tasks: TasksSection::default(),
            env: EnvSection::default(),
            policy: PolicySection::default(),
            posttrain: PostTrainSection::default(),
            critic: CriticSection::default(),
            trigger: TriggerSection::default(),
            dynamics: DynamicsSection::default(),
            reflect: ReflectConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for TasksSection {
    fn default() -> Self {
        TasksSection {
            train: SuiteParams {
                base_seed: 1_000,
                count: 200,
                variants: 3,
                pieces_min: 3,
                pieces_max: 6,
                dep_density: 0.35,
                orient_frac: 0.5,
                misplace_prob: 0.35,
            },
            eval: SuiteParams {
                base_seed: 500_000,
                count: 100,
                variants: 1,
                pieces_min: 3,
                pieces_max: 6,
                dep_density: 0.35,
                orient_frac: 0.5,
                misplace_prob: 0.35,
            },
        }
    }
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { epsilon: 0.05 }
    }
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            hidden: 64,
            horizon: 5,
            bc_epochs: 40,
            posttrain_epochs: 25,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

impl Default for PostTrainSection {
    fn default() -> Self {
        PostTrainSection {
            iters: 1,
            n_traj: 300,
            mix_p: 0.5,
            max_steps: 60,
        }
    }
}

impl Default for CriticSection {
    fn default() -> Self {
        CriticSection {
            hidden: 64,
            max_epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            patience: 10,
            weight_decay: 1e-3,
        }
    }
}

impl Default for TriggerSection {
    fn default() -> Self {
        TriggerSection {
            hidden: 64,
            max_epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            patience: 10,
            weight_decay: 1e-3,
            min_recall_incorrect: 0.7,
        }
    }
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            mode: ImaginationMode::Corrupted,
            obs_noise: 0.1,
            transition_noise: 0.05,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            repetitions: 1,
            budget_factor: 4,
            budget_slack: 8,
            max_steps: 80,
            tau: 0.5,
            modes: vec![
                "bc".into(),
                "single-traj".into(),
                "best-of-n".into(),
                "majority-vote".into(),
                "multi-path".into(),
                "multi-path-trigger".into(),
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, crate::env::EnvError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), crate::env::EnvError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"env": {"epsilon": 0.2}}"#).unwrap();
        assert_eq!(cfg.env.epsilon, 0.2);
        assert_eq!(cfg.policy.hidden, 64);
        assert_eq!(cfg.reflect.horizon, 5);
        assert_eq!(cfg.tasks.eval.count, 100);
    }

    #[test]
    fn roundtrip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn train_and_eval_seed_ranges_are_disjoint_by_default() {
        let cfg = ExperimentConfig::default();
        let train_end = cfg.tasks.train.base_seed + u64::from(cfg.tasks.train.count);
        assert!(train_end <= cfg.tasks.eval.base_seed);
    }
}
