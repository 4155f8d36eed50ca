//! Shared checkpoint container.
//!
//! One versioned JSON file holds the policy, critic, and trigger
//! parameters (stored as f64 decimals, which round-trip bit-exactly)
//! plus the calibrated early-exit threshold. Sections are independent so
//! each training stage updates only its own.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{CriticModel, CriticShape};
use crate::policy::{PolicyModel, PolicyShape};
use crate::scalar::Scalar;
use crate::trigger::{TriggerModel, TriggerShape};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint schema version {0} unsupported")]
    SchemaVersion(u32),
    #[error("checkpoint has no {0} section")]
    MissingSection(&'static str),
    #[error("parameter count mismatch in {section}")]
    BadShape { section: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub obs_len: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticCheckpoint {
    pub obs_len: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TriggerCheckpoint {
    pub input: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(default)]
    pub v: u32,
    #[serde(default)]
    pub policy: Option<PolicyCheckpoint>,
    #[serde(default)]
    pub critic: Option<CriticCheckpoint>,
    #[serde(default)]
    pub trigger: Option<TriggerCheckpoint>,
    #[serde(default)]
    pub tau: Option<f64>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint {
            v: CHECKPOINT_SCHEMA_VERSION,
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.v != CHECKPOINT_SCHEMA_VERSION {
            return Err(CheckpointError::SchemaVersion(ckpt.v));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn set_policy<T: Scalar>(&mut self, model: &PolicyModel<T>) {
        let shape = model.shape();
        self.policy = Some(PolicyCheckpoint {
            obs_len: shape.obs_len,
            hidden: shape.hidden,
            horizon: shape.horizon,
            params: model.params().iter().map(|p| p.to_f64_lossy()).collect(),
        });
    }

    pub fn policy_model<T: Scalar>(&self) -> Result<PolicyModel<T>, CheckpointError> {
        let section = self
            .policy
            .as_ref()
            .ok_or(CheckpointError::MissingSection("policy"))?;
        let shape = PolicyShape {
            obs_len: section.obs_len,
            hidden: section.hidden,
            horizon: section.horizon,
        };
        let params = section.params.iter().map(|&p| T::from_f64_lossy(p)).collect();
        PolicyModel::from_params(shape, params)
            .map_err(|_| CheckpointError::BadShape { section: "policy" })
    }

    pub fn set_critic<T: Scalar>(&mut self, model: &CriticModel<T>) {
        let shape = model.shape();
        self.critic = Some(CriticCheckpoint {
            obs_len: shape.obs_len,
            hidden: shape.hidden,
            params: model.params().iter().map(|p| p.to_f64_lossy()).collect(),
        });
    }

    pub fn critic_model<T: Scalar>(&self) -> Result<CriticModel<T>, CheckpointError> {
        let section = self
            .critic
            .as_ref()
            .ok_or(CheckpointError::MissingSection("critic"))?;
        let shape = CriticShape {
            obs_len: section.obs_len,
            hidden: section.hidden,
        };
        let params = section.params.iter().map(|&p| T::from_f64_lossy(p)).collect();
        CriticModel::from_params(shape, params)
            .map_err(|_| CheckpointError::BadShape { section: "critic" })
    }

    pub fn set_trigger<T: Scalar>(&mut self, model: &TriggerModel<T>) {
        let shape = model.shape();
        self.trigger = Some(TriggerCheckpoint {
            input: shape.input,
            hidden: shape.hidden,
            params: model.params().iter().map(|p| p.to_f64_lossy()).collect(),
        });
    }

    pub fn trigger_model<T: Scalar>(&self) -> Result<TriggerModel<T>, CheckpointError> {
        let section = self
            .trigger
            .as_ref()
            .ok_or(CheckpointError::MissingSection("trigger"))?;
        let shape = TriggerShape {
            input: section.input,
            hidden: section.hidden,
        };
        let params = section.params.iter().map(|&p| T::from_f64_lossy(p)).collect();
        TriggerModel::from_params(shape, params)
            .map_err(|_| CheckpointError::BadShape { section: "trigger" })
    }
}
