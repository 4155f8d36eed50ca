//! Value-guided multi-path reflective planning for multi-stage assembly.
//!
//! The crate bundles a symbolic assembly-puzzle environment, an exact
//! expert oracle, a trainable token-level action policy, a forward model
//! for imagination, an advantage critic, a confidence trigger for early
//! exit, a multi-path reflection engine with divergence-gated decoding
//! aggregation, an interactive post-training loop, and the evaluation
//! harness that ties the pieces together.
//!
//! All numeric code is generic over [`scalar::Scalar`]; the `*64` aliases
//! below pin the default f64 instantiations used by the CLI.

pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod dagger;
pub mod dynamics;
pub mod env;
pub mod expert;
pub mod harness;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod reflect;
pub mod scalar;
pub mod seeding;
pub mod trigger;

pub use scalar::Scalar;

pub type Observation64 = env::Observation<f64>;
pub type Policy64 = policy::PolicyModel<f64>;
pub type Critic64 = critic::CriticModel<f64>;
pub type Trigger64 = trigger::TriggerModel<f64>;
pub type Trajectory64 = reflect::ImaginedTrajectory<f64>;
pub type Observation32 = env::Observation<f32>;
pub type Policy32 = policy::PolicyModel<f32>;
pub type Critic32 = critic::CriticModel<f32>;
pub type Trigger32 = trigger::TriggerModel<f32>;
