//! Cluster-aligned motion generation from demonstrations.
//!
//! Demonstrations are clustered into mean trajectories ([`clustering`]). At
//! run time an HMM tracks how far along each mean the agent is
//! ([`alignment`]), and a normalised-gradient controller follows the most
//! likely cluster ([`controller`]). [`sim`] drives rollouts and evaluation.

pub mod alignment;
pub mod clustering;
pub mod controller;
pub mod error;
pub mod sim;
pub mod trajectory;

pub use alignment::{AlignmentState, KernelFamily, TransitionKernel};
pub use clustering::{fit, ClusterConfig, ClusterCount, ClusterModel, ModelMeta};
pub use controller::{Controller, ControllerConfig, KernelConfig};
pub use error::{CalmError, Result};
pub use sim::{evaluate, rollout, PerturbationEvent, RolloutConfig, RolloutEngine, RolloutResult};
pub use trajectory::{Dataset, MeanTrajectory, Trajectory};
