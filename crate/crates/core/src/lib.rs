//! Residual refinement of multi-person 3D poses with a permutation-invariant
//! set-attention interaction embedding.

pub mod analysis;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use model::{InteractionMode, ModelConfig, RefinerModel};
pub use scene::{Pose, Scene};
