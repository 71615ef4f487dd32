//! Dual-pathway spectrogram transformer for binaural azimuth estimation.
//!
//! * [`model`]: patch embedding, ear and central encoders, integration.
//! * [`losses`]: squared-error, angular and hybrid objectives.
//! * [`metrics`]: evaluation tables and hemifield statistics.
//! * [`rollout`]: attention rollout and heat-map export.
//! * [`trainer`]: training loop, experiment grid, environment transfer.

pub mod config;
pub mod data;
mod error;
mod hash;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rollout;
pub mod trainer;

pub use config::{patch_counts, Integration, ModelConfig, PatchGrid, Sharing};
pub use data::Sample;
pub use error::{CoreError, Result};
pub use losses::{LossConfig, LossKind};
pub use model::BastModel;
pub use trainer::{train, ExperimentConfig, TrainLog};
