//! Emotion-intensity-guided masking for self-supervised speech
//! pre-training at desk scale.
//!
//! The pipeline runs: [`corpus`] (synthetic emotional speech with frame-level
//! intensity ground truth) → [`intensity`] (per-frame intensity scores) →
//! [`masking`] (intensity-ranked frame masks and masked-convolution kernel
//! masks) → [`models`] / [`training`] (transformer and masked-convolution
//! encoders trained on the composite objective) → [`probes`] (frozen
//! representation evaluation), all driven by the [`cli`].

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod intensity;
pub mod masking;
pub mod models;
pub mod nn;
pub mod params;
pub mod probes;
pub mod rng;
pub mod stats;
pub mod training;

pub use error::{EmsError, Result};
