//! Detection of stereotypical motor movements (SMM) in multi-channel IMU streams.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`rng`]: dense `f64` tensors and the seeded generator.
//! - [`layers`] and [`lstm`]: layers with hand-written backward passes.
//! - [`optim`]: parameter sets, SGD with momentum, RMSProp, parameter files.
//! - [`signal`] and [`dataio`]: filtering, resampling, windowing, CSV ingestion,
//!   synthetic recordings, balancing and leave-one-subject-out splits.
//! - [`models`]: the three-layer CNN and the CNN+LSTM built on it.
//! - [`experiments`]: metrics, linear baselines, transfer, the best-b ensemble
//!   and Fisher separability scores.

pub mod dataio;
pub mod error;
pub mod experiments;
pub mod layers;
pub mod lstm;
pub mod models;
pub mod optim;
pub mod rng;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use optim::ParamSet;
pub use rng::Rng;
pub use tensor::Tensor;
