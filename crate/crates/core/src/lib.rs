//! Half-truth audio deepfake detection at desk scale.
//!
//! The pipeline runs synthetic corpus generation ([`corpus`]), cepstral and
//! chroma feature extraction ([`features`]), the CAFNet and MFAAN models
//! ([`models`]), training with the composite loss ([`training`]) and the
//! evaluation protocol ([`metrics`]).

pub mod corpus;
mod error;
pub mod features;
pub mod metrics;
pub mod models;
pub mod training;

pub use error::{CoreError, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SECONDS: f64 = 4.0;
pub const CLIP_SAMPLES: usize = 64_000;
