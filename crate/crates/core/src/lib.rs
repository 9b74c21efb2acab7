//! Self-adversarial feature purification for domain-generalized gaze estimation.
//!
//! A shared backbone feeds a gaze head (cooperative task) and an SA-Module
//! decoder (adversarial task). The decoder learns to reconstruct the input;
//! the backbone learns to keep gaze while defeating the reconstruction, which
//! strips gaze-irrelevant content such as illumination and identity from
//! its features.

pub mod attention;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod layers;
pub mod losses;
pub mod manifest;
pub mod models;
pub mod optim;
pub mod pixels;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
