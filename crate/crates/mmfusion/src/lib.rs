//! Desk-scale dual-branch multimodal transformer classifier.
//!
//! Two single-stream transformer branches consume an image/text-pair input
//! (title + caption + patch tokens in one sequence); their pooled outputs
//! are fused and classified through a multi-sample dropout head. Everything
//! runs on a from-scratch f64 tensor engine with reverse-mode autodiff, so
//! the whole pipeline is gradient-checkable against finite differences and
//! bitwise reproducible under fixed seeds.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod layers;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
