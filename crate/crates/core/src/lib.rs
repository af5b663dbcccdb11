//! Sparse-view relightable reconstruction with per-pixel 3D Gaussians.
//!
//! A geometry transformer regresses pixel-aligned Gaussians from posed
//! images, and a second transformer stack denoises relit views under a
//! target HDR environment map by predicting spherical-harmonics appearance
//! and rendering it through a differentiable splatting renderer.

pub mod backbone;
pub mod cameras;
pub mod config;
pub mod data_synth;
pub mod diffusion;
pub mod error;
pub mod gaussians;
pub mod io;
pub mod math;
pub mod model;
pub mod real;
pub mod renderer;
pub mod rng;
pub mod tensor;
pub mod tokenization;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Mat;
