//! Differentiable physically-based texture rendering and score-distillation
//! optimization.
//!
//! The crate is organized bottom-up:
//!
//! - [`gradtape`]: reverse-mode differentiation over image tensors.
//! - [`assets`]: OBJ, Radiance HDR, PNG and EXR I/O plus bundled assets.
//! - [`render`]: software rasterizer and split-sum image-based shading with
//!   texture-space gradients.
//! - [`score`]: noise schedules and epsilon-prediction models (closed-form
//!   toy models and a TCP client for remote models).
//! - [`sds`]: score-distillation gradients, texture parameterizations, Adam and
//!   the two-stage optimization loop.
//! - [`analysis`]: scripted toy experiments and spectral measurements.
//! - [`cli`]: configuration and subcommand dispatch for the `texdistill` binary.

pub mod analysis;
pub mod assets;
pub mod cli;
pub mod gradtape;
pub mod math;
pub mod render;
pub mod score;
pub mod sds;
