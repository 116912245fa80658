//! Joint diffusion sampling over an SDF grid and a multi-view image set,
//! with each domain's denoiser steered by the other's current estimate.
//!
//! The learned denoisers are replaced by analytic oracles so every stage
//! of the pipeline (noising, guidance, rendering, distillation and score
//! refinement) can be checked against closed-form answers.

pub mod config;
pub mod dataset;
pub mod denoisers;
pub mod distill;
pub mod error;
pub mod geometry;
pub mod io;
pub mod lattice;
pub mod metrics;
pub mod pipeline;
pub mod priors;
pub mod projection;
pub mod render;
pub mod sampler;
pub mod scheduler;
pub mod selftest;
pub mod stages;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
