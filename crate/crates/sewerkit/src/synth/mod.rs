//! Synthetic fixtures: seeded pipe generation, detector simulation with
//! dialled-in failure modes, and overlay rendering.
//!
//! Everything here is geometry-first: pipes are boxes with known statistics,
//! not pixels, so the rest of the toolkit can be tested against exact
//! oracles. Rendering is a decoupled, deterministic visualization on top.

pub mod detector;
pub mod generate;
pub mod render;

use thiserror::Error;

pub use detector::{simulate_detector, DetectorProfile};
pub use generate::{generate_pipe, ClusterParams, PipeSpec, SeverityModel};
pub use render::{render_overlay, RasterImage, RenderOptions};

use crate::domain::DomainError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid pipe spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("invalid detector profile: {reason}")]
    InvalidProfile { reason: String },
    #[error("invalid render options: {reason}")]
    InvalidRender { reason: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}
