//! Toolkit for sewer-inspection detection pipelines that work on unrolled
//! pipe mosaics (wide W x 1200 px images produced by cylindrical unwrapping).
//!
//! The crate covers the non-neural machinery around a detector:
//!
//! - [`domain`]: the shared vocabulary (defect taxonomy, pixel boxes,
//!   mosaic geometry, detections and annotations).
//! - [`tiler`]: sliding-window tiling of mosaics into network-sized patches,
//!   label clipping, frame transforms and flip augmentation.
//! - [`postproc`]: confidence filtering, connected-component merging, NMS,
//!   minimum-cost assignment, cylindrical seam stitching and a declarative
//!   expert rule engine.
//! - [`metrics`]: the running-meter chunk metric, object-level matching,
//!   per-class precision/recall, 101-point average precision and severity
//!   reporting for missed annotations.
//! - [`synth`]: seeded synthetic pipes, a configurable detector simulator
//!   and a PPM overlay renderer for visual inspection.
//! - [`formats`]: the JSON interchange document and training manifest.
//!
//! Everything is deterministic: all randomness flows from explicit seeds via
//! the derivation in [`seed`], and all iteration orders are fixed.

pub mod domain;
pub mod formats;
pub mod metrics;
pub mod postproc;
pub mod seed;
pub mod synth;
pub mod tiler;

pub use domain::{
    axial_overlap_ratio, enclosing_box, iou, Annotation, CylindricalSpan, DefectClass, Detection,
    DomainError, Material, MosaicGeometry, PixelBox, Severity,
};
