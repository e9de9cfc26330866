//! Shared vocabulary: defect taxonomy, pixel-box geometry, mosaic metadata,
//! detections and annotations.
//!
//! Conventions used throughout the crate:
//!
//! - Mosaics are unrolled pipe images, `width_px` x `height_px` (height is
//!   1200 px for the standard capture rig). The x axis runs along the pipe
//!   axis, the y axis around the circumference. Row 0 and row `height - 1`
//!   are the two sides of the cylindrical cut at the pipe ceiling.
//! - Boxes are integer pixel rectangles, half-open on both axes:
//!   `[x, x + w) x [y, y + h)` with `w > 0` and `h > 0`.
//! - A box never wraps across the cylindrical seam; a wrapped region is
//!   represented explicitly as a [`CylindricalSpan`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mosaic height produced by the standard capture rig.
pub const DEFAULT_MOSAIC_HEIGHT_PX: i64 = 1200;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid box [{x}, {y}, {w}, {h}]: width and height must be positive")]
    InvalidBox { x: i64, y: i64, w: i64, h: i64 },
    #[error("unknown defect class {0:?}")]
    UnknownClass(String),
    #[error("unknown material {0:?}")]
    UnknownMaterial(String),
    #[error("condition class {0} out of range (expected 0..=4)")]
    InvalidCondition(u8),
    #[error("confidence {0} out of range (expected 0.0..=1.0)")]
    InvalidConfidence(f64),
    #[error("invalid mosaic geometry for pipe {pipe_id:?}: {reason}")]
    InvalidGeometry { pipe_id: String, reason: String },
    #[error("invalid cylindrical span: {0}")]
    InvalidSpan(String),
}

/// Defect and structure classes of the Euronorm-style coding scheme used by
/// the annotation teams. `Connection` is the only structural class; the other
/// nine are defects proper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DefectClass {
    #[serde(rename = "BBC")]
    SettledDeposit,
    #[serde(rename = "BAC")]
    BreakCollapse,
    #[serde(rename = "BAA")]
    Deformation,
    #[serde(rename = "BBE")]
    Obstacle,
    #[serde(rename = "BAJ-C")]
    AngularDisplacedJoint,
    #[serde(rename = "BAF")]
    SurfaceDamage,
    #[serde(rename = "BAJ-B")]
    HorizontalDisplacedJoint,
    #[serde(rename = "BAB")]
    Fissure,
    #[serde(rename = "BBA")]
    Root,
    #[serde(rename = "BCA")]
    Connection,
}

impl DefectClass {
    pub const ALL: [DefectClass; 10] = [
        DefectClass::SettledDeposit,
        DefectClass::BreakCollapse,
        DefectClass::Deformation,
        DefectClass::Obstacle,
        DefectClass::AngularDisplacedJoint,
        DefectClass::SurfaceDamage,
        DefectClass::HorizontalDisplacedJoint,
        DefectClass::Fissure,
        DefectClass::Root,
        DefectClass::Connection,
    ];

    /// Euronorm-style code, e.g. `BAB` for a fissure.
    pub fn code(self) -> &'static str {
        match self {
            DefectClass::SettledDeposit => "BBC",
            DefectClass::BreakCollapse => "BAC",
            DefectClass::Deformation => "BAA",
            DefectClass::Obstacle => "BBE",
            DefectClass::AngularDisplacedJoint => "BAJ-C",
            DefectClass::SurfaceDamage => "BAF",
            DefectClass::HorizontalDisplacedJoint => "BAJ-B",
            DefectClass::Fissure => "BAB",
            DefectClass::Root => "BBA",
            DefectClass::Connection => "BCA",
        }
    }

    /// Human-readable name as used in reports.
    pub fn name(self) -> &'static str {
        match self {
            DefectClass::SettledDeposit => "settled deposit",
            DefectClass::BreakCollapse => "break/collapse",
            DefectClass::Deformation => "deformation",
            DefectClass::Obstacle => "obstacle",
            DefectClass::AngularDisplacedJoint => "angular displaced joint",
            DefectClass::SurfaceDamage => "surface damage",
            DefectClass::HorizontalDisplacedJoint => "horizontal displaced joint",
            DefectClass::Fissure => "fissure",
            DefectClass::Root => "root",
            DefectClass::Connection => "connection",
        }
    }

    /// Snake-case alias accepted next to the code when parsing, e.g. in rule
    /// files: `fissure` and `BAB` name the same class.
    pub fn alias(self) -> &'static str {
        match self {
            DefectClass::SettledDeposit => "settled_deposit",
            DefectClass::BreakCollapse => "break_collapse",
            DefectClass::Deformation => "deformation",
            DefectClass::Obstacle => "obstacle",
            DefectClass::AngularDisplacedJoint => "angular_displaced_joint",
            DefectClass::SurfaceDamage => "surface_damage",
            DefectClass::HorizontalDisplacedJoint => "horizontal_displaced_joint",
            DefectClass::Fissure => "fissure",
            DefectClass::Root => "root",
            DefectClass::Connection => "connection",
        }
    }

    /// `Connection` is a structure, not a defect; it has no damage severity
    /// of its own.
    pub fn is_structural(self) -> bool {
        self == DefectClass::Connection
    }
}

impl fmt::Display for DefectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for DefectClass {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DefectClass::ALL
            .into_iter()
            .find(|c| c.code() == s || c.alias() == s)
            .ok_or_else(|| DomainError::UnknownClass(s.to_string()))
    }
}

/// Damage severity following the five condition classes of the assessment
/// standard. Condition 0 is the worst. Severity is a property of expert
/// annotations only; detections never carry one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Severity {
    VerySevere,
    Severe,
    Medium,
    Slight,
    Minor,
}

impl Severity {
    pub const ALL: [Severity; 5] = [
        Severity::VerySevere,
        Severity::Severe,
        Severity::Medium,
        Severity::Slight,
        Severity::Minor,
    ];

    /// Condition class number, 0 (very severe) through 4 (minor).
    pub fn condition(self) -> u8 {
        match self {
            Severity::VerySevere => 0,
            Severity::Severe => 1,
            Severity::Medium => 2,
            Severity::Slight => 3,
            Severity::Minor => 4,
        }
    }

    pub fn from_condition(condition: u8) -> Result<Self, DomainError> {
        match condition {
            0 => Ok(Severity::VerySevere),
            1 => Ok(Severity::Severe),
            2 => Ok(Severity::Medium),
            3 => Ok(Severity::Slight),
            4 => Ok(Severity::Minor),
            other => Err(DomainError::InvalidCondition(other)),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Severity::VerySevere => "very severe",
            Severity::Severe => "severe",
            Severity::Medium => "medium",
            Severity::Slight => "slight",
            Severity::Minor => "minor",
        }
    }
}

impl TryFrom<u8> for Severity {
    type Error = DomainError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Severity::from_condition(v)
    }
}

impl From<Severity> for u8 {
    fn from(s: Severity) -> u8 {
        s.condition()
    }
}

/// Pipe wall material. Relevant for the expert rules: some findings are
/// plausible only for certain materials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Concrete,
    VitrifiedClay,
    Stone,
    Other,
}

impl Material {
    pub const ALL: [Material; 4] = [
        Material::Concrete,
        Material::VitrifiedClay,
        Material::Stone,
        Material::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Material::Concrete => "concrete",
            Material::VitrifiedClay => "vitrified_clay",
            Material::Stone => "stone",
            Material::Other => "other",
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Material {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Material::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DomainError::UnknownMaterial(s.to_string()))
    }
}

/// Integer pixel rectangle, half-open on both axes: `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct PixelBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl PixelBox {
    /// Panics if `w` or `h` is not positive; use [`PixelBox::try_new`] for
    /// unvalidated input.
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self::try_new(x, y, w, h).expect("degenerate pixel box")
    }

    pub fn try_new(x: i64, y: i64, w: i64, h: i64) -> Result<Self, DomainError> {
        if w > 0 && h > 0 {
            Ok(PixelBox { x, y, w, h })
        } else {
            Err(DomainError::InvalidBox { x, y, w, h })
        }
    }

    /// First x coordinate beyond the box.
    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    /// First y coordinate beyond the box.
    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: i64, dy: i64) -> PixelBox {
        PixelBox { x: self.x + dx, y: self.y + dy, ..*self }
    }

    /// Intersection rectangle, `None` when the boxes are disjoint. Shared
    /// edges do not count as overlap (the boxes are half-open).
    pub fn intersection(&self, other: &PixelBox) -> Option<PixelBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x0 < x1 && y0 < y1 {
            Some(PixelBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &PixelBox) -> i64 {
        self.intersection(other).map_or(0, |b| b.area())
    }
}

impl From<PixelBox> for [i64; 4] {
    fn from(b: PixelBox) -> [i64; 4] {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[i64; 4]> for PixelBox {
    type Error = DomainError;

    fn try_from(v: [i64; 4]) -> Result<Self, Self::Error> {
        PixelBox::try_new(v[0], v[1], v[2], v[3])
    }
}

/// Intersection over union of two boxes, computed from exact integer areas.
/// Symmetric, 1.0 for identical boxes, 0.0 for disjoint ones.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Smallest box containing every box in the list; `None` for an empty list.
pub fn enclosing_box(boxes: &[PixelBox]) -> Option<PixelBox> {
    let first = boxes.first()?;
    let mut x0 = first.x;
    let mut y0 = first.y;
    let mut x1 = first.right();
    let mut y1 = first.bottom();
    for b in &boxes[1..] {
        x0 = x0.min(b.x);
        y0 = y0.min(b.y);
        x1 = x1.max(b.right());
        y1 = y1.max(b.bottom());
    }
    Some(PixelBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
}

/// Overlap of the axial (x) extents of two boxes relative to the narrower
/// one: `overlap_width / min(a.w, b.w)`. The y extents are ignored; this is
/// the pairing score for the two parts of a defect cut by the cylindrical
/// seam, which sit at opposite y edges of the mosaic.
pub fn axial_overlap_ratio(a: &PixelBox, b: &PixelBox) -> f64 {
    let overlap = (a.right().min(b.right()) - a.x.max(b.x)).max(0);
    overlap as f64 / a.w.min(b.w) as f64
}

/// Metadata of one unrolled pipe mosaic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicGeometry {
    pub pipe_id: String,
    pub width_px: i64,
    pub height_px: i64,
    /// Axial scale: how many pixel columns cover one meter of pipe.
    pub px_per_meter_axial: f64,
    pub material: Material,
    /// Axial pixel positions of pipe joints, strictly ascending, each in
    /// `[0, width_px]`.
    pub joint_positions_px: Vec<i64>,
}

impl MosaicGeometry {
    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |reason: String| DomainError::InvalidGeometry {
            pipe_id: self.pipe_id.clone(),
            reason,
        };
        if self.width_px <= 0 || self.height_px <= 0 {
            return Err(fail(format!(
                "non-positive extent {}x{}",
                self.width_px, self.height_px
            )));
        }
        if !(self.px_per_meter_axial.is_finite() && self.px_per_meter_axial > 0.0) {
            return Err(fail(format!(
                "px_per_meter_axial must be a positive finite number, got {}",
                self.px_per_meter_axial
            )));
        }
        for pair in self.joint_positions_px.windows(2) {
            if pair[0] >= pair[1] {
                return Err(fail(format!(
                    "joint positions not strictly ascending at {} >= {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let (Some(first), Some(last)) =
            (self.joint_positions_px.first(), self.joint_positions_px.last())
        {
            if *first < 0 || *last > self.width_px {
                return Err(fail(format!(
                    "joint positions must lie in [0, {}]",
                    self.width_px
                )));
            }
        }
        Ok(())
    }

    /// Pipe length covered by the mosaic, in meters.
    pub fn length_m(&self) -> f64 {
        self.width_px as f64 / self.px_per_meter_axial
    }

    pub fn contains(&self, b: &PixelBox) -> bool {
        b.x >= 0 && b.y >= 0 && b.right() <= self.width_px && b.bottom() <= self.height_px
    }

    pub fn px_to_m(&self, px: i64) -> f64 {
        px as f64 / self.px_per_meter_axial
    }

    pub fn m_to_px(&self, m: f64) -> f64 {
        m * self.px_per_meter_axial
    }
}

/// Expert ground-truth label: one box, one class, one severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub class: DefectClass,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    /// Condition class of the finding. Structural classes carry the fixed
    /// benign value [`Severity::Minor`].
    pub severity: Severity,
}

/// Detector output: one box, one class, one confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: String,
    pub class: DefectClass,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub confidence: f64,
    /// Ids of the detections merged into this one, empty for raw detector
    /// output. Never contains the detection's own id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_from: Vec<String>,
}

impl Detection {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(DomainError::InvalidConfidence(self.confidence));
        }
        let own = self.merged_from.iter().filter(|m| **m == self.id).count();
        if own > 0 {
            return Err(DomainError::InvalidSpan(format!(
                "detection {} lists itself in merged_from",
                self.id
            )));
        }
        let unique: BTreeSet<&String> = self.merged_from.iter().collect();
        if unique.len() != self.merged_from.len() {
            return Err(DomainError::InvalidSpan(format!(
                "detection {} has duplicate merged_from entries",
                self.id
            )));
        }
        Ok(())
    }
}

/// One defect that wraps across the cylindrical seam: the region touches the
/// top edge of the mosaic with one part and the bottom edge with the other.
/// Produced by seam stitching, never by the raw detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylindricalSpan {
    pub id: String,
    pub class: DefectClass,
    /// Part touching mosaic row 0.
    pub top_part: PixelBox,
    /// Part touching the last mosaic row.
    pub bottom_part: PixelBox,
    pub confidence: f64,
}

impl CylindricalSpan {
    pub fn validate(&self, geometry: &MosaicGeometry) -> Result<(), DomainError> {
        if self.top_part.y != 0 {
            return Err(DomainError::InvalidSpan(format!(
                "top part of span {} must touch row 0, starts at {}",
                self.id, self.top_part.y
            )));
        }
        if self.bottom_part.bottom() != geometry.height_px {
            return Err(DomainError::InvalidSpan(format!(
                "bottom part of span {} must touch row {}, ends at {}",
                self.id,
                geometry.height_px,
                self.bottom_part.bottom()
            )));
        }
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(DomainError::InvalidConfidence(self.confidence));
        }
        Ok(())
    }
}
