//! Seeded pipe and ground-truth generation.
//!
//! Counts per class are Poisson in the pipe length, boxes are placed by
//! rejection sampling under two standing constraints that the rest of the
//! pipeline relies on:
//!
//! - same-class boxes keep pairwise IoU below 0.2, so the default merge
//!   stage never fuses distinct ground-truth objects;
//! - ordinary boxes keep at least one pixel of margin from rows 0 and
//!   `height - 1`, so only deliberately planted seam defects (placed at
//!   y = 0) ever interact with seam stitching.
//!
//! Cluster classes (fissure, root, surface damage) emit groups of adjacent
//! sub-boxes, each annotated separately. Roots grow where something lets
//! them in: their clusters anchor near a joint or a connection. Displaced
//! joints sit at joints. Connections are generated before roots so root
//! anchoring can see them.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::domain::{
    iou, Annotation, DefectClass, Material, MosaicGeometry, PixelBox, Severity,
    DEFAULT_MOSAIC_HEIGHT_PX,
};
use crate::seed;

/// Same-class ground truth stays strictly below this pairwise IoU.
pub const SAME_CLASS_MAX_IOU: f64 = 0.2;

const MAX_PLACEMENT_ATTEMPTS: usize = 200;

pub type SizeRange = ((i64, i64), (i64, i64));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Inclusive range of sub-boxes per cluster; at least one.
    pub sub_box_count: (u32, u32),
    /// Sub-box centers scatter within this radius of the cluster anchor.
    pub spread_px: i64,
    /// Inclusive (width, height) ranges of each sub-box.
    pub sub_box_size_px: SizeRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SeverityModel {
    /// Larger boxes are worse: area thresholds (strictly descending) map to
    /// conditions 0..=3, anything smaller is condition 4, then the value
    /// jitters one step with the given probability.
    AreaCorrelated { thresholds: [i64; 4], jitter_prob: f64 },
    Uniform,
    Fixed { severity: Severity },
}

impl Default for SeverityModel {
    fn default() -> Self {
        SeverityModel::AreaCorrelated {
            thresholds: [160_000, 60_000, 20_000, 6_000],
            jitter_prob: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipeSpec {
    pub pipe_id: String,
    pub length_m: f64,
    pub px_per_meter_axial: f64,
    pub height_px: i64,
    pub material: Material,
    pub joint_spacing_m: f64,
    /// Expected annotations per 100 m, per class; missing classes mean 0.
    pub rates_per_100m: BTreeMap<DefectClass, f64>,
    /// Cluster shape per cluster class; non-listed classes emit single boxes.
    pub cluster: BTreeMap<DefectClass, ClusterParams>,
    /// Per-class (width, height) ranges overriding the built-in defaults.
    pub size_px: BTreeMap<DefectClass, SizeRange>,
    /// Expected seam-crossing defects per 100 m, planted at y = 0.
    pub seam_rate_per_100m: f64,
    pub seam_size_px: SizeRange,
    pub severity: SeverityModel,
}

impl Default for PipeSpec {
    fn default() -> Self {
        let rates_per_100m = [
            (DefectClass::SettledDeposit, 6.0),
            (DefectClass::BreakCollapse, 1.0),
            (DefectClass::Deformation, 1.5),
            (DefectClass::Obstacle, 2.0),
            (DefectClass::AngularDisplacedJoint, 3.0),
            (DefectClass::SurfaceDamage, 5.0),
            (DefectClass::HorizontalDisplacedJoint, 3.0),
            (DefectClass::Fissure, 8.0),
            (DefectClass::Root, 4.0),
            (DefectClass::Connection, 5.0),
        ]
        .into_iter()
        .collect();
        let cluster = [
            (
                DefectClass::Fissure,
                ClusterParams {
                    sub_box_count: (2, 6),
                    spread_px: 300,
                    sub_box_size_px: ((40, 160), (40, 160)),
                },
            ),
            (
                DefectClass::Root,
                ClusterParams {
                    sub_box_count: (1, 4),
                    spread_px: 80,
                    sub_box_size_px: ((60, 200), (60, 200)),
                },
            ),
            (
                DefectClass::SurfaceDamage,
                ClusterParams {
                    sub_box_count: (2, 5),
                    spread_px: 350,
                    sub_box_size_px: ((80, 240), (80, 240)),
                },
            ),
        ]
        .into_iter()
        .collect();
        PipeSpec {
            pipe_id: "pipe-0".into(),
            length_m: 100.0,
            px_per_meter_axial: 200.0,
            height_px: DEFAULT_MOSAIC_HEIGHT_PX,
            material: Material::Concrete,
            joint_spacing_m: 2.0,
            rates_per_100m,
            cluster,
            size_px: BTreeMap::new(),
            seam_rate_per_100m: 0.5,
            seam_size_px: ((60, 300), (4, 200)),
            severity: SeverityModel::default(),
        }
    }
}

impl PipeSpec {
    pub fn width_px(&self) -> i64 {
        (self.length_m * self.px_per_meter_axial).round() as i64
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |reason: String| Err(SynthError::InvalidSpec { reason });
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return fail(format!("length_m must be positive, got {}", self.length_m));
        }
        if !(self.px_per_meter_axial > 0.0 && self.px_per_meter_axial.is_finite()) {
            return fail(format!(
                "px_per_meter_axial must be positive, got {}",
                self.px_per_meter_axial
            ));
        }
        if self.width_px() < 1 {
            return fail("pipe is shorter than one pixel".into());
        }
        if self.height_px < 8 {
            return fail(format!("height_px must be at least 8, got {}", self.height_px));
        }
        if !(self.joint_spacing_m > 0.0 && self.joint_spacing_m.is_finite()) {
            return fail(format!("joint_spacing_m must be positive, got {}", self.joint_spacing_m));
        }
        if self.joint_spacing_m * self.px_per_meter_axial < 1.0 {
            return fail("joint spacing is below one pixel".into());
        }
        for (class, &rate) in &self.rates_per_100m {
            if !(rate >= 0.0 && rate.is_finite()) {
                return fail(format!("rate for {class} must be non-negative, got {rate}"));
            }
        }
        if !(self.seam_rate_per_100m >= 0.0 && self.seam_rate_per_100m.is_finite()) {
            return fail(format!(
                "seam_rate_per_100m must be non-negative, got {}",
                self.seam_rate_per_100m
            ));
        }
        for (class, params) in &self.cluster {
            if params.sub_box_count.0 < 1 || params.sub_box_count.0 > params.sub_box_count.1 {
                return fail(format!(
                    "cluster sub_box_count for {class} must be an ordered range starting at 1 or more"
                ));
            }
            if params.spread_px < 0 {
                return fail(format!("cluster spread for {class} must be non-negative"));
            }
            check_size_range(&params.sub_box_size_px, &format!("cluster size for {class}"))?;
        }
        for (class, range) in &self.size_px {
            check_size_range(range, &format!("size for {class}"))?;
        }
        check_size_range(&self.seam_size_px, "seam size")?;
        if self.seam_size_px.1 .0 < 2 {
            return fail("seam defects need height of at least 2 to be splittable".into());
        }
        match self.severity {
            SeverityModel::AreaCorrelated { thresholds, jitter_prob } => {
                if !thresholds.windows(2).all(|w| w[0] > w[1]) || thresholds[3] <= 0 {
                    return fail("severity thresholds must be strictly descending and positive".into());
                }
                if !(0.0..=1.0).contains(&jitter_prob) {
                    return fail(format!("severity jitter_prob must lie in [0, 1], got {jitter_prob}"));
                }
            }
            SeverityModel::Uniform | SeverityModel::Fixed { .. } => {}
        }
        Ok(())
    }

    fn size_range(&self, class: DefectClass) -> SizeRange {
        if let Some(&range) = self.size_px.get(&class) {
            return range;
        }
        match class {
            DefectClass::SettledDeposit => ((200, 800), (100, 400)),
            DefectClass::BreakCollapse => ((300, 900), (300, 800)),
            DefectClass::Deformation => ((200, 600), (200, 600)),
            DefectClass::Obstacle => ((100, 400), (100, 400)),
            DefectClass::AngularDisplacedJoint | DefectClass::HorizontalDisplacedJoint => {
                ((40, 120), (400, 1000))
            }
            DefectClass::Connection => ((150, 350), (150, 350)),
            DefectClass::Fissure | DefectClass::Root | DefectClass::SurfaceDamage => {
                ((100, 300), (100, 300))
            }
        }
    }
}

fn check_size_range(range: &SizeRange, what: &str) -> Result<(), SynthError> {
    let ((w0, w1), (h0, h1)) = *range;
    if w0 < 1 || w0 > w1 || h0 < 1 || h0 > h1 {
        return Err(SynthError::InvalidSpec {
            reason: format!("{what} must be ordered ranges of at least 1 px"),
        });
    }
    Ok(())
}

fn poisson_count(rng: &mut ChaCha12Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("validated lambda").sample(rng) as u64
}

/// Where a box wants to be.
enum Place {
    Uniform,
    /// Axially near x, anywhere circumferentially.
    NearX { x: i64, spread: i64 },
    /// Near a point in both axes.
    Near { x: i64, y: i64, spread: i64 },
}

/// Rejection-samples one box against the bounds, margins, and the
/// same-class IoU cap. Returns None when the neighbourhood is too crowded.
fn try_place(
    rng: &mut ChaCha12Rng,
    width: i64,
    height: i64,
    size: SizeRange,
    place: &Place,
    same_class: &[PixelBox],
) -> Option<PixelBox> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let w = rng.random_range(size.0 .0..=size.0 .1).clamp(1, width);
        let h = rng.random_range(size.1 .0..=size.1 .1).clamp(1, (height - 2).max(1));
        let y_max = (height - 1 - h).max(1);
        let (x, y) = match place {
            Place::Uniform => {
                (rng.random_range(0..=(width - w).max(0)), rng.random_range(1..=y_max))
            }
            Place::NearX { x, spread } => (
                (x + rng.random_range(-spread..=*spread) - w / 2).clamp(0, (width - w).max(0)),
                rng.random_range(1..=y_max),
            ),
            Place::Near { x, y, spread } => (
                (x + rng.random_range(-spread..=*spread) - w / 2).clamp(0, (width - w).max(0)),
                (y + rng.random_range(-spread..=*spread) - h / 2).clamp(1, y_max),
            ),
        };
        let candidate = PixelBox::new(x, y, w, h);
        if same_class.iter().all(|b| iou(b, &candidate) < SAME_CLASS_MAX_IOU) {
            return Some(candidate);
        }
    }
    None
}

fn draw_severity(
    rng: &mut ChaCha12Rng,
    model: &SeverityModel,
    class: DefectClass,
    bbox: &PixelBox,
) -> Severity {
    // Connections are structures, not defects; their condition is benign.
    if class == DefectClass::Connection {
        return Severity::Minor;
    }
    match model {
        SeverityModel::AreaCorrelated { thresholds, jitter_prob } => {
            let area = bbox.area();
            let mut condition =
                thresholds.iter().position(|&t| area >= t).unwrap_or(4) as i8;
            if *jitter_prob > 0.0 && rng.random_bool(*jitter_prob) {
                condition += if rng.random_bool(0.5) { 1 } else { -1 };
            }
            Severity::from_condition(condition.clamp(0, 4) as u8).expect("clamped condition")
        }
        SeverityModel::Uniform => {
            Severity::from_condition(rng.random_range(0..=4)).expect("in range")
        }
        SeverityModel::Fixed { severity } => *severity,
    }
}

pub fn generate_pipe(
    spec: &PipeSpec,
    seed: u64,
) -> Result<(MosaicGeometry, Vec<Annotation>), SynthError> {
    spec.validate()?;
    let width = spec.width_px();
    let height = spec.height_px;
    let spacing_px = spec.joint_spacing_m * spec.px_per_meter_axial;
    let mut joint_positions_px = Vec::new();
    let mut k = 1i64;
    loop {
        let pos = (k as f64 * spacing_px).round() as i64;
        if pos >= width {
            break;
        }
        if joint_positions_px.last() != Some(&pos) {
            joint_positions_px.push(pos);
        }
        k += 1;
    }
    let geometry = MosaicGeometry {
        pipe_id: spec.pipe_id.clone(),
        width_px: width,
        height_px: height,
        px_per_meter_axial: spec.px_per_meter_axial,
        material: spec.material,
        joint_positions_px,
    };
    geometry.validate()?;

    let mut rng = seed::rng(seed, &[seed::stream::PIPE]);
    let mut annotations: Vec<Annotation> = Vec::new();
    let mut by_class: BTreeMap<DefectClass, Vec<PixelBox>> = BTreeMap::new();
    let mut next_id = 0usize;

    let push = |annotations: &mut Vec<Annotation>,
                    by_class: &mut BTreeMap<DefectClass, Vec<PixelBox>>,
                    rng: &mut ChaCha12Rng,
                    next_id: &mut usize,
                    class: DefectClass,
                    bbox: PixelBox| {
        let severity = draw_severity(rng, &spec.severity, class, &bbox);
        annotations.push(Annotation { id: format!("gt-{:04}", *next_id), class, bbox, severity });
        *next_id += 1;
        by_class.entry(class).or_default().push(bbox);
    };

    // Connections first (root anchors depend on them), roots last, the rest
    // in glossary order in between.
    let mut order = vec![DefectClass::Connection];
    order.extend(
        DefectClass::ALL
            .into_iter()
            .filter(|c| !matches!(c, DefectClass::Connection | DefectClass::Root)),
    );
    order.push(DefectClass::Root);

    let near_spread = (0.3 * spec.px_per_meter_axial).round() as i64;
    for class in order {
        let rate = spec.rates_per_100m.get(&class).copied().unwrap_or(0.0);
        let lambda = rate * spec.length_m / 100.0;
        let count = poisson_count(&mut rng, lambda);
        for _ in 0..count {
            // Pick the anchor discipline per class.
            let place = match class {
                DefectClass::AngularDisplacedJoint | DefectClass::HorizontalDisplacedJoint => {
                    match geometry.joint_positions_px.choose(&mut rng) {
                        Some(&x) => Place::NearX { x, spread: near_spread },
                        None => Place::Uniform,
                    }
                }
                DefectClass::Root => {
                    // Joints and connection boxes are the attachment points.
                    let connections = by_class
                        .get(&DefectClass::Connection)
                        .map(|v| v.as_slice())
                        .unwrap_or(&[]);
                    let total = geometry.joint_positions_px.len() + connections.len();
                    if total == 0 {
                        Place::Uniform
                    } else {
                        let pick = rng.random_range(0..total);
                        if pick < geometry.joint_positions_px.len() {
                            Place::NearX {
                                x: geometry.joint_positions_px[pick],
                                spread: near_spread,
                            }
                        } else {
                            let c = &connections[pick - geometry.joint_positions_px.len()];
                            Place::Near {
                                x: c.x + c.w / 2,
                                y: c.y + c.h / 2,
                                spread: near_spread,
                            }
                        }
                    }
                }
                _ => Place::Uniform,
            };
            match spec.cluster.get(&class) {
                Some(params) => {
                    let sub_count =
                        rng.random_range(params.sub_box_count.0..=params.sub_box_count.1);
                    let first = {
                        let existing =
                            by_class.get(&class).map(|v| v.as_slice()).unwrap_or(&[]);
                        try_place(&mut rng, width, height, params.sub_box_size_px, &place, existing)
                    };
                    let Some(first) = first else {
                        continue;
                    };
                    let anchor = Place::Near {
                        x: first.x + first.w / 2,
                        y: first.y + first.h / 2,
                        spread: params.spread_px,
                    };
                    push(&mut annotations, &mut by_class, &mut rng, &mut next_id, class, first);
                    for _ in 1..sub_count {
                        let sub = {
                            let siblings =
                                by_class.get(&class).map(|v| v.as_slice()).unwrap_or(&[]);
                            try_place(
                                &mut rng,
                                width,
                                height,
                                params.sub_box_size_px,
                                &anchor,
                                siblings,
                            )
                        };
                        if let Some(sub) = sub {
                            push(&mut annotations, &mut by_class, &mut rng, &mut next_id, class, sub);
                        }
                    }
                }
                None => {
                    let bbox = {
                        let existing =
                            by_class.get(&class).map(|v| v.as_slice()).unwrap_or(&[]);
                        try_place(&mut rng, width, height, spec.size_range(class), &place, existing)
                    };
                    if let Some(bbox) = bbox {
                        push(&mut annotations, &mut by_class, &mut rng, &mut next_id, class, bbox);
                    }
                }
            }
        }
    }

    // Seam-crossing defects: planted touching row 0 with their wrapped
    // remainder implied; the simulated detector may split them.
    let seam_classes: Vec<DefectClass> = DefectClass::ALL
        .into_iter()
        .filter(|c| *c != DefectClass::Connection)
        .collect();
    let seam_count = poisson_count(&mut rng, spec.seam_rate_per_100m * spec.length_m / 100.0);
    for _ in 0..seam_count {
        let class = *seam_classes.choose(&mut rng).expect("non-empty");
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let w = rng.random_range(spec.seam_size_px.0 .0..=spec.seam_size_px.0 .1).clamp(1, width);
            let h = rng
                .random_range(spec.seam_size_px.1 .0..=spec.seam_size_px.1 .1)
                .clamp(2, height - 1);
            let x = rng.random_range(0..=(width - w).max(0));
            let candidate = PixelBox::new(x, 0, w, h);
            let same = by_class.get(&class).map(|v| v.as_slice()).unwrap_or(&[]);
            if same.iter().all(|b| iou(b, &candidate) < SAME_CLASS_MAX_IOU) {
                placed = Some(candidate);
                break;
            }
        }
        if let Some(bbox) = placed {
            push(&mut annotations, &mut by_class, &mut rng, &mut next_id, class, bbox);
        }
    }

    Ok((geometry, annotations))
}
