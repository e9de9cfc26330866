//! Detection post-processing.
//!
//! Raw detector output over overlapping windows is noisy in predictable
//! ways: sub-threshold clutter, one defect reported as several overlapping
//! boxes, the two halves of a ceiling defect cut by the cylindrical seam,
//! and findings that contradict domain knowledge. The stages here deal with
//! exactly those, in a configurable order (default: filter, merge, stitch,
//! rules).
//!
//! All stages are deterministic: ties are broken by explicit keys, never by
//! iteration order of a hash map.

pub mod assignment;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    axial_overlap_ratio, enclosing_box, iou, CylindricalSpan, DefectClass, Detection,
    MosaicGeometry,
};
pub use assignment::{solve_assignment, AssignmentError, AssignmentProblem, Matching};
pub use rules::{apply_rules, PipeContext, RuleEvent, RuleSet};

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error("{name} must lie in [0, 1], got {value}")]
    BadThreshold { name: &'static str, value: f64 },
    #[error("assignment failed: {0}")]
    Assignment(#[from] AssignmentError),
    #[error("unknown stage {0:?} (expected filter, merge, nms, stitch or rules)")]
    UnknownStage(String),
}

/// Per-class confidence thresholds over a global floor. The effective
/// threshold for a class is the maximum of the floor and the class entry;
/// a detection survives only with confidence strictly above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub global_floor: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class: BTreeMap<DefectClass, f64>,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy { global_floor: 0.10, per_class: BTreeMap::new() }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<(), PostprocError> {
        let check = |name: &'static str, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(PostprocError::BadThreshold { name, value })
            }
        };
        check("global_floor", self.global_floor)?;
        for (_, &t) in &self.per_class {
            check("per_class threshold", t)?;
        }
        Ok(())
    }

    pub fn effective(&self, class: DefectClass) -> f64 {
        self.per_class
            .get(&class)
            .copied()
            .map_or(self.global_floor, |t| t.max(self.global_floor))
    }
}

/// Drops detections at or below their effective class threshold. Order is
/// preserved; nothing else changes.
pub fn filter_confidence(detections: Vec<Detection>, policy: &ThresholdPolicy) -> Vec<Detection> {
    detections
        .into_iter()
        .filter(|d| d.confidence > policy.effective(d.class))
        .collect()
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            self.parent[i] = self.find(self.parent[i]);
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb] = ra;
        }
    }
}

/// Merges same-class detections that overlap into single boxes.
///
/// Two detections link when they share a class and their IoU is positive and
/// at least `link_iou`; whole connected components collapse into one
/// detection with the enclosing box, the maximum confidence, the smallest
/// member id, and every other original id recorded in `merged_from`.
/// Linking repeats on the merged result until nothing changes, so the
/// operation is idempotent even when enclosing boxes create new overlap.
pub fn merge_connected(
    detections: Vec<Detection>,
    link_iou: f64,
) -> Result<Vec<Detection>, PostprocError> {
    if !(0.0..=1.0).contains(&link_iou) {
        return Err(PostprocError::BadThreshold { name: "link_iou", value: link_iou });
    }
    let mut current = detections;
    loop {
        let before = current.len();
        current = merge_once(current, link_iou);
        if current.len() == before {
            return Ok(current);
        }
    }
}

fn merge_once(detections: Vec<Detection>, link_iou: f64) -> Vec<Detection> {
    let mut by_class: BTreeMap<DefectClass, Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        by_class.entry(d.class).or_default().push(i);
    }
    let mut dsu = Dsu::new(detections.len());
    for indices in by_class.values() {
        for (a_pos, &a) in indices.iter().enumerate() {
            for &b in &indices[a_pos + 1..] {
                let overlap = iou(&detections[a].bbox, &detections[b].bbox);
                if overlap > 0.0 && overlap >= link_iou {
                    dsu.union(a, b);
                }
            }
        }
    }

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..detections.len() {
        members.entry(dsu.find(i)).or_default().push(i);
    }

    let mut emitted: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::new();
    for i in 0..detections.len() {
        let root = dsu.find(i);
        if !emitted.insert(root) {
            continue;
        }
        let component = &members[&root];
        if component.len() == 1 {
            out.push(detections[i].clone());
            continue;
        }
        let parts: Vec<&Detection> = component.iter().map(|&j| &detections[j]).collect();
        let bbox = enclosing_box(&parts.iter().map(|d| d.bbox).collect::<Vec<_>>())
            .expect("component is never empty");
        let representative =
            parts.iter().map(|d| d.id.as_str()).min().expect("component is never empty");
        let confidence = parts.iter().map(|d| d.confidence).fold(0.0f64, f64::max);
        let mut merged_from: BTreeSet<String> = BTreeSet::new();
        for d in &parts {
            merged_from.extend(d.merged_from.iter().cloned());
            merged_from.insert(d.id.clone());
        }
        merged_from.remove(representative);
        out.push(Detection {
            id: representative.to_string(),
            class: parts[0].class,
            bbox,
            confidence,
            merged_from: merged_from.into_iter().collect(),
        });
    }
    out
}

/// Greedy per-class non-maximum suppression. Detections are visited in
/// order of descending confidence (ties: ascending x, then y, then id); each
/// visited detection is kept unless it overlaps an already-kept same-class
/// detection with IoU at or above the threshold. Surviving detections keep
/// their input order.
pub fn nms(detections: Vec<Detection>, iou_threshold: f64) -> Result<Vec<Detection>, PostprocError> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(PostprocError::BadThreshold { name: "iou_threshold", value: iou_threshold });
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let da = &detections[a];
        let db = &detections[b];
        db.confidence
            .total_cmp(&da.confidence)
            .then(da.bbox.x.cmp(&db.bbox.x))
            .then(da.bbox.y.cmp(&db.bbox.y))
            .then(da.id.cmp(&db.id))
    });
    let mut kept: Vec<usize> = Vec::new();
    let mut keep_flag = vec![false; detections.len()];
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            detections[k].class == detections[i].class
                && iou(&detections[k].bbox, &detections[i].bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(i);
            keep_flag[i] = true;
        }
    }
    Ok(detections
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| keep_flag[i].then_some(d))
        .collect())
}

/// Re-joins defects cut by the cylindrical seam.
///
/// A defect at the pipe ceiling appears as two boxes: one touching mosaic
/// row 0 and one touching the last row. Per class, top-touching and
/// bottom-touching detections are paired by minimum-cost assignment with
/// cost `1 - axial_overlap_ratio`; pairs whose axial overlap is below
/// `min_axial_overlap` are forbidden. Matched pairs leave the detection list
/// and become [`CylindricalSpan`]s with the maximum confidence of the two
/// parts. Full-height boxes are already whole and are never candidates.
pub fn stitch_seam(
    detections: Vec<Detection>,
    geometry: &MosaicGeometry,
    min_axial_overlap: f64,
) -> Result<(Vec<Detection>, Vec<CylindricalSpan>), PostprocError> {
    if !(0.0..=1.0).contains(&min_axial_overlap) {
        return Err(PostprocError::BadThreshold {
            name: "min_axial_overlap",
            value: min_axial_overlap,
        });
    }
    let height = geometry.height_px;
    let is_top = |d: &Detection| d.bbox.y == 0 && d.bbox.bottom() < height;
    let is_bottom = |d: &Detection| d.bbox.bottom() == height && d.bbox.y > 0;

    let mut consumed = vec![false; detections.len()];
    let mut spans = Vec::new();
    for class in DefectClass::ALL {
        let mut tops: Vec<usize> = (0..detections.len())
            .filter(|&i| detections[i].class == class && is_top(&detections[i]))
            .collect();
        let mut bottoms: Vec<usize> = (0..detections.len())
            .filter(|&i| detections[i].class == class && is_bottom(&detections[i]))
            .collect();
        if tops.is_empty() || bottoms.is_empty() {
            continue;
        }
        let key = |i: usize| (detections[i].bbox.x, detections[i].id.clone());
        tops.sort_by_key(|&i| key(i));
        bottoms.sort_by_key(|&i| key(i));

        let costs: Vec<Vec<f64>> = tops
            .iter()
            .map(|&t| {
                bottoms
                    .iter()
                    .map(|&b| 1.0 - axial_overlap_ratio(&detections[t].bbox, &detections[b].bbox))
                    .collect()
            })
            .collect();
        let mut problem = AssignmentProblem::new(costs)?;
        for (r, &t) in tops.iter().enumerate() {
            for (c, &b) in bottoms.iter().enumerate() {
                if axial_overlap_ratio(&detections[t].bbox, &detections[b].bbox)
                    < min_axial_overlap
                {
                    problem.forbid(r, c)?;
                }
            }
        }
        for (r, c) in solve_assignment(&problem)?.pairs {
            let top = &detections[tops[r]];
            let bottom = &detections[bottoms[c]];
            consumed[tops[r]] = true;
            consumed[bottoms[c]] = true;
            spans.push(CylindricalSpan {
                id: format!("{}+{}", top.id, bottom.id),
                class,
                top_part: top.bbox,
                bottom_part: bottom.bbox,
                confidence: top.confidence.max(bottom.confidence),
            });
        }
    }
    let remaining = detections
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| (!consumed[i]).then_some(d))
        .collect();
    Ok((remaining, spans))
}

/// Pipeline stages, applied in the order they are listed in the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Filter,
    Merge,
    Nms,
    Stitch,
    Rules,
}

impl std::str::FromStr for Stage {
    type Err = PostprocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filter" => Ok(Stage::Filter),
            "merge" => Ok(Stage::Merge),
            "nms" => Ok(Stage::Nms),
            "stitch" => Ok(Stage::Stitch),
            "rules" => Ok(Stage::Rules),
            other => Err(PostprocError::UnknownStage(other.to_string())),
        }
    }
}

/// Thresholds and stage order for [`run_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocConfig {
    pub policy: ThresholdPolicy,
    pub merge_link_iou: f64,
    pub nms_iou: f64,
    pub stitch_min_axial_overlap: f64,
    pub stages: Vec<Stage>,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig {
            policy: ThresholdPolicy::default(),
            merge_link_iou: 0.2,
            nms_iou: 0.5,
            stitch_min_axial_overlap: 0.1,
            stages: vec![Stage::Filter, Stage::Merge, Stage::Stitch, Stage::Rules],
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<(), PostprocError> {
        self.policy.validate()?;
        for (name, value) in [
            ("merge_link_iou", self.merge_link_iou),
            ("nms_iou", self.nms_iou),
            ("stitch_min_axial_overlap", self.stitch_min_axial_overlap),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(PostprocError::BadThreshold { name, value });
            }
        }
        Ok(())
    }
}

/// Output of the full pipeline: surviving detections, stitched spans, and
/// the rule audit trail (empty unless a `rules` stage ran).
#[derive(Debug, Clone, PartialEq)]
pub struct PostprocOutput {
    pub detections: Vec<Detection>,
    pub spans: Vec<CylindricalSpan>,
    pub events: Vec<RuleEvent>,
}

/// Runs the configured stages in order. An empty stage list is the identity.
/// Rules stages see detections only; spans produced by earlier stitch stages
/// pass through untouched.
pub fn run_pipeline(
    detections: Vec<Detection>,
    ctx: &PipeContext,
    config: &PostprocConfig,
    ruleset: &RuleSet,
) -> Result<PostprocOutput, PostprocError> {
    config.validate()?;
    let mut detections = detections;
    let mut spans = Vec::new();
    let mut events = Vec::new();
    for stage in &config.stages {
        match stage {
            Stage::Filter => detections = filter_confidence(detections, &config.policy),
            Stage::Merge => detections = merge_connected(detections, config.merge_link_iou)?,
            Stage::Nms => detections = nms(detections, config.nms_iou)?,
            Stage::Stitch => {
                let (rest, new_spans) =
                    stitch_seam(detections, &ctx.geometry, config.stitch_min_axial_overlap)?;
                detections = rest;
                spans.extend(new_spans);
            }
            Stage::Rules => {
                let (rest, new_events) = apply_rules(detections, ctx, ruleset);
                detections = rest;
                events.extend(new_events);
            }
        }
    }
    Ok(PostprocOutput { detections, spans, events })
}
