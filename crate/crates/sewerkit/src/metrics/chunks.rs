//! Running-meter chunk metric.
//!
//! Operators act on inspection reports per stretch of pipe, not per pixel,
//! so the headline metric divides each mosaic into fixed-width chunks along
//! the axis (600 px by default, half a standard patch) and scores presence
//! per chunk:
//!
//! - a chunk containing annotated defects counts as a true positive when at
//!   least one detection of a correct class touches it, and as a false
//!   negative otherwise (a wrong-class detection does not rescue it, and
//!   does not add a false positive either: the stretch was flagged);
//! - a defect-free chunk counts as a false positive when any detection
//!   touches it, and as a true negative otherwise.
//!
//! Box membership is by positive axial overlap with the chunk interval, so
//! a box spanning a boundary counts in every chunk it actually covers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::domain::{Annotation, DefectClass, Detection};

/// One axial chunk, half-open interval `[x_start, x_end)`. The last chunk of
/// a mosaic may be narrower than the configured width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub x_start: i64,
    pub x_end: i64,
}

impl Chunk {
    pub fn width(&self) -> i64 {
        self.x_end - self.x_start
    }
}

/// Splits `[0, width_px)` into `ceil(width / chunk_width)` chunks.
pub fn chunk_grid(width_px: i64, chunk_width_px: i64) -> Result<Vec<Chunk>, MetricsError> {
    for (name, value) in [("width_px", width_px), ("chunk_width_px", chunk_width_px)] {
        if value <= 0 {
            return Err(MetricsError::NonPositiveParam { name, value });
        }
    }
    let count = (width_px + chunk_width_px - 1) / chunk_width_px;
    Ok((0..count)
        .map(|i| Chunk {
            index: i as usize,
            x_start: i * chunk_width_px,
            x_end: ((i + 1) * chunk_width_px).min(width_px),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

/// Per-chunk outcome with the class sets that led to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkVerdict {
    pub chunk: Chunk,
    pub verdict: Verdict,
    pub annotated_classes: BTreeSet<DefectClass>,
    pub detected_classes: BTreeSet<DefectClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts {
            true_positive: tp,
            false_positive: fp,
            true_negative: tn,
            false_negative: fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.true_negative += other.true_negative;
        self.false_negative += other.false_negative;
    }

    fn bump(&mut self, verdict: Verdict) {
        match verdict {
            Verdict::TruePositive => self.true_positive += 1,
            Verdict::FalsePositive => self.false_positive += 1,
            Verdict::TrueNegative => self.true_negative += 1,
            Verdict::FalseNegative => self.false_negative += 1,
        }
    }
}

/// Marks, for each box, the classes present in every chunk the box touches.
fn mark<'a>(
    sets: &mut [BTreeSet<DefectClass>],
    chunks: &[Chunk],
    items: impl Iterator<Item = (&'a crate::domain::PixelBox, DefectClass)>,
) {
    let chunk_width = chunks[0].width();
    let count = chunks.len() as i64;
    for (bbox, class) in items {
        if bbox.right() <= 0 {
            continue;
        }
        let first = (bbox.x / chunk_width).max(0);
        let last = ((bbox.right() - 1) / chunk_width).min(count - 1);
        for index in first..=last {
            sets[index as usize].insert(class);
        }
    }
}

/// Scores every chunk and sums the verdicts.
pub fn chunk_confusion(
    chunks: &[Chunk],
    annotations: &[Annotation],
    detections: &[Detection],
) -> (Vec<ChunkVerdict>, ConfusionCounts) {
    if chunks.is_empty() {
        return (Vec::new(), ConfusionCounts::default());
    }
    let mut annotated: Vec<BTreeSet<DefectClass>> = vec![BTreeSet::new(); chunks.len()];
    let mut detected: Vec<BTreeSet<DefectClass>> = vec![BTreeSet::new(); chunks.len()];
    mark(&mut annotated, chunks, annotations.iter().map(|a| (&a.bbox, a.class)));
    mark(&mut detected, chunks, detections.iter().map(|d| (&d.bbox, d.class)));

    let mut counts = ConfusionCounts::default();
    let mut verdicts = Vec::with_capacity(chunks.len());
    for (i, chunk) in chunks.iter().enumerate() {
        let annotated_classes = std::mem::take(&mut annotated[i]);
        let detected_classes = std::mem::take(&mut detected[i]);
        let verdict = if !annotated_classes.is_empty() {
            if annotated_classes.intersection(&detected_classes).next().is_some() {
                Verdict::TruePositive
            } else {
                Verdict::FalseNegative
            }
        } else if !detected_classes.is_empty() {
            Verdict::FalsePositive
        } else {
            Verdict::TrueNegative
        };
        counts.bump(verdict);
        verdicts.push(ChunkVerdict { chunk: *chunk, verdict, annotated_classes, detected_classes });
    }
    (verdicts, counts)
}

/// Headline rates over chunk counts. With zero relevant denominators the
/// rate is 1.0 (nothing to find and nothing falsely found is a perfect
/// score); an evaluation without a single chunk is an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn summary_stats(counts: &ConfusionCounts) -> Result<SummaryStats, MetricsError> {
    let total = counts.total();
    if total == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let accuracy = (counts.true_positive + counts.true_negative) as f64 / total as f64;
    let precision = ratio(counts.true_positive, counts.true_positive + counts.false_positive);
    let recall = ratio(counts.true_positive, counts.true_positive + counts.false_negative);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SummaryStats { accuracy, precision, recall, f1 })
}
