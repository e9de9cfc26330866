//! Object-level matching and per-class precision/recall.
//!
//! Matching is greedy one-to-one per class: detections are visited in
//! descending confidence (ties: ascending x, y, id) and each takes the
//! not-yet-matched annotation of its class with the highest IoU at or above
//! the threshold. IoU ties go to the annotation that comes first in
//! ascending (x, y, id) order, so results never depend on input order.

use std::collections::BTreeMap;

use serde::Serialize;

use super::MetricsError;
use crate::domain::{iou, Annotation, DefectClass, Detection, Severity};

/// One matched pair, by index into the input slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectMatch {
    pub annotation: usize,
    pub detection: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<ObjectMatch>,
    pub unmatched_annotations: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

pub fn match_objects(
    annotations: &[Annotation],
    detections: &[Detection],
    iou_threshold: f64,
) -> Result<MatchResult, MetricsError> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(MetricsError::BadFraction { name: "iou_threshold", value: iou_threshold });
    }
    let mut ann_by_class: BTreeMap<DefectClass, Vec<usize>> = BTreeMap::new();
    for (i, a) in annotations.iter().enumerate() {
        ann_by_class.entry(a.class).or_default().push(i);
    }
    for list in ann_by_class.values_mut() {
        list.sort_by_key(|&i| (annotations[i].bbox.x, annotations[i].bbox.y, &annotations[i].id));
    }
    let mut det_order: Vec<usize> = (0..detections.len()).collect();
    det_order.sort_by(|&a, &b| {
        let da = &detections[a];
        let db = &detections[b];
        db.confidence
            .total_cmp(&da.confidence)
            .then(da.bbox.x.cmp(&db.bbox.x))
            .then(da.bbox.y.cmp(&db.bbox.y))
            .then(da.id.cmp(&db.id))
    });

    let mut ann_taken = vec![false; annotations.len()];
    let mut det_matched = vec![false; detections.len()];
    let mut pairs = Vec::new();
    for &d in &det_order {
        let Some(candidates) = ann_by_class.get(&detections[d].class) else {
            continue;
        };
        let mut best: Option<(f64, usize)> = None;
        for &a in candidates {
            if ann_taken[a] {
                continue;
            }
            let overlap = iou(&annotations[a].bbox, &detections[d].bbox);
            if overlap < iou_threshold || overlap == 0.0 {
                continue;
            }
            // Strictly greater keeps the first candidate on ties, and the
            // candidate list is already in canonical order.
            if best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, a));
            }
        }
        if let Some((overlap, a)) = best {
            ann_taken[a] = true;
            det_matched[d] = true;
            pairs.push(ObjectMatch { annotation: a, detection: d, iou: overlap });
        }
    }
    pairs.sort_by_key(|p| p.annotation);
    Ok(MatchResult {
        pairs,
        unmatched_annotations: (0..annotations.len()).filter(|&i| !ann_taken[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&i| !det_matched[i]).collect(),
    })
}

/// Precision and recall for one class. The zero-denominator convention
/// matches the chunk metric: no detections means precision 1.0, no
/// annotations means recall 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassPr {
    pub precision: f64,
    pub recall: f64,
    pub matched: u64,
    pub n_annotations: u64,
    pub n_detections: u64,
}

/// Per-class table plus macro (unweighted mean over listed classes) and
/// micro (pooled counts) averages. Classes with neither annotations nor
/// detections are omitted; with nothing at all, the averages default to 1.0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrReport {
    pub per_class: BTreeMap<DefectClass, ClassPr>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
}

pub fn per_class_pr(
    annotations: &[Annotation],
    detections: &[Detection],
    matches: &MatchResult,
) -> PrReport {
    fn entry(table: &mut BTreeMap<DefectClass, ClassPr>, class: DefectClass) -> &mut ClassPr {
        table.entry(class).or_insert(ClassPr {
            precision: 0.0,
            recall: 0.0,
            matched: 0,
            n_annotations: 0,
            n_detections: 0,
        })
    }
    let mut table: BTreeMap<DefectClass, ClassPr> = BTreeMap::new();
    for a in annotations {
        entry(&mut table, a.class).n_annotations += 1;
    }
    for d in detections {
        entry(&mut table, d.class).n_detections += 1;
    }
    for pair in &matches.pairs {
        entry(&mut table, annotations[pair.annotation].class).matched += 1;
    }

    let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let (mut matched, mut anns, mut dets) = (0u64, 0u64, 0u64);
    for pr in table.values_mut() {
        pr.precision = ratio(pr.matched, pr.n_detections);
        pr.recall = ratio(pr.matched, pr.n_annotations);
        matched += pr.matched;
        anns += pr.n_annotations;
        dets += pr.n_detections;
    }
    let n = table.len() as f64;
    let (macro_precision, macro_recall) = if table.is_empty() {
        (1.0, 1.0)
    } else {
        (
            table.values().map(|c| c.precision).sum::<f64>() / n,
            table.values().map(|c| c.recall).sum::<f64>() / n,
        )
    };
    PrReport {
        per_class: table,
        macro_precision,
        macro_recall,
        micro_precision: ratio(matched, dets),
        micro_recall: ratio(matched, anns),
    }
}

/// Histogram of missed annotations by condition class. The assessment
/// standard reports conditions 2 and 3 as one band, so the table view
/// merges them; the raw counts stay separate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SeverityReport {
    /// Missed annotations per condition class 0..=4.
    pub missed_by_condition: [u64; 5],
    pub total_annotations: u64,
}

impl SeverityReport {
    pub fn total_missed(&self) -> u64 {
        self.missed_by_condition.iter().sum()
    }

    /// Conditions 0 and 1: findings whose miss matters most.
    pub fn severe_missed(&self) -> u64 {
        self.missed_by_condition[0] + self.missed_by_condition[1]
    }

    /// Table rows in reporting order: condition label, severity label, count.
    pub fn rows(&self) -> Vec<(String, String, u64)> {
        vec![
            ("0".into(), Severity::VerySevere.label().into(), self.missed_by_condition[0]),
            ("1".into(), Severity::Severe.label().into(), self.missed_by_condition[1]),
            (
                "2 & 3".into(),
                format!("{} & {}", Severity::Medium.label(), Severity::Slight.label()),
                self.missed_by_condition[2] + self.missed_by_condition[3],
            ),
            ("4".into(), Severity::Minor.label().into(), self.missed_by_condition[4]),
        ]
    }
}

pub fn fn_severity_report(annotations: &[Annotation], matches: &MatchResult) -> SeverityReport {
    let mut report = SeverityReport {
        missed_by_condition: [0; 5],
        total_annotations: annotations.len() as u64,
    };
    for &i in &matches.unmatched_annotations {
        report.missed_by_condition[annotations[i].severity.condition() as usize] += 1;
    }
    report
}
