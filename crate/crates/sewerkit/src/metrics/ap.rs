//! 101-point interpolated average precision.
//!
//! Detections are ranked by confidence across the whole corpus (ties:
//! ascending pipe, x, y, id) and matched greedily within their pipe: a
//! detection is a true positive when it claims a not-yet-matched annotation
//! of its class with IoU at or above the threshold. Average precision is
//! the mean of the interpolated precision (max precision at any recall at
//! least r) sampled at the 101 recall points 0.00, 0.01, ..., 1.00, and the
//! map figures average over the IoU thresholds 0.50, 0.55, ..., 0.95.
//!
//! Classes without a single annotation have no defined recall axis and are
//! excluded from per-class tables and from every mean; when nothing at all
//! is annotated the means default to 1.0, consistent with the
//! zero-denominator convention used elsewhere.

use std::collections::BTreeMap;

use serde::Serialize;

use super::MetricsError;
use crate::domain::{iou, Annotation, DefectClass, Detection};

/// IoU thresholds of the map suite, as integer percent values.
pub const THRESHOLD_PERCENTS: [u8; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

const RECALL_POINTS: usize = 101;

/// Per-class AP at each suite threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassApRow {
    /// AP keyed by threshold percent (50, 55, ..., 95).
    pub ap: BTreeMap<u8, f64>,
    /// Mean over the ten thresholds.
    pub ap5095: f64,
    pub n_annotations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApSuite {
    pub per_class: BTreeMap<DefectClass, ClassApRow>,
    pub map50: f64,
    pub map75: f64,
    pub map5095: f64,
}

/// One class across the corpus: total annotations plus the ranked
/// detections, each carrying its pipe index and its IoU against every
/// annotation of the class in that pipe (annotations in canonical order).
struct ClassScenario {
    total_gt: usize,
    ann_count_per_pipe: Vec<usize>,
    ranked: Vec<(usize, Vec<f64>)>,
}

fn build_scenarios(pipes: &[(&[Annotation], &[Detection])]) -> BTreeMap<DefectClass, ClassScenario> {
    let mut scenarios: BTreeMap<DefectClass, ClassScenario> = BTreeMap::new();
    let empty = || ClassScenario {
        total_gt: 0,
        ann_count_per_pipe: vec![0; pipes.len()],
        ranked: Vec::new(),
    };
    // Canonical annotation order per (pipe, class).
    let mut ann_lists: BTreeMap<(usize, DefectClass), Vec<usize>> = BTreeMap::new();
    for (pipe, (annotations, _)) in pipes.iter().enumerate() {
        for (i, a) in annotations.iter().enumerate() {
            ann_lists.entry((pipe, a.class)).or_default().push(i);
        }
    }
    for ((pipe, class), list) in ann_lists.iter_mut() {
        let annotations = pipes[*pipe].0;
        list.sort_by_key(|&i| (annotations[i].bbox.x, annotations[i].bbox.y, &annotations[i].id));
        let scenario = scenarios.entry(*class).or_insert_with(empty);
        scenario.total_gt += list.len();
        scenario.ann_count_per_pipe[*pipe] = list.len();
    }

    // Rank detections per class: confidence descending, then pipe, x, y, id.
    let mut det_refs: BTreeMap<DefectClass, Vec<(usize, usize)>> = BTreeMap::new();
    for (pipe, (_, detections)) in pipes.iter().enumerate() {
        for (i, d) in detections.iter().enumerate() {
            det_refs.entry(d.class).or_default().push((pipe, i));
        }
    }
    for (class, mut refs) in det_refs {
        refs.sort_by(|&(pa, ia), &(pb, ib)| {
            let da = &pipes[pa].1[ia];
            let db = &pipes[pb].1[ib];
            db.confidence
                .total_cmp(&da.confidence)
                .then(pa.cmp(&pb))
                .then(da.bbox.x.cmp(&db.bbox.x))
                .then(da.bbox.y.cmp(&db.bbox.y))
                .then(da.id.cmp(&db.id))
        });
        let scenario = scenarios.entry(class).or_insert_with(empty);
        scenario.ranked = refs
            .into_iter()
            .map(|(pipe, i)| {
                let d = &pipes[pipe].1[i];
                let ious = ann_lists
                    .get(&(pipe, class))
                    .map(|list| {
                        list.iter().map(|&a| iou(&pipes[pipe].0[a].bbox, &d.bbox)).collect()
                    })
                    .unwrap_or_default();
                (pipe, ious)
            })
            .collect();
    }
    scenarios
}

/// Greedy matching at one threshold: cumulative (tp, fp) after every ranked
/// detection.
fn cumulative_points(scenario: &ClassScenario, iou_threshold: f64) -> Vec<(u64, u64)> {
    let mut taken: Vec<Vec<bool>> =
        scenario.ann_count_per_pipe.iter().map(|&n| vec![false; n]).collect();
    let mut points = Vec::with_capacity(scenario.ranked.len());
    let (mut tp, mut fp) = (0u64, 0u64);
    for (pipe, ious) in &scenario.ranked {
        let mut best: Option<(f64, usize)> = None;
        for (a, &overlap) in ious.iter().enumerate() {
            if taken[*pipe][a] || overlap < iou_threshold || overlap == 0.0 {
                continue;
            }
            if best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, a));
            }
        }
        match best {
            Some((_, a)) => {
                taken[*pipe][a] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        points.push((tp, fp));
    }
    points
}

/// Interpolated precision at the 101 recall grid points. Exact integer
/// comparison `100 * tp >= k * total` decides whether a point reaches grid
/// recall k/100, so boundary cases never depend on float rounding.
fn interpolated_curve(points: &[(u64, u64)], total_gt: usize) -> [f64; RECALL_POINTS] {
    let total = total_gt as u64;
    let mut curve = [0.0; RECALL_POINTS];
    // Suffix maxima of precision over the ranked prefix points.
    let mut suffix: Vec<f64> = vec![0.0; points.len() + 1];
    for (i, &(tp, fp)) in points.iter().enumerate().rev() {
        let precision = tp as f64 / (tp + fp) as f64;
        suffix[i] = suffix[i + 1].max(precision);
    }
    // Points are in ranking order with non-decreasing tp; for grid point k
    // the first prefix reaching the recall is found by linear sweep.
    let mut first_reaching = 0usize;
    for (k, slot) in curve.iter_mut().enumerate() {
        while first_reaching < points.len()
            && 100 * points[first_reaching].0 < k as u64 * total
        {
            first_reaching += 1;
        }
        *slot = if first_reaching < points.len() { suffix[first_reaching] } else { 0.0 };
    }
    curve
}

fn ap_from_curve(curve: &[f64; RECALL_POINTS]) -> f64 {
    curve.iter().sum::<f64>() / RECALL_POINTS as f64
}

fn check_threshold(iou_threshold: f64) -> Result<(), MetricsError> {
    if (0.0..=1.0).contains(&iou_threshold) {
        Ok(())
    } else {
        Err(MetricsError::BadFraction { name: "iou_threshold", value: iou_threshold })
    }
}

/// AP of one class at one threshold; `None` when the class has no
/// annotations.
pub fn average_precision(
    annotations: &[Annotation],
    detections: &[Detection],
    class: DefectClass,
    iou_threshold: f64,
) -> Result<Option<f64>, MetricsError> {
    Ok(interpolated_precision_curve(annotations, detections, class, iou_threshold)?
        .map(|curve| ap_from_curve(&curve)))
}

/// The 101 interpolated precision values behind [`average_precision`], in
/// recall order 0.00..=1.00. Non-increasing by construction.
pub fn interpolated_precision_curve(
    annotations: &[Annotation],
    detections: &[Detection],
    class: DefectClass,
    iou_threshold: f64,
) -> Result<Option<[f64; RECALL_POINTS]>, MetricsError> {
    check_threshold(iou_threshold)?;
    let scenarios = build_scenarios(&[(annotations, detections)]);
    let Some(scenario) = scenarios.get(&class) else {
        return Ok(None);
    };
    if scenario.total_gt == 0 {
        return Ok(None);
    }
    let points = cumulative_points(scenario, iou_threshold);
    Ok(Some(interpolated_curve(&points, scenario.total_gt)))
}

/// Whole-suite evaluation over one or more pipes.
pub fn ap_suite(pipes: &[(&[Annotation], &[Detection])]) -> ApSuite {
    let scenarios = build_scenarios(pipes);
    let mut per_class = BTreeMap::new();
    for (class, scenario) in &scenarios {
        if scenario.total_gt == 0 {
            continue;
        }
        let mut ap = BTreeMap::new();
        for percent in THRESHOLD_PERCENTS {
            let points = cumulative_points(scenario, percent as f64 / 100.0);
            let curve = interpolated_curve(&points, scenario.total_gt);
            ap.insert(percent, ap_from_curve(&curve));
        }
        let ap5095 = ap.values().sum::<f64>() / ap.len() as f64;
        per_class.insert(
            *class,
            ClassApRow { ap, ap5095, n_annotations: scenario.total_gt as u64 },
        );
    }
    let mean_at = |percent: u8| -> f64 {
        if per_class.is_empty() {
            1.0
        } else {
            per_class.values().map(|row| row.ap[&percent]).sum::<f64>() / per_class.len() as f64
        }
    };
    let map50 = mean_at(50);
    let map75 = mean_at(75);
    let map5095 = if per_class.is_empty() {
        1.0
    } else {
        per_class.values().map(|row| row.ap5095).sum::<f64>() / per_class.len() as f64
    };
    ApSuite { per_class, map50, map75, map5095 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PixelBox, Severity};

    fn ann(id: &str, class: DefectClass, bbox: PixelBox) -> Annotation {
        Annotation { id: id.into(), class, bbox, severity: Severity::Medium }
    }

    fn det(id: &str, class: DefectClass, bbox: PixelBox, confidence: f64) -> Detection {
        Detection { id: id.into(), class, bbox, confidence, merged_from: vec![] }
    }

    /// The canonical three-detection trace: TP at 0.9, FP at 0.8, TP at 0.7
    /// over two annotations.
    fn three_det_fixture() -> (Vec<Annotation>, Vec<Detection>) {
        let annotations = vec![
            ann("a0", DefectClass::Fissure, PixelBox::new(0, 0, 100, 100)),
            ann("a1", DefectClass::Fissure, PixelBox::new(500, 0, 100, 100)),
        ];
        let detections = vec![
            det("d0", DefectClass::Fissure, PixelBox::new(0, 0, 100, 100), 0.9),
            det("d1", DefectClass::Fissure, PixelBox::new(2000, 0, 50, 50), 0.8),
            det("d2", DefectClass::Fissure, PixelBox::new(500, 0, 100, 100), 0.7),
        ];
        (annotations, detections)
    }

    #[test]
    fn known_three_detection_trace() {
        let (annotations, detections) = three_det_fixture();
        let got = average_precision(&annotations, &detections, DefectClass::Fissure, 0.5)
            .unwrap()
            .unwrap();
        // 51 grid points see precision 1.0 (recall up to 0.50), the other
        // 50 see 2/3.
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((got - expected).abs() < 1e-9, "got {got}, expected {expected}");
        assert!((got - 0.835).abs() < 5e-4);
    }

    #[test]
    fn matches_brute_force_prefix_oracle() {
        // Independent derivation: for every grid point walk all ranked
        // prefixes and take the best precision among those whose recall
        // reaches it.
        let (annotations, detections) = three_det_fixture();
        let verdicts = [true, false, true]; // rank order d0, d1, d2
        let total_gt = 2u64;
        let mut oracle_sum = 0.0;
        for k in 0..=100u64 {
            let mut best = 0.0f64;
            let (mut tp, mut n) = (0u64, 0u64);
            for &is_tp in &verdicts {
                n += 1;
                if is_tp {
                    tp += 1;
                }
                if 100 * tp >= k * total_gt {
                    best = best.max(tp as f64 / n as f64);
                }
            }
            oracle_sum += best;
        }
        let oracle = oracle_sum / 101.0;
        let got = average_precision(&annotations, &detections, DefectClass::Fissure, 0.5)
            .unwrap()
            .unwrap();
        assert!((got - oracle).abs() < 1e-12, "got {got}, oracle {oracle}");
    }

    #[test]
    fn perfect_detections_score_exactly_one() {
        let annotations = vec![
            ann("a0", DefectClass::Root, PixelBox::new(0, 0, 80, 80)),
            ann("a1", DefectClass::Root, PixelBox::new(300, 100, 60, 60)),
            ann("a2", DefectClass::Root, PixelBox::new(900, 500, 40, 40)),
        ];
        let detections: Vec<Detection> = annotations
            .iter()
            .map(|a| det(&format!("d-{}", a.id), a.class, a.bbox, 1.0))
            .collect();
        for percent in THRESHOLD_PERCENTS {
            let got = average_precision(
                &annotations,
                &detections,
                DefectClass::Root,
                percent as f64 / 100.0,
            )
            .unwrap()
            .unwrap();
            assert_eq!(got, 1.0, "threshold {percent}");
        }
        let suite = ap_suite(&[(&annotations, &detections)]);
        assert_eq!(suite.map50, 1.0);
        assert_eq!(suite.map5095, 1.0);
    }

    #[test]
    fn curve_is_non_increasing_and_rank_invariant() {
        let (annotations, mut detections) = three_det_fixture();
        let curve = interpolated_precision_curve(&annotations, &detections, DefectClass::Fissure, 0.5)
            .unwrap()
            .unwrap();
        for pair in curve.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
        let before = average_precision(&annotations, &detections, DefectClass::Fissure, 0.5)
            .unwrap()
            .unwrap();
        detections.reverse();
        let after = average_precision(&annotations, &detections, DefectClass::Fissure, 0.5)
            .unwrap()
            .unwrap();
        assert_eq!(before, after, "input order must not matter");
    }

    #[test]
    fn no_annotations_means_no_ap() {
        let detections = vec![det("d", DefectClass::Obstacle, PixelBox::new(0, 0, 10, 10), 0.9)];
        assert!(average_precision(&[], &detections, DefectClass::Obstacle, 0.5)
            .unwrap()
            .is_none());
        let suite = ap_suite(&[(&[][..], &detections[..])]);
        assert!(suite.per_class.is_empty());
        assert_eq!(suite.map50, 1.0, "vacuous mean follows the 1.0 convention");
        assert!(average_precision(&[], &detections, DefectClass::Obstacle, 1.5).is_err());
    }

    #[test]
    fn suite_threshold_sweep() {
        // Class A: exact detection. Class B: IoU exactly 0.6, so it is a TP
        // at thresholds 50-60 and an FP at 65-95.
        let annotations = vec![
            ann("a", DefectClass::Fissure, PixelBox::new(0, 0, 100, 100)),
            ann("b", DefectClass::Root, PixelBox::new(1000, 0, 100, 100)),
        ];
        let detections = vec![
            det("da", DefectClass::Fissure, PixelBox::new(0, 0, 100, 100), 0.9),
            det("db", DefectClass::Root, PixelBox::new(1025, 0, 100, 100), 0.9),
        ];
        let suite = ap_suite(&[(&annotations, &detections)]);
        assert_eq!(suite.map50, 1.0);
        assert_eq!(suite.map75, 0.5);
        assert!((suite.map5095 - 0.65).abs() < 1e-12);
        let root = &suite.per_class[&DefectClass::Root];
        assert_eq!(root.ap[&60], 1.0);
        assert_eq!(root.ap[&65], 0.0);
    }

    #[test]
    fn corpus_ranking_spans_pipes() {
        // One annotation per pipe; the cross-pipe FP outranks the second
        // pipe's TP, which must depress AP exactly as in a single ranking.
        let ann_a = vec![ann("a", DefectClass::Fissure, PixelBox::new(0, 0, 100, 100))];
        let det_a = vec![
            det("tp-a", DefectClass::Fissure, PixelBox::new(0, 0, 100, 100), 0.9),
            det("fp-a", DefectClass::Fissure, PixelBox::new(5000, 0, 50, 50), 0.8),
        ];
        let ann_b = vec![ann("b", DefectClass::Fissure, PixelBox::new(0, 0, 100, 100))];
        let det_b = vec![det("tp-b", DefectClass::Fissure, PixelBox::new(0, 0, 100, 100), 0.7)];
        let suite = ap_suite(&[(&ann_a, &det_a), (&ann_b, &det_b)]);
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((suite.per_class[&DefectClass::Fissure].ap[&50] - expected).abs() < 1e-9);
    }
}
