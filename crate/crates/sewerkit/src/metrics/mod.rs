//! Evaluation: running-meter chunk scoring, object-level precision/recall,
//! average precision, and missed-finding severity breakdowns.
//!
//! [`evaluate_pipe`] scores one mosaic; [`evaluate_corpus`] pools any number
//! of pipes into a single [`EvalReport`]. Chunk scoring happens per pipe and
//! the confusion counts are summed; object matching never crosses pipe
//! boundaries but the per-class tables pool all pairs; average precision
//! ranks detections across the whole corpus.

pub mod ap;
pub mod chunks;
pub mod objects;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ap::{ap_suite, average_precision, interpolated_precision_curve, ApSuite, ClassApRow};
pub use chunks::{
    chunk_confusion, chunk_grid, summary_stats, Chunk, ChunkVerdict, ConfusionCounts,
    SummaryStats, Verdict,
};
pub use objects::{
    fn_severity_report, match_objects, per_class_pr, ClassPr, MatchResult, ObjectMatch, PrReport,
    SeverityReport,
};

use crate::domain::{Annotation, CylindricalSpan, Detection, MosaicGeometry};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{name} must be positive, got {value}")]
    NonPositiveParam { name: &'static str, value: i64 },
    #[error("{name} must lie in [0, 1], got {value}")]
    BadFraction { name: &'static str, value: f64 },
    #[error("nothing to evaluate: no chunks were produced")]
    EmptyEvaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Axial chunk width of the running-meter metric.
    pub chunk_width_px: i64,
    /// IoU threshold of the object-level matcher (the AP suite always uses
    /// its own 0.50..0.95 sweep).
    pub object_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { chunk_width_px: 600, object_iou: 0.5 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.chunk_width_px <= 0 {
            return Err(MetricsError::NonPositiveParam {
                name: "chunk_width_px",
                value: self.chunk_width_px,
            });
        }
        if !(0.0..=1.0).contains(&self.object_iou) {
            return Err(MetricsError::BadFraction { name: "object_iou", value: self.object_iou });
        }
        Ok(())
    }
}

/// Everything the evaluator needs to know about one pipe.
#[derive(Debug, Clone, Copy)]
pub struct PipeEvalInput<'a> {
    pub geometry: &'a MosaicGeometry,
    pub annotations: &'a [Annotation],
    pub detections: &'a [Detection],
    pub spans: &'a [CylindricalSpan],
}

/// Stitched spans scored as boxes: each contributes its two parts as
/// detections named `{id}.top` and `{id}.bottom`, both at the span
/// confidence. Ground truth cut by the seam is annotated the same way, so
/// part-level scoring lines up.
pub fn flatten_spans(detections: &[Detection], spans: &[CylindricalSpan]) -> Vec<Detection> {
    let mut out = detections.to_vec();
    for span in spans {
        for (suffix, bbox) in [("top", span.top_part), ("bottom", span.bottom_part)] {
            out.push(Detection {
                id: format!("{}.{suffix}", span.id),
                class: span.class,
                bbox,
                confidence: span.confidence,
                merged_from: Vec::new(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub pipe_count: usize,
    pub meters_evaluated: f64,
    pub chunk_width_px: i64,
    pub object_iou: f64,
    pub chunk_counts: ConfusionCounts,
    pub chunk_stats: SummaryStats,
    pub pr: PrReport,
    pub ap: ApSuite,
    pub severity: SeverityReport,
}

pub fn evaluate_pipe(input: PipeEvalInput<'_>, config: &EvalConfig) -> Result<EvalReport, MetricsError> {
    evaluate_corpus(&[input], config)
}

pub fn evaluate_corpus(
    pipes: &[PipeEvalInput<'_>],
    config: &EvalConfig,
) -> Result<EvalReport, MetricsError> {
    config.validate()?;
    let flattened: Vec<Vec<Detection>> =
        pipes.iter().map(|p| flatten_spans(p.detections, p.spans)).collect();

    let mut chunk_counts = ConfusionCounts::default();
    let mut meters = 0.0;
    for (pipe, dets) in pipes.iter().zip(&flattened) {
        let grid = chunk_grid(pipe.geometry.width_px, config.chunk_width_px)?;
        let (_, counts) = chunk_confusion(&grid, pipe.annotations, dets);
        chunk_counts.add(&counts);
        meters += pipe.geometry.length_m();
    }
    let chunk_stats = summary_stats(&chunk_counts)?;

    // Object matching stays within each pipe; indices are then shifted onto
    // the concatenated slices so one pooled table covers the corpus.
    let mut all_annotations: Vec<Annotation> = Vec::new();
    let mut all_detections: Vec<Detection> = Vec::new();
    let mut combined = MatchResult::default();
    for (pipe, dets) in pipes.iter().zip(&flattened) {
        let result = match_objects(pipe.annotations, dets, config.object_iou)?;
        let (ann_base, det_base) = (all_annotations.len(), all_detections.len());
        combined.pairs.extend(result.pairs.iter().map(|p| ObjectMatch {
            annotation: p.annotation + ann_base,
            detection: p.detection + det_base,
            iou: p.iou,
        }));
        combined
            .unmatched_annotations
            .extend(result.unmatched_annotations.iter().map(|&i| i + ann_base));
        combined
            .unmatched_detections
            .extend(result.unmatched_detections.iter().map(|&i| i + det_base));
        all_annotations.extend_from_slice(pipe.annotations);
        all_detections.extend_from_slice(dets);
    }
    let pr = per_class_pr(&all_annotations, &all_detections, &combined);
    let severity = fn_severity_report(&all_annotations, &combined);

    let ap_inputs: Vec<(&[Annotation], &[Detection])> = pipes
        .iter()
        .zip(&flattened)
        .map(|(pipe, dets)| (pipe.annotations, dets.as_slice()))
        .collect();
    let ap = ap_suite(&ap_inputs);

    Ok(EvalReport {
        pipe_count: pipes.len(),
        meters_evaluated: meters,
        chunk_width_px: config.chunk_width_px,
        object_iou: config.object_iou,
        chunk_counts,
        chunk_stats,
        pr,
        ap,
        severity,
    })
}

/// Plain-text rendering of a report, one section per metric family.
pub fn render_text(report: &EvalReport) -> String {
    use std::fmt::Write;
    let pct = |v: f64| format!("{:.2}%", v * 100.0);
    let mut out = String::new();

    let c = &report.chunk_counts;
    let s = &report.chunk_stats;
    let _ = writeln!(
        out,
        "running-meter chunks ({} px wide, {} chunks over {:.1} m, {} pipe{})",
        report.chunk_width_px,
        c.total(),
        report.meters_evaluated,
        report.pipe_count,
        if report.pipe_count == 1 { "" } else { "s" },
    );
    let _ = writeln!(
        out,
        "  TP {:>6}   FP {:>6}   TN {:>6}   FN {:>6}",
        c.true_positive, c.false_positive, c.true_negative, c.false_negative
    );
    let _ = writeln!(
        out,
        "  accuracy {}   precision {}   recall {}   f1 {}",
        pct(s.accuracy),
        pct(s.precision),
        pct(s.recall),
        pct(s.f1)
    );

    let _ = writeln!(out, "\nobject matches (IoU >= {:.2})", report.object_iou);
    let _ = writeln!(
        out,
        "  {:<32} {:>6} {:>6} {:>7} {:>10} {:>8}",
        "class", "anns", "dets", "matched", "precision", "recall"
    );
    for (class, row) in &report.pr.per_class {
        let _ = writeln!(
            out,
            "  {:<32} {:>6} {:>6} {:>7} {:>10} {:>8}",
            format!("{} {}", class.code(), class.name()),
            row.n_annotations,
            row.n_detections,
            row.matched,
            pct(row.precision),
            pct(row.recall)
        );
    }
    let _ = writeln!(
        out,
        "  {:<32} {:>6} {:>6} {:>7} {:>10} {:>8}",
        "macro",
        "",
        "",
        "",
        pct(report.pr.macro_precision),
        pct(report.pr.macro_recall)
    );
    let _ = writeln!(
        out,
        "  {:<32} {:>6} {:>6} {:>7} {:>10} {:>8}",
        "micro",
        "",
        "",
        "",
        pct(report.pr.micro_precision),
        pct(report.pr.micro_recall)
    );

    let _ = writeln!(out, "\naverage precision (101-point interpolation)");
    let _ = writeln!(
        out,
        "  {:<32} {:>6} {:>8} {:>8} {:>9}",
        "class", "anns", "AP50", "AP75", "AP50:95"
    );
    for (class, row) in &report.ap.per_class {
        let _ = writeln!(
            out,
            "  {:<32} {:>6} {:>8} {:>8} {:>9}",
            format!("{} {}", class.code(), class.name()),
            row.n_annotations,
            pct(row.ap[&50]),
            pct(row.ap[&75]),
            pct(row.ap5095)
        );
    }
    let _ = writeln!(
        out,
        "  mAP50 {}   mAP75 {}   mAP50:95 {}",
        pct(report.ap.map50),
        pct(report.ap.map75),
        pct(report.ap.map5095)
    );

    let _ = writeln!(
        out,
        "\nmissed annotations by condition ({} of {} missed)",
        report.severity.total_missed(),
        report.severity.total_annotations
    );
    for (condition, label, count) in report.severity.rows() {
        let _ = writeln!(out, "  {:<6} {:<16} {:>6}", condition, label, count);
    }
    let _ = writeln!(
        out,
        "  conditions 0-1 missed: {}",
        report.severity.severe_missed()
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DefectClass, Material, PixelBox, Severity};

    fn geometry(pipe_id: &str, width_px: i64) -> MosaicGeometry {
        MosaicGeometry {
            pipe_id: pipe_id.into(),
            width_px,
            height_px: 1200,
            px_per_meter_axial: 200.0,
            material: Material::Concrete,
            joint_positions_px: vec![],
        }
    }

    fn ann(id: &str, class: DefectClass, bbox: PixelBox) -> Annotation {
        Annotation { id: id.into(), class, bbox, severity: Severity::Medium }
    }

    fn det(id: &str, class: DefectClass, bbox: PixelBox, confidence: f64) -> Detection {
        Detection { id: id.into(), class, bbox, confidence, merged_from: vec![] }
    }

    #[test]
    fn flatten_spans_scores_parts_as_detections() {
        let spans = vec![CylindricalSpan {
            id: "s0".into(),
            class: DefectClass::Root,
            top_part: PixelBox::new(100, 0, 200, 300),
            bottom_part: PixelBox::new(120, 900, 180, 300),
            confidence: 0.8,
        }];
        let base = vec![det("d0", DefectClass::Fissure, PixelBox::new(0, 0, 10, 10), 0.9)];
        let flat = flatten_spans(&base, &spans);
        assert_eq!(flat.len(), 3);
        assert_eq!(flat[1].id, "s0.top");
        assert_eq!(flat[2].id, "s0.bottom");
        assert_eq!(flat[2].bbox, PixelBox::new(120, 900, 180, 300));
        assert_eq!(flat[1].confidence, 0.8);
    }

    #[test]
    fn single_pipe_report_end_to_end() {
        let geometry = geometry("p1", 2400);
        // Chunk 0 TP, chunk 1 FN (missed), chunk 2 FP, chunk 3 TN.
        let annotations = vec![
            ann("a0", DefectClass::Fissure, PixelBox::new(100, 100, 50, 50)),
            ann("a1", DefectClass::Root, PixelBox::new(700, 100, 50, 50)),
        ];
        let detections = vec![
            det("d0", DefectClass::Fissure, PixelBox::new(100, 100, 50, 50), 0.9),
            det("d1", DefectClass::Obstacle, PixelBox::new(1300, 100, 50, 50), 0.7),
        ];
        let input = PipeEvalInput {
            geometry: &geometry,
            annotations: &annotations,
            detections: &detections,
            spans: &[],
        };
        let report = evaluate_pipe(input, &EvalConfig::default()).unwrap();
        assert_eq!(report.chunk_counts, ConfusionCounts::new(1, 1, 1, 1));
        assert_eq!(report.chunk_stats.accuracy, 0.5);
        assert_eq!(report.meters_evaluated, 12.0);
        assert_eq!(report.pr.per_class[&DefectClass::Fissure].matched, 1);
        assert_eq!(report.severity.total_missed(), 1);
        assert_eq!(report.ap.per_class[&DefectClass::Fissure].ap[&50], 1.0);

        let text = render_text(&report);
        assert!(text.contains("accuracy 50.00%"));
        assert!(text.contains("BAB fissure"));
        assert!(text.contains("mAP50"));
        assert!(text.contains("conditions 0-1 missed: 0"));
    }

    #[test]
    fn corpus_pools_pipes_without_cross_matching() {
        let g1 = geometry("p1", 600);
        let g2 = geometry("p2", 600);
        // Same coordinates in both pipes; the annotation lives in pipe 1 and
        // the detection in pipe 2, so nothing may match.
        let annotations = vec![ann("a", DefectClass::Fissure, PixelBox::new(10, 10, 50, 50))];
        let detections = vec![det("d", DefectClass::Fissure, PixelBox::new(10, 10, 50, 50), 0.9)];
        let inputs = [
            PipeEvalInput { geometry: &g1, annotations: &annotations, detections: &[], spans: &[] },
            PipeEvalInput { geometry: &g2, annotations: &[], detections: &detections, spans: &[] },
        ];
        let report = evaluate_corpus(&inputs, &EvalConfig::default()).unwrap();
        assert_eq!(report.pipe_count, 2);
        assert_eq!(report.chunk_counts, ConfusionCounts::new(0, 1, 0, 1));
        assert_eq!(report.pr.per_class[&DefectClass::Fissure].matched, 0);
        assert_eq!(report.severity.total_missed(), 1);
        assert_eq!(report.meters_evaluated, 6.0);
    }

    #[test]
    fn corpus_counts_add_up() {
        let g1 = geometry("p1", 2400);
        let g2 = geometry("p2", 1200);
        let a1 = vec![ann("a0", DefectClass::Root, PixelBox::new(100, 0, 50, 50))];
        let d1 = vec![det("d0", DefectClass::Root, PixelBox::new(100, 0, 50, 50), 0.9)];
        let a2 = vec![ann("a1", DefectClass::Root, PixelBox::new(700, 0, 50, 50))];
        let inputs = [
            PipeEvalInput { geometry: &g1, annotations: &a1, detections: &d1, spans: &[] },
            PipeEvalInput { geometry: &g2, annotations: &a2, detections: &[], spans: &[] },
        ];
        let report = evaluate_corpus(&inputs, &EvalConfig::default()).unwrap();
        // Pipe 1: TP, TN, TN, TN. Pipe 2: TN, FN.
        assert_eq!(report.chunk_counts, ConfusionCounts::new(1, 0, 4, 1));
        assert_eq!(report.chunk_counts.total(), 6);
    }

    #[test]
    fn config_validation() {
        let geometry = geometry("p", 600);
        let input =
            PipeEvalInput { geometry: &geometry, annotations: &[], detections: &[], spans: &[] };
        let bad_chunk = EvalConfig { chunk_width_px: 0, ..EvalConfig::default() };
        assert!(matches!(
            evaluate_pipe(input, &bad_chunk),
            Err(MetricsError::NonPositiveParam { name: "chunk_width_px", .. })
        ));
        let bad_iou = EvalConfig { object_iou: 1.5, ..EvalConfig::default() };
        assert!(matches!(
            evaluate_pipe(input, &bad_iou),
            Err(MetricsError::BadFraction { name: "object_iou", .. })
        ));
        assert!(matches!(evaluate_corpus(&[], &EvalConfig::default()), Err(MetricsError::EmptyEvaluation)));
    }
}
