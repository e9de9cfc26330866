//! Simulated detector with dialled-in failure modes.
//!
//! Each annotation is independently detected with a per-class probability,
//! its box jittered, and optionally duplicated; false positives land
//! uniformly on annotation-free area. With `seam_split` on, a detected
//! annotation touching row 0 is emitted as two edge-touching parts (the way
//! a ceiling defect shows up on both borders of an unrolled mosaic), which
//! is exactly what seam stitching exists to undo.
//!
//! The perfect profile reproduces the annotations verbatim at confidence
//! 1.0, giving every downstream metric a known-answer input.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::generate::SizeRange;
use super::SynthError;
use crate::domain::{Annotation, DefectClass, Detection, MosaicGeometry, PixelBox};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorProfile {
    /// Base detection probability; per-class entries override it.
    pub detect_prob: f64,
    pub per_class_detect_prob: BTreeMap<DefectClass, f64>,
    /// Gaussian jitter applied to box centers and sizes, in pixels.
    pub center_jitter_px: f64,
    pub size_jitter_px: f64,
    /// Chance of emitting each further duplicate, up to the cap.
    pub duplicate_prob: f64,
    pub max_duplicates: u32,
    /// Expected false positives per 100 m, per class.
    pub fp_per_100m: BTreeMap<DefectClass, f64>,
    pub fp_size_px: SizeRange,
    /// Uniform confidence ranges for true and false detections.
    pub tp_confidence: (f64, f64),
    pub fp_confidence: (f64, f64),
    /// Emit seam-touching boxes as two edge-touching parts.
    pub seam_split: bool,
}

impl Default for DetectorProfile {
    /// A plausibly noisy detector, useful for demos and statistical tests.
    fn default() -> Self {
        let fp_per_100m = [
            (DefectClass::SettledDeposit, 2.0),
            (DefectClass::Fissure, 2.0),
            (DefectClass::Obstacle, 1.0),
        ]
        .into_iter()
        .collect();
        DetectorProfile {
            detect_prob: 0.75,
            per_class_detect_prob: BTreeMap::new(),
            center_jitter_px: 8.0,
            size_jitter_px: 12.0,
            duplicate_prob: 0.15,
            max_duplicates: 2,
            fp_per_100m,
            fp_size_px: ((20, 200), (20, 200)),
            tp_confidence: (0.6, 1.0),
            fp_confidence: (0.1, 0.6),
            seam_split: true,
        }
    }
}

impl DetectorProfile {
    /// Detects everything exactly: no jitter, no duplicates, no false
    /// positives, no splitting, confidence 1.0.
    pub fn perfect() -> Self {
        DetectorProfile {
            detect_prob: 1.0,
            per_class_detect_prob: BTreeMap::new(),
            center_jitter_px: 0.0,
            size_jitter_px: 0.0,
            duplicate_prob: 0.0,
            max_duplicates: 0,
            fp_per_100m: BTreeMap::new(),
            fp_size_px: ((20, 200), (20, 200)),
            tp_confidence: (1.0, 1.0),
            fp_confidence: (0.1, 0.6),
            seam_split: false,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |reason: String| Err(SynthError::InvalidProfile { reason });
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.detect_prob) {
            return fail(format!("detect_prob must lie in [0, 1], got {}", self.detect_prob));
        }
        for (class, &p) in &self.per_class_detect_prob {
            if !prob_ok(p) {
                return fail(format!("detect probability for {class} must lie in [0, 1], got {p}"));
            }
        }
        if !prob_ok(self.duplicate_prob) {
            return fail(format!("duplicate_prob must lie in [0, 1], got {}", self.duplicate_prob));
        }
        for (name, sigma) in
            [("center_jitter_px", self.center_jitter_px), ("size_jitter_px", self.size_jitter_px)]
        {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return fail(format!("{name} must be a non-negative finite number, got {sigma}"));
            }
        }
        for (class, &rate) in &self.fp_per_100m {
            if !(rate >= 0.0 && rate.is_finite()) {
                return fail(format!("fp rate for {class} must be non-negative, got {rate}"));
            }
        }
        let ((w0, w1), (h0, h1)) = self.fp_size_px;
        if w0 < 1 || w0 > w1 || h0 < 1 || h0 > h1 {
            return fail("fp_size_px must be ordered ranges of at least 1 px".into());
        }
        for (name, (lo, hi)) in
            [("tp_confidence", self.tp_confidence), ("fp_confidence", self.fp_confidence)]
        {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return fail(format!("{name} must be an ordered range within [0, 1]"));
            }
        }
        Ok(())
    }

    fn detect_prob_for(&self, class: DefectClass) -> f64 {
        self.per_class_detect_prob.get(&class).copied().unwrap_or(self.detect_prob)
    }
}

/// One Gaussian offset, rounded to pixels; draws nothing when sigma is 0.
fn jitter_px(rng: &mut ChaCha12Rng, sigma: f64) -> i64 {
    if sigma <= 0.0 {
        0
    } else {
        Normal::new(0.0, sigma).expect("validated sigma").sample(rng).round() as i64
    }
}

/// Jitters width, height, x, y in that fixed order and clamps into bounds.
fn jittered_box(
    rng: &mut ChaCha12Rng,
    bbox: &PixelBox,
    profile: &DetectorProfile,
    width: i64,
    height: i64,
) -> PixelBox {
    let w = (bbox.w + jitter_px(rng, profile.size_jitter_px)).clamp(1, width);
    let h = (bbox.h + jitter_px(rng, profile.size_jitter_px)).clamp(1, height);
    let x = (bbox.x + jitter_px(rng, profile.center_jitter_px)).clamp(0, width - w);
    let y = (bbox.y + jitter_px(rng, profile.center_jitter_px)).clamp(0, height - h);
    PixelBox::new(x, y, w, h)
}

fn confidence(rng: &mut ChaCha12Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..=range.1)
}

fn poisson_count(rng: &mut ChaCha12Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("validated lambda").sample(rng) as u64
}

pub fn simulate_detector(
    geometry: &MosaicGeometry,
    annotations: &[Annotation],
    profile: &DetectorProfile,
    seed: u64,
) -> Result<Vec<Detection>, SynthError> {
    profile.validate()?;
    let (width, height) = (geometry.width_px, geometry.height_px);
    let mut rng = seed::rng(seed, &[seed::stream::DETECTOR]);
    let mut detections = Vec::new();
    let mut next = 0usize;

    for annotation in annotations {
        if !rng.random_bool(profile.detect_prob_for(annotation.class)) {
            continue;
        }
        let b = &annotation.bbox;
        if profile.seam_split && b.y == 0 && b.h >= 2 && b.bottom() < height {
            // Split at mid-height; the lower half wraps to the bottom edge.
            let h_top = (b.h + 1) / 2;
            let h_bottom = b.h - h_top;
            let top = {
                let w = (b.w + jitter_px(&mut rng, profile.size_jitter_px)).clamp(1, width);
                let h = (h_top + jitter_px(&mut rng, profile.size_jitter_px)).clamp(1, height - 1);
                let x = (b.x + jitter_px(&mut rng, profile.center_jitter_px)).clamp(0, width - w);
                PixelBox::new(x, 0, w, h)
            };
            let bottom = {
                let w = (b.w + jitter_px(&mut rng, profile.size_jitter_px)).clamp(1, width);
                let h =
                    (h_bottom + jitter_px(&mut rng, profile.size_jitter_px)).clamp(1, height - 1);
                let x = (b.x + jitter_px(&mut rng, profile.center_jitter_px)).clamp(0, width - w);
                PixelBox::new(x, height - h, w, h)
            };
            for (suffix, part) in [("top", top), ("bottom", bottom)] {
                detections.push(Detection {
                    id: format!("det-{next:04}-{suffix}"),
                    class: annotation.class,
                    bbox: part,
                    confidence: confidence(&mut rng, profile.tp_confidence),
                    merged_from: Vec::new(),
                });
            }
            next += 1;
            continue;
        }
        let mut copies = 1u32;
        while copies <= profile.max_duplicates && rng.random_bool(profile.duplicate_prob) {
            copies += 1;
        }
        for _ in 0..copies {
            detections.push(Detection {
                id: format!("det-{next:04}"),
                class: annotation.class,
                bbox: jittered_box(&mut rng, b, profile, width, height),
                confidence: confidence(&mut rng, profile.tp_confidence),
                merged_from: Vec::new(),
            });
            next += 1;
        }
    }

    // False positives: uniform over annotation-free area by rejection.
    let mut fp_next = 0usize;
    for class in DefectClass::ALL {
        let rate = profile.fp_per_100m.get(&class).copied().unwrap_or(0.0);
        let count = poisson_count(&mut rng, rate * geometry.length_m() / 100.0);
        for _ in 0..count {
            for _attempt in 0..100 {
                let w = rng.random_range(profile.fp_size_px.0 .0..=profile.fp_size_px.0 .1).clamp(1, width);
                let h =
                    rng.random_range(profile.fp_size_px.1 .0..=profile.fp_size_px.1 .1).clamp(1, height);
                let x = rng.random_range(0..=(width - w).max(0));
                let y = rng.random_range(0..=(height - h).max(0));
                let candidate = PixelBox::new(x, y, w, h);
                if annotations.iter().all(|a| a.bbox.intersection(&candidate).is_none()) {
                    detections.push(Detection {
                        id: format!("fp-{fp_next:04}"),
                        class,
                        bbox: candidate,
                        confidence: confidence(&mut rng, profile.fp_confidence),
                        merged_from: Vec::new(),
                    });
                    fp_next += 1;
                    break;
                }
            }
        }
    }
    Ok(detections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postproc::stitch_seam;
    use crate::synth::generate::{generate_pipe, PipeSpec};

    fn default_pipe(seed: u64) -> (MosaicGeometry, Vec<Annotation>) {
        generate_pipe(&PipeSpec::default(), seed).unwrap()
    }

    #[test]
    fn perfect_profile_reproduces_annotations() {
        let (geometry, annotations) = default_pipe(11);
        assert!(!annotations.is_empty());
        let detections =
            simulate_detector(&geometry, &annotations, &DetectorProfile::perfect(), 0).unwrap();
        assert_eq!(detections.len(), annotations.len());
        for (a, d) in annotations.iter().zip(&detections) {
            assert_eq!(a.bbox, d.bbox);
            assert_eq!(a.class, d.class);
            assert_eq!(d.confidence, 1.0);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (geometry, annotations) = default_pipe(12);
        let profile = DetectorProfile::default();
        let a = simulate_detector(&geometry, &annotations, &profile, 7).unwrap();
        let b = simulate_detector(&geometry, &annotations, &profile, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_detector(&geometry, &annotations, &profile, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn blind_detector_sees_nothing() {
        let (geometry, annotations) = default_pipe(13);
        let profile = DetectorProfile {
            detect_prob: 0.0,
            fp_per_100m: BTreeMap::new(),
            ..DetectorProfile::default()
        };
        let detections = simulate_detector(&geometry, &annotations, &profile, 0).unwrap();
        assert!(detections.is_empty());
    }

    #[test]
    fn duplicates_obey_the_cap() {
        let (geometry, annotations) = default_pipe(14);
        let profile = DetectorProfile {
            duplicate_prob: 1.0,
            max_duplicates: 2,
            seam_split: false,
            ..DetectorProfile::perfect()
        };
        let detections = simulate_detector(&geometry, &annotations, &profile, 0).unwrap();
        assert_eq!(detections.len(), annotations.len() * 3, "1 original + 2 duplicates each");
    }

    #[test]
    fn seam_split_parts_are_stitchable() {
        let mut spec = PipeSpec {
            rates_per_100m: BTreeMap::new(),
            seam_rate_per_100m: 8.0,
            ..PipeSpec::default()
        };
        spec.rates_per_100m.insert(DefectClass::Obstacle, 3.0);
        for seed in 0..10 {
            let (geometry, annotations) = generate_pipe(&spec, seed).unwrap();
            let planted = annotations.iter().filter(|a| a.bbox.y == 0).count();
            let profile = DetectorProfile { seam_split: true, ..DetectorProfile::perfect() };
            let detections = simulate_detector(&geometry, &annotations, &profile, seed).unwrap();
            let tops = detections
                .iter()
                .filter(|d| d.bbox.y == 0 && d.bbox.bottom() < geometry.height_px)
                .count();
            let bottoms = detections
                .iter()
                .filter(|d| d.bbox.y > 0 && d.bbox.bottom() == geometry.height_px)
                .count();
            assert_eq!(tops, planted, "seed {seed}");
            assert_eq!(bottoms, planted, "seed {seed}");
            let (rest, spans) = stitch_seam(detections.clone(), &geometry, 0.1).unwrap();
            assert_eq!(spans.len(), planted, "seed {seed}");
            assert_eq!(rest.len(), detections.len() - 2 * planted, "parts leave the box list");
        }
    }

    #[test]
    fn recall_tracks_detect_probability() {
        use crate::metrics::match_objects;
        let mut spec = PipeSpec {
            rates_per_100m: BTreeMap::new(),
            seam_rate_per_100m: 0.0,
            length_m: 10_000.0,
            ..PipeSpec::default()
        };
        spec.rates_per_100m.insert(DefectClass::Obstacle, 50.0);
        let (geometry, annotations) = generate_pipe(&spec, 20).unwrap();
        assert!(annotations.len() > 4000, "got {}", annotations.len());
        let profile = DetectorProfile {
            detect_prob: 0.8,
            fp_per_100m: BTreeMap::new(),
            ..DetectorProfile::perfect()
        };
        let detections = simulate_detector(&geometry, &annotations, &profile, 21).unwrap();
        let matches = match_objects(&annotations, &detections, 0.5).unwrap();
        let recall = matches.pairs.len() as f64 / annotations.len() as f64;
        assert!((recall - 0.8).abs() <= 0.02, "recall {recall}");
    }

    #[test]
    fn false_positive_rate_tracks_profile() {
        let mut spec = PipeSpec {
            rates_per_100m: BTreeMap::new(),
            seam_rate_per_100m: 0.0,
            length_m: 500.0,
            ..PipeSpec::default()
        };
        spec.rates_per_100m.insert(DefectClass::Root, 2.0);
        let mut profile = DetectorProfile { detect_prob: 0.0, ..DetectorProfile::perfect() };
        profile.fp_per_100m.insert(DefectClass::Obstacle, 20.0);
        let mut total = 0usize;
        for seed in 0..10 {
            let (geometry, annotations) = generate_pipe(&spec, seed).unwrap();
            let detections = simulate_detector(&geometry, &annotations, &profile, seed).unwrap();
            assert!(detections.iter().all(|d| d.id.starts_with("fp-")));
            for d in &detections {
                assert!(annotations.iter().all(|a| a.bbox.intersection(&d.bbox).is_none()));
            }
            total += detections.len();
        }
        let mean = total as f64 / 10.0;
        let tolerance = 3.0 * 10.0 / (10.0f64).sqrt();
        assert!((mean - 100.0).abs() <= tolerance, "mean {mean}, tolerance {tolerance}");
    }

    #[test]
    fn profile_validation() {
        let (geometry, annotations) = default_pipe(1);
        let bad = DetectorProfile { detect_prob: 1.5, ..DetectorProfile::default() };
        assert!(matches!(
            simulate_detector(&geometry, &annotations, &bad, 0),
            Err(SynthError::InvalidProfile { .. })
        ));
        let bad = DetectorProfile { center_jitter_px: -1.0, ..DetectorProfile::default() };
        assert!(simulate_detector(&geometry, &annotations, &bad, 0).is_err());
        let bad = DetectorProfile { tp_confidence: (0.9, 0.2), ..DetectorProfile::default() };
        assert!(simulate_detector(&geometry, &annotations, &bad, 0).is_err());
    }
}
