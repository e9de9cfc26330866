//! Deterministic overlay rendering to binary PPM (P6).
//!
//! The raster shows a seeded concrete-like texture with joint shadows,
//! annotation boxes in green, detection boxes in red, optional class-code
//! labels, and an optional per-chunk verdict strip along the bottom edge.
//! Output is a pure function of (inputs, options, seed): byte-identical on
//! every run, which makes golden-file tests trivial. Mosaics over the pixel
//! budget are downscaled by an integer factor with a warning.

use std::io;
use std::path::Path;

use crate::domain::{Annotation, Detection, MosaicGeometry, PixelBox};
use crate::metrics::{chunk_confusion, chunk_grid, Verdict};
use crate::seed::{self, stream};

use super::SynthError;

pub const ANNOTATION_COLOR: [u8; 3] = [46, 204, 64];
pub const DETECTION_COLOR: [u8; 3] = [255, 65, 54];
pub const LABEL_COLOR: [u8; 3] = [255, 255, 255];
pub const VERDICT_TP_COLOR: [u8; 3] = [46, 204, 64];
pub const VERDICT_FP_COLOR: [u8; 3] = [255, 220, 0];
pub const VERDICT_TN_COLOR: [u8; 3] = [0, 116, 217];
pub const VERDICT_FN_COLOR: [u8; 3] = [220, 20, 60];

/// Row-major RGB image, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize) -> Self {
        RasterImage { width, height, pixels: vec![0; width * height * 3] }
    }

    /// Writes a pixel; coordinates outside the image are ignored so callers
    /// can draw clipped shapes without pre-clamping.
    pub fn set(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn count_color(&self, color: [u8; 3]) -> usize {
        self.pixels.chunks_exact(3).filter(|px| *px == color).count()
    }

    /// Binary portable pixmap, the zero-dependency interchange raster.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_ppm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Renders at most this many output pixels, downscaling if needed.
    pub max_pixels: usize,
    pub draw_labels: bool,
    /// Paint per-chunk verdicts along the bottom edge.
    pub verdict_strip: bool,
    pub chunk_width_px: i64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            max_pixels: 4_000_000,
            draw_labels: true,
            verdict_strip: false,
            chunk_width_px: 600,
        }
    }
}

/// 5x7 bitmap glyphs for the characters used in class codes.
fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        '-' => [0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000],
        _ => return None,
    })
}

fn draw_text(img: &mut RasterImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..5i64 {
                if bits >> (4 - rx) & 1 == 1 {
                    img.set(x + i as i64 * 6 + rx, y + ry as i64, color);
                }
            }
        }
    }
}

/// Rectangle outline with 2 px stroke on inclusive output coordinates.
/// For boxes at least 4x4 the painted area is exactly 4w + 4(h-4) pixels.
fn draw_rect(img: &mut RasterImage, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
    if x1 < x0 || y1 < y0 {
        return;
    }
    for r in [y0, y0 + 1, y1 - 1, y1] {
        if r < y0 || r > y1 {
            continue;
        }
        for x in x0..=x1 {
            img.set(x, r, color);
        }
    }
    for c in [x0, x0 + 1, x1 - 1, x1] {
        if c < x0 || c > x1 {
            continue;
        }
        for y in (y0 + 2)..=(y1 - 2) {
            img.set(c, y, color);
        }
    }
}

/// Background brightness at a mosaic pixel: a pure function of (seed, x, y)
/// plus the column's banding and joint shadow, clamped well below the
/// stroke and label colors so overlays never blend into texture.
fn texture_value(seed_base: u64, sx: i64, sy: i64, column: i32) -> u8 {
    let noise = (seed::derive(seed_base, &[stream::RENDER, sx as u64, sy as u64]) & 0xF) as i32 - 8;
    (105 + column + noise).clamp(40, 170) as u8
}

struct BoxDraw<'a> {
    bbox: &'a PixelBox,
    label: &'a str,
    color: [u8; 3],
}

pub fn render_overlay(
    geometry: &MosaicGeometry,
    annotations: &[Annotation],
    detections: &[Detection],
    options: &RenderOptions,
    seed: u64,
) -> Result<(RasterImage, Vec<String>), SynthError> {
    if options.max_pixels == 0 {
        return Err(SynthError::InvalidRender { reason: "max_pixels must be positive".into() });
    }
    geometry.validate()?;
    let (width, height) = (geometry.width_px, geometry.height_px);
    let mut factor = 1i64;
    loop {
        let ow = (width + factor - 1) / factor;
        let oh = (height + factor - 1) / factor;
        if (ow * oh) as usize <= options.max_pixels {
            break;
        }
        factor += 1;
    }
    let mut warnings = Vec::new();
    if factor > 1 {
        warnings.push(format!(
            "mosaic {width}x{height} exceeds the {}-pixel budget; downscaled by {factor}",
            options.max_pixels
        ));
    }
    let ow = ((width + factor - 1) / factor) as usize;
    let oh = ((height + factor - 1) / factor) as usize;
    let mut img = RasterImage::new(ow, oh);

    // Per-column banding and joint shadows, then per-pixel noise.
    let mut column_mod = vec![0i32; ow];
    for (ox, slot) in column_mod.iter_mut().enumerate() {
        let sx = ox as i64 * factor;
        let mut value = ((sx / 150) % 2) as i32 * 5;
        if geometry.joint_positions_px.iter().any(|&j| (sx - j).abs() <= 4) {
            value -= 35;
        }
        *slot = value;
    }
    for oy in 0..oh {
        let sy = oy as i64 * factor;
        for ox in 0..ow {
            let sx = ox as i64 * factor;
            let g = texture_value(seed, sx, sy, column_mod[ox]);
            img.set(ox as i64, oy as i64, [g, g, g.saturating_add(6)]);
        }
    }

    let draws: Vec<BoxDraw> = annotations
        .iter()
        .map(|a| BoxDraw { bbox: &a.bbox, label: a.class.code(), color: ANNOTATION_COLOR })
        .chain(
            detections
                .iter()
                .map(|d| BoxDraw { bbox: &d.bbox, label: d.class.code(), color: DETECTION_COLOR }),
        )
        .collect();
    for draw in &draws {
        let b = draw.bbox;
        let (x0, y0) = (b.x / factor, b.y / factor);
        let (x1, y1) = ((b.right() - 1) / factor, (b.bottom() - 1) / factor);
        draw_rect(&mut img, x0, y0, x1, y1, draw.color);
        if options.draw_labels {
            let ly = if y0 >= 9 { y0 - 9 } else { y1 + 2 };
            draw_text(&mut img, x0, ly, draw.label, LABEL_COLOR);
        }
    }

    if options.verdict_strip {
        let chunks = chunk_grid(width, options.chunk_width_px)
            .map_err(|e| SynthError::InvalidRender { reason: e.to_string() })?;
        let (verdicts, _) = chunk_confusion(&chunks, annotations, detections);
        let strip_rows = 8.min(oh);
        for ox in 0..ow {
            let sx = ox as i64 * factor;
            let index = ((sx / options.chunk_width_px) as usize).min(verdicts.len() - 1);
            let color = match verdicts[index].verdict {
                Verdict::TruePositive => VERDICT_TP_COLOR,
                Verdict::FalsePositive => VERDICT_FP_COLOR,
                Verdict::TrueNegative => VERDICT_TN_COLOR,
                Verdict::FalseNegative => VERDICT_FN_COLOR,
            };
            for row in 0..strip_rows {
                img.set(ox as i64, (oh - 1 - row) as i64, color);
            }
        }
    }
    Ok((img, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DefectClass, Material, PixelBox, Severity};

    fn geometry(width_px: i64) -> MosaicGeometry {
        MosaicGeometry {
            pipe_id: "render-test".into(),
            width_px,
            height_px: 1200,
            px_per_meter_axial: 200.0,
            material: Material::Concrete,
            joint_positions_px: vec![400, 800],
        }
    }

    fn ann(bbox: PixelBox) -> Annotation {
        Annotation { id: "a".into(), class: DefectClass::Fissure, bbox, severity: Severity::Medium }
    }

    fn det(bbox: PixelBox) -> Detection {
        Detection {
            id: "d".into(),
            class: DefectClass::Root,
            bbox,
            confidence: 0.9,
            merged_from: vec![],
        }
    }

    #[test]
    fn byte_identical_output() {
        let geometry = geometry(2000);
        let annotations = vec![ann(PixelBox::new(100, 200, 60, 40))];
        let detections = vec![det(PixelBox::new(700, 500, 80, 50))];
        let options = RenderOptions::default();
        let (a, wa) = render_overlay(&geometry, &annotations, &detections, &options, 5).unwrap();
        let (b, wb) = render_overlay(&geometry, &annotations, &detections, &options, 5).unwrap();
        assert_eq!(a.to_ppm(), b.to_ppm());
        assert!(wa.is_empty() && wb.is_empty());
        let (c, _) = render_overlay(&geometry, &annotations, &detections, &options, 6).unwrap();
        assert_ne!(a.pixels, c.pixels, "texture must depend on the seed");
    }

    #[test]
    fn empty_scene_is_plain_texture() {
        let geometry = geometry(1000);
        let (img, warnings) =
            render_overlay(&geometry, &[], &[], &RenderOptions::default(), 1).unwrap();
        assert!(warnings.is_empty());
        assert_eq!((img.width, img.height), (1000, 1200));
        assert_eq!(img.count_color(ANNOTATION_COLOR), 0);
        assert_eq!(img.count_color(DETECTION_COLOR), 0);
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n1000 1200\n255\n"));
        assert_eq!(ppm.len(), 17 + 1000 * 1200 * 3);
    }

    #[test]
    fn stroke_pixel_counts_match_the_formula() {
        let geometry = geometry(1000);
        let annotations = vec![ann(PixelBox::new(100, 200, 60, 40))];
        let detections = vec![det(PixelBox::new(500, 600, 80, 50))];
        let (img, _) =
            render_overlay(&geometry, &annotations, &detections, &RenderOptions::default(), 2)
                .unwrap();
        assert_eq!(img.count_color(ANNOTATION_COLOR), 4 * 60 + 4 * (40 - 4));
        assert_eq!(img.count_color(DETECTION_COLOR), 4 * 80 + 4 * (50 - 4));
        assert!(img.count_color(LABEL_COLOR) > 0, "class codes drawn");
    }

    #[test]
    fn oversized_mosaic_downscales_with_warning() {
        let geometry = geometry(20_000);
        let options = RenderOptions { max_pixels: 100_000, ..RenderOptions::default() };
        let (img, warnings) = render_overlay(&geometry, &[], &[], &options, 0).unwrap();
        assert_eq!((img.width, img.height), (1250, 75));
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("downscaled by 16"));
        let bad = RenderOptions { max_pixels: 0, ..RenderOptions::default() };
        assert!(render_overlay(&geometry, &[], &[], &bad, 0).is_err());
    }

    #[test]
    fn verdict_strip_paints_chunk_outcomes() {
        let geometry = geometry(1200);
        // Chunk 0: matched fissure (TP). Chunk 1: clean (TN).
        let annotations = vec![ann(PixelBox::new(100, 200, 60, 40))];
        let detections = vec![Detection {
            id: "d".into(),
            class: DefectClass::Fissure,
            bbox: PixelBox::new(100, 200, 60, 40),
            confidence: 0.9,
            merged_from: vec![],
        }];
        let options = RenderOptions { verdict_strip: true, ..RenderOptions::default() };
        let (img, _) = render_overlay(&geometry, &annotations, &detections, &options, 3).unwrap();
        let bottom = img.height - 1;
        assert_eq!(img.get(10, bottom), VERDICT_TP_COLOR);
        assert_eq!(img.get(1100, bottom), VERDICT_TN_COLOR);
    }
}
