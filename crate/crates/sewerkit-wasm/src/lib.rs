//! Browser bindings for the interactive demo page.
//!
//! Three operations are exposed to JavaScript:
//!
//! * [`Demo`] — generate a synthetic pipe, simulate a detector on it, run the
//!   post-processing pipeline, and evaluate the result. The caller gets the
//!   text summary, the full report as JSON, an audit trail, and an RGBA
//!   overlay ready for `putImageData` on a canvas.
//! * [`window_plan_json`] — sliding-window layout for the tiling explorer.
//! * [`check_rules`] — live diagnostics for the rule-file editor.
//!
//! Every signature uses plain strings, integers, and byte vectors, so the
//! whole crate also compiles and runs natively; the test suite exercises it
//! on the host without a WebAssembly runtime.

use serde::Deserialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use sewerkit::metrics::{evaluate_pipe, flatten_spans, render_text, EvalConfig, PipeEvalInput};
use sewerkit::postproc::{run_pipeline, PipeContext, PostprocConfig, RuleSet};
use sewerkit::synth::{
    generate_pipe, render_overlay, simulate_detector, DetectorProfile, PipeSpec, RenderOptions,
};
use sewerkit::tiler::plan_windows;

/// Detector selection: a preset name or a full profile object.
#[derive(Deserialize)]
#[serde(untagged)]
enum ProfileChoice {
    Named(String),
    Custom(DetectorProfile),
}

impl Default for ProfileChoice {
    fn default() -> Self {
        ProfileChoice::Named("noisy".into())
    }
}

impl ProfileChoice {
    fn resolve(&self) -> Result<DetectorProfile, String> {
        match self {
            ProfileChoice::Named(name) => match name.as_str() {
                "noisy" => Ok(DetectorProfile::default()),
                "perfect" => Ok(DetectorProfile::perfect()),
                other => Err(format!("unknown profile {other:?}; use \"noisy\" or \"perfect\"")),
            },
            ProfileChoice::Custom(profile) => Ok(profile.clone()),
        }
    }
}

/// Everything the demo run accepts, all optional. `spec` and `postproc`
/// accept partial objects; omitted fields keep their defaults.
#[derive(Deserialize, Default)]
#[serde(default)]
struct DemoConfig {
    spec: PipeSpec,
    profile: ProfileChoice,
    seed: u64,
    postproc: PostprocConfig,
    /// Rule file text; `null` selects the built-in default rules.
    rules: Option<String>,
    max_pixels: Option<usize>,
}

/// One full pipeline run over a synthetic pipe, kept alive so the page can
/// pull out the pieces it wants.
#[wasm_bindgen]
pub struct Demo {
    summary: String,
    report_json: String,
    audit_json: String,
    width: u32,
    height: u32,
    rgba: Vec<u8>,
}

impl std::fmt::Debug for Demo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Demo")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

#[wasm_bindgen]
impl Demo {
    /// Runs generate → detect → post-process → evaluate → render from a JSON
    /// configuration string (empty string for all defaults).
    #[wasm_bindgen(constructor)]
    pub fn new(config_json: &str) -> Result<Demo, String> {
        let text = if config_json.trim().is_empty() { "{}" } else { config_json };
        let config: DemoConfig =
            serde_json::from_str(text).map_err(|e| format!("config: {e}"))?;

        let (geometry, annotations) =
            generate_pipe(&config.spec, config.seed).map_err(|e| e.to_string())?;
        let profile = config.profile.resolve()?;
        let raw = simulate_detector(&geometry, &annotations, &profile, config.seed)
            .map_err(|e| e.to_string())?;
        let rules = match &config.rules {
            None => RuleSet::expert_defaults(),
            Some(text) => RuleSet::parse(text).map_err(|e| format!("rules: {e}"))?,
        };
        config.postproc.validate().map_err(|e| e.to_string())?;

        let ctx = PipeContext::infer(geometry.clone(), &annotations, &raw);
        let raw_count = raw.len();
        let output =
            run_pipeline(raw, &ctx, &config.postproc, &rules).map_err(|e| e.to_string())?;

        let report = evaluate_pipe(
            PipeEvalInput {
                geometry: &geometry,
                annotations: &annotations,
                detections: &output.detections,
                spans: &output.spans,
            },
            &EvalConfig::default(),
        )
        .map_err(|e| e.to_string())?;

        let drawable = flatten_spans(&output.detections, &output.spans);
        let options = RenderOptions {
            max_pixels: config.max_pixels.unwrap_or(600_000),
            verdict_strip: true,
            ..RenderOptions::default()
        };
        let (image, warnings) =
            render_overlay(&geometry, &annotations, &drawable, &options, config.seed)
                .map_err(|e| e.to_string())?;

        let audit = json!({
            "pipe_id": geometry.pipe_id,
            "raw_detections": raw_count,
            "kept_detections": output.detections.len(),
            "spans": output.spans.len(),
            "events": output.events,
            "render_warnings": warnings,
        });

        let mut rgba = Vec::with_capacity(image.width * image.height * 4);
        for rgb in image.pixels.chunks_exact(3) {
            rgba.extend_from_slice(rgb);
            rgba.push(255);
        }
        Ok(Demo {
            summary: render_text(&report),
            report_json: serde_json::to_string(&report).map_err(|e| e.to_string())?,
            audit_json: audit.to_string(),
            width: image.width as u32,
            height: image.height as u32,
            rgba,
        })
    }

    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    pub fn report_json(&self) -> String {
        self.report_json.clone()
    }

    pub fn audit_json(&self) -> String {
        self.audit_json.clone()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Overlay pixels, row-major RGBA — feed directly to `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

/// Sliding-window layout as JSON:
/// `{"patch_size_px", "stride_px", "width_px", "offsets": [...]}`.
#[wasm_bindgen]
pub fn window_plan_json(width_px: u32, patch_px: u32, stride_px: u32) -> Result<String, String> {
    let plan = plan_windows(i64::from(width_px), i64::from(patch_px), i64::from(stride_px))
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "width_px": width_px,
        "patch_size_px": plan.patch_size_px,
        "stride_px": plan.stride_px,
        "offsets": plan.offsets,
    })
    .to_string())
}

/// Parses rule text and reports either the normalized rules or the first
/// error: `{"ok": true, "rules": [{"name", "text"}]}` or
/// `{"ok": false, "line", "message"}`.
#[wasm_bindgen]
pub fn check_rules(text: &str) -> String {
    match RuleSet::parse(text) {
        Ok(set) => {
            let rules: Vec<_> = set
                .rules
                .iter()
                .map(|r| json!({"name": r.name, "text": r.to_string()}))
                .collect();
            json!({"ok": true, "rules": rules}).to_string()
        }
        Err(e) => json!({"ok": false, "line": e.line, "message": e.message}).to_string(),
    }
}

/// The built-in rules in their text form, for prefilling the editor.
#[wasm_bindgen]
pub fn default_rules() -> String {
    RuleSet::expert_defaults().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_runs_with_defaults_and_yields_consistent_shapes() {
        let demo = Demo::new("").expect("default run succeeds");
        assert_eq!(demo.rgba().len(), (demo.width() * demo.height() * 4) as usize);
        assert!(demo.summary().contains("running-meter chunks"));
        let report: serde_json::Value = serde_json::from_str(&demo.report_json()).unwrap();
        assert!(report["chunk_counts"].is_object());
        let audit: serde_json::Value = serde_json::from_str(&demo.audit_json()).unwrap();
        assert!(audit["raw_detections"].as_u64().unwrap() > 0);
        assert!(audit["events"].is_array());
    }

    #[test]
    fn demo_is_deterministic_for_a_seed() {
        let config = r#"{"spec": {"length_m": 20.0}, "seed": 5}"#;
        let a = Demo::new(config).unwrap();
        let b = Demo::new(config).unwrap();
        assert_eq!(a.report_json(), b.report_json());
        assert_eq!(a.rgba(), b.rgba());
        let c = Demo::new(r#"{"spec": {"length_m": 20.0}, "seed": 6}"#).unwrap();
        assert_ne!(a.report_json(), c.report_json());
    }

    /// The demo page composes exactly this JSON shape; keep it working.
    #[test]
    fn page_shaped_config_is_accepted() {
        let config = r#"{
            "spec": {"pipe_id": "demo", "length_m": 30},
            "seed": 3,
            "profile": "noisy",
            "postproc": {"policy": {"global_floor": 0.25}},
            "rules": "note: class_is(BAB) => tag(checked)"
        }"#;
        let demo = Demo::new(config).expect("page config works");
        let audit: serde_json::Value = serde_json::from_str(&demo.audit_json()).unwrap();
        assert_eq!(audit["pipe_id"], "demo");
    }

    #[test]
    fn perfect_profile_scores_cleanly() {
        let demo = Demo::new(r#"{"profile": "perfect", "spec": {"length_m": 25.0}}"#).unwrap();
        assert!(demo.summary().contains("accuracy 100.00%"), "{}", demo.summary());
    }

    #[test]
    fn config_errors_are_reported_not_panicked() {
        assert!(Demo::new("{ nope").unwrap_err().starts_with("config:"));
        let err = Demo::new(r#"{"profile": "psychic"}"#).unwrap_err();
        assert!(err.contains("psychic"), "{err}");
        let err = Demo::new(r#"{"spec": {"length_m": -3.0}}"#).unwrap_err();
        assert!(err.contains("length_m"), "{err}");
        let err = Demo::new(r#"{"rules": "broken line"}"#).unwrap_err();
        assert!(err.starts_with("rules: line 1"), "{err}");
    }

    #[test]
    fn window_plan_matches_the_library() {
        let text = window_plan_json(5000, 1200, 600).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let offsets: Vec<i64> = value["offsets"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_i64().unwrap())
            .collect();
        assert_eq!(offsets, plan_windows(5000, 1200, 600).unwrap().offsets);
        assert!(window_plan_json(100, 1200, 0).is_err());
    }

    #[test]
    fn rule_checker_reports_both_directions() {
        let ok: serde_json::Value = serde_json::from_str(&check_rules(&default_rules())).unwrap();
        assert_eq!(ok["ok"], true);
        assert_eq!(ok["rules"].as_array().unwrap().len(), 4);
        let bad: serde_json::Value =
            serde_json::from_str(&check_rules("x: class_is(ZZZ) => suppress")).unwrap();
        assert_eq!(bad["ok"], false);
        assert_eq!(bad["line"], 1);
    }
}
