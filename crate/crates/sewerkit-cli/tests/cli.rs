//! End-to-end tests of the binary: determinism, the reference evaluation
//! fixture, identity post-processing, error categories with exit codes, and
//! the file outputs of every verb.

use std::path::Path;
use std::process::{Command, Output};

use sewerkit::domain::{
    Annotation, DefectClass, Detection, Material, MosaicGeometry, PixelBox, Severity,
};
use sewerkit::formats::{InterchangeDocument, TrainingManifest};
use sewerkit::tiler::plan_windows;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sewerkit"));
    for var in [
        "SEWERKIT_JOBS",
        "SEWERKIT_SEED",
        "SEWERKIT_SPEC",
        "SEWERKIT_PROFILE",
        "SEWERKIT_STAGES",
        "SEWERKIT_RULESET",
        "SEWERKIT_CHUNK_WIDTH",
        "SEWERKIT_IOU",
    ] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn synth_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_ok(&[
        "synth", "--pipes", "3", "--seed", "11", "--profile", "noisy", "--jobs", "2",
        "--out-dir", path_str(&a),
    ]);
    run_ok(&[
        "synth", "--pipes", "3", "--seed", "11", "--profile", "noisy", "--jobs", "1",
        "--out-dir", path_str(&b),
    ]);
    run_ok(&[
        "synth", "--pipes", "3", "--seed", "12", "--profile", "noisy",
        "--out-dir", path_str(&c),
    ]);
    for name in ["pipe-0-000.json", "pipe-0-001.json", "pipe-0-002.json"] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        let bytes_b = std::fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }
    assert_ne!(
        std::fs::read(a.join("pipe-0-000.json")).unwrap(),
        std::fs::read(c.join("pipe-0-000.json")).unwrap(),
        "different seeds must give different pipes"
    );
}

#[test]
fn env_vars_stand_in_for_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (by_flag, by_env) = (dir.path().join("flag"), dir.path().join("env"));
    run_ok(&["synth", "--seed", "21", "--out-dir", path_str(&by_flag)]);
    let out = bin()
        .env("SEWERKIT_SEED", "21")
        .args(["synth", "--out-dir", path_str(&by_env)])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(by_flag.join("pipe-0.json")).unwrap(),
        std::fs::read(by_env.join("pipe-0.json")).unwrap()
    );
}

/// Chunk-count fixture: 1147 chunks of 600 px planted to score tp 391,
/// fp 121, tn 447, fn 188, whose accuracy is exactly 838/1147 = 73.06%.
fn reference_fixture() -> InterchangeDocument {
    let chunks = 1147i64;
    let geometry = MosaicGeometry {
        pipe_id: "reference".into(),
        width_px: chunks * 600,
        height_px: 1200,
        px_per_meter_axial: 200.0,
        material: Material::Concrete,
        joint_positions_px: vec![],
    };
    let mut doc = InterchangeDocument::new(geometry);
    for i in 0..chunks {
        let bbox = PixelBox::new(i * 600 + 10, 100, 80, 80);
        let wants_annotation = i < 391 || i >= 959;
        let wants_detection = i < 512;
        if wants_annotation {
            doc.annotations.push(Annotation {
                id: format!("a{i:04}"),
                class: DefectClass::Fissure,
                bbox,
                severity: Severity::Medium,
            });
        }
        if wants_detection {
            doc.detections.push(Detection {
                id: format!("d{i:04}"),
                class: DefectClass::Fissure,
                bbox,
                confidence: 0.9,
                merged_from: vec![],
            });
        }
    }
    doc
}

#[test]
fn eval_renders_the_reference_headline() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("reference.json");
    reference_fixture().save(&input).unwrap();

    let report_path = dir.path().join("report.json");
    let stdout = run_ok(&["eval", path_str(&input), "--out", path_str(&report_path)]);
    assert!(stdout.contains("accuracy 73.06%"), "missing headline in:\n{stdout}");
    assert!(stdout.contains("1147 chunks"), "missing chunk total in:\n{stdout}");
    for count in ["391", "121", "447", "188"] {
        assert!(stdout.contains(count), "missing count {count} in:\n{stdout}");
    }

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report["chunk_counts"]["true_positive"], 391);
    assert_eq!(report["chunk_counts"]["false_negative"], 188);
    assert!(report["ap"]["map50"].is_number());
}

#[test]
fn synth_perfect_then_eval_scores_a_clean_run() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "synth", "--pipes", "2", "--seed", "9", "--profile", "perfect",
        "--out-dir", path_str(dir.path()),
    ]);
    let a = dir.path().join("pipe-0-000.json");
    let b = dir.path().join("pipe-0-001.json");
    let stdout = run_ok(&["eval", path_str(&a), path_str(&b)]);
    assert!(stdout.contains("accuracy 100.00%"), "not perfect:\n{stdout}");
    assert!(stdout.contains("mAP50:95 100.00%"), "not perfect:\n{stdout}");
}

#[test]
fn postproc_with_no_stages_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--seed", "3", "--profile", "noisy", "--out-dir", path_str(dir.path())]);
    let input = dir.path().join("pipe-0.json");
    let out_dir = dir.path().join("out");
    run_ok(&[
        "postproc", path_str(&input), "--stages", "none", "--ruleset", "none",
        "--out-dir", path_str(&out_dir),
    ]);

    let before: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&input).unwrap()).unwrap();
    let after: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("pipe-0.json")).unwrap()).unwrap();
    assert_eq!(before["detections"], after["detections"]);
    assert_eq!(before["annotations"], after["annotations"]);
    assert_eq!(before["pipe"], after["pipe"]);
    assert!(after.get("spans").is_none(), "no stitching happened");

    let audit: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("audit/pipe-0.json")).unwrap())
            .unwrap();
    assert_eq!(audit["pipe_id"], "pipe-0");
    assert_eq!(audit["events"], serde_json::json!([]));
}

#[test]
fn postproc_default_run_writes_valid_documents_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--seed", "4", "--profile", "noisy", "--out-dir", path_str(dir.path())]);
    let input = dir.path().join("pipe-0.json");
    let out_dir = dir.path().join("out");
    let stdout = run_ok(&["postproc", path_str(&input), "--out-dir", path_str(&out_dir)]);
    assert!(stdout.contains("pipe-0:"), "summary line missing:\n{stdout}");

    let doc = InterchangeDocument::load(&out_dir.join("pipe-0.json")).expect("valid output");
    assert!(doc.provenance.is_some());
    let audit: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("audit/pipe-0.json")).unwrap())
            .unwrap();
    assert!(audit["events"].is_array());
}

#[test]
fn tile_writes_a_manifest_matching_the_window_plan() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--seed", "5", "--out-dir", path_str(dir.path())]);
    let input = dir.path().join("pipe-0.json");
    let out = dir.path().join("training.json");
    run_ok(&[
        "tile", path_str(&input), "--patch", "1200", "--stride", "600", "--seed", "5",
        "--out", path_str(&out),
    ]);

    let manifest = TrainingManifest::load(&out).expect("valid manifest");
    assert_eq!(manifest.pipes.len(), 1);
    let doc = InterchangeDocument::load(&input).unwrap();
    let plan = plan_windows(doc.pipe.width_px, 1200, 600).unwrap();
    assert_eq!(manifest.pipes[0].samples.len(), plan.offsets.len());
    let provenance = manifest.provenance.expect("provenance recorded");
    assert_eq!(provenance.seed, 5);
    assert_eq!(provenance.config_hash.len(), 64);
}

#[test]
fn report_writes_overlays_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, br#"{"pipe_id": "tiny", "length_m": 12.0}"#).unwrap();
    let docs = dir.path().join("docs");
    run_ok(&[
        "synth", "--spec", path_str(&spec), "--seed", "2", "--profile", "perfect",
        "--out-dir", path_str(&docs),
    ]);

    let overlays = dir.path().join("overlays");
    let stdout = run_ok(&[
        "report", path_str(&docs.join("tiny.json")), "--out-dir", path_str(&overlays),
        "--max-pixels", "200000",
    ]);
    assert!(stdout.contains("pipe tiny:"), "per-pipe line missing:\n{stdout}");
    assert!(stdout.contains("running-meter chunks"), "summary missing:\n{stdout}");
    assert!(stdout.contains("accuracy 100.00%"), "perfect run expected:\n{stdout}");

    let ppm = std::fs::read(overlays.join("tiny.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n"), "not a P6 pixmap");
}

/// The editable rule file shipped in the repository must stay equivalent to
/// the built-in set behind `--ruleset default`.
#[test]
fn shipped_rule_file_matches_the_builtin_defaults() {
    use sewerkit::postproc::RuleSet;
    let text = include_str!("../../../rules/default.rules");
    let parsed = RuleSet::parse(text).expect("shipped rule file parses");
    assert_eq!(parsed, RuleSet::expert_defaults());
}

/// The worked example in the documentation must stay loadable and must
/// evaluate; it is referenced field by field in docs/interchange.md.
#[test]
fn documented_example_pipe_evaluates() {
    let example = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/example-pipe.json");
    let doc = InterchangeDocument::load(Path::new(example)).expect("example loads");
    assert!(!doc.annotations.is_empty() && !doc.detections.is_empty());
    assert!(doc.provenance.is_some());
    let stdout = run_ok(&["eval", example]);
    assert!(stdout.contains("running-meter chunks"), "{stdout}");
}

#[test]
fn error_categories_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // io (5): input document does not exist.
    let out = run(&["eval", path_str(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]:"));

    // schema (3): input document is not valid JSON.
    let garbled = dir.path().join("garbled.json");
    std::fs::write(&garbled, b"{ not json").unwrap();
    let out = run(&["eval", path_str(&garbled)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[schema]:"));

    // schema (3): wrong schema version in an otherwise valid document.
    let mut doc = reference_fixture();
    doc.schema_version = 99;
    let versioned = dir.path().join("versioned.json");
    std::fs::write(&versioned, serde_json::to_vec(&doc).unwrap()).unwrap();
    let out = run(&["eval", path_str(&versioned)]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(stderr.contains("schema_version"), "unhelpful message: {stderr}");

    // params (4): out-of-range numeric flag.
    let valid = dir.path().join("valid.json");
    reference_fixture().save(&valid).unwrap();
    let out = run(&["postproc", path_str(&valid), "--floor", "1.5"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[params]:"));

    // config (2): unknown stage name.
    let out = run(&["postproc", path_str(&valid), "--stages", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]:"));

    // config (2): missing spec file.
    let out = run(&["synth", "--spec", path_str(&dir.path().join("nospec.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]:"));

    // config (2): ruleset with a syntax error, diagnosed with its line.
    let bad_rules = dir.path().join("bad.rules");
    std::fs::write(&bad_rules, "good: class_is(BAB) => tag(ok)\nbad rule without colon\n")
        .unwrap();
    let out = run(&["postproc", path_str(&valid), "--ruleset", path_str(&bad_rules)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(stderr.contains("line 2"), "line diagnostic missing: {stderr}");
}
