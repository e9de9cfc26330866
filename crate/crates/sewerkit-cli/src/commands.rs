//! The five verbs. Each follows the same shape: resolve configuration
//! (file, then flag overrides), validate parameters, process pipes in
//! parallel, write outputs atomically, and print a summary folded in input
//! order.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use sewerkit::domain::Detection;
use sewerkit::formats::{
    config_hash, read_json, write_json_atomic, InterchangeDocument, Provenance, TrainingManifest,
};
use sewerkit::metrics::{
    chunk_confusion, chunk_grid, evaluate_corpus, flatten_spans, render_text, EvalConfig,
    PipeEvalInput,
};
use sewerkit::postproc::{run_pipeline, PipeContext, PostprocConfig, RuleEvent, RuleSet, Stage};
use sewerkit::seed;
use sewerkit::synth::{
    generate_pipe, render_overlay, simulate_detector, DetectorProfile, PipeSpec, RenderOptions,
};
use sewerkit::tiler::ExportConfig;

use crate::error::{config_err, doc_err, params_err, write_err, CliError};
use crate::{EvalArgs, PostprocArgs, ReportArgs, SynthArgs, TileArgs};

fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("cannot rename into {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn load_documents(paths: &[PathBuf]) -> Result<Vec<InterchangeDocument>, CliError> {
    paths.par_iter().map(|p| InterchangeDocument::load(p).map_err(doc_err)).collect()
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let spec: PipeSpec = match &args.spec {
        Some(path) => read_json(path).map_err(config_err)?,
        None => PipeSpec::default(),
    };
    spec.validate().map_err(params_err)?;
    let profile = match args.profile.as_deref() {
        None => None,
        Some("perfect") => Some(DetectorProfile::perfect()),
        Some("noisy") => Some(DetectorProfile::default()),
        Some(path) => Some(read_json::<DetectorProfile>(Path::new(path)).map_err(config_err)?),
    };
    if let Some(p) = &profile {
        p.validate().map_err(params_err)?;
    }
    ensure_dir(&args.out_dir)?;
    let hash = config_hash(&(&spec, &profile));

    let lines: Vec<String> = (0..args.pipes)
        .into_par_iter()
        .map(|index| -> Result<String, CliError> {
            let mut pipe_spec = spec.clone();
            if args.pipes > 1 {
                pipe_spec.pipe_id = format!("{}-{index:03}", spec.pipe_id);
            }
            let pipe_seed = seed::derive(args.seed, &[index as u64]);
            let (geometry, annotations) =
                generate_pipe(&pipe_spec, pipe_seed).map_err(params_err)?;
            let detections = match &profile {
                Some(p) => {
                    simulate_detector(&geometry, &annotations, p, pipe_seed).map_err(params_err)?
                }
                None => Vec::new(),
            };

            let mut line = format!(
                "wrote {}.json ({} annotations, {} detections)",
                pipe_spec.pipe_id,
                annotations.len(),
                detections.len()
            );
            let mut doc = InterchangeDocument::new(geometry);
            doc.annotations = annotations;
            doc.detections = detections;
            doc.provenance = Some(Provenance::new(pipe_seed, hash.clone()));
            doc.save(&args.out_dir.join(format!("{}.json", pipe_spec.pipe_id)))
                .map_err(write_err)?;

            if args.overlay {
                let (image, warnings) = render_overlay(
                    &doc.pipe,
                    &doc.annotations,
                    &doc.detections,
                    &RenderOptions::default(),
                    pipe_seed,
                )
                .map_err(params_err)?;
                write_bytes_atomic(
                    &args.out_dir.join(format!("{}.ppm", pipe_spec.pipe_id)),
                    &image.to_ppm(),
                )?;
                for w in warnings {
                    line.push_str(&format!("\nnote: {}: {w}", pipe_spec.pipe_id));
                }
            }
            Ok(line)
        })
        .collect::<Result<_, _>>()?;
    for line in lines {
        println!("{line}");
    }
    Ok(())
}

pub fn tile(args: TileArgs) -> Result<(), CliError> {
    let mut config: ExportConfig = match &args.config {
        Some(path) => read_json(path).map_err(config_err)?,
        None => ExportConfig::default(),
    };
    if let Some(v) = args.patch {
        config.patch_size_px = v;
    }
    if let Some(v) = args.stride {
        config.stride_px = v;
    }
    if let Some(v) = args.scale {
        config.scale = v;
    }
    if let Some(v) = args.min_visible_fraction {
        config.min_visible_fraction = v;
    }
    if let Some(v) = args.flip_probability {
        config.flip_probability = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }

    let documents = load_documents(&args.inputs)?;
    let pipes: Vec<_> =
        documents.into_iter().map(|d| (d.pipe, d.annotations)).collect();
    let patches = sewerkit::tiler::export_training_set(&pipes, &config).map_err(params_err)?;

    let total: usize = patches.iter().map(|p| p.samples.len()).sum();
    let mut manifest = TrainingManifest::new(config.clone(), patches);
    manifest.provenance = Some(Provenance::new(config.seed, config_hash(&config)));
    manifest.save(&args.out).map_err(write_err)?;
    println!("wrote {} ({} pipes, {total} patches)", args.out.display(), pipes.len());
    Ok(())
}

fn parse_stages(text: &str) -> Result<Vec<Stage>, CliError> {
    let trimmed = text.trim();
    if trimmed == "none" {
        return Ok(Vec::new());
    }
    trimmed.split(',').map(|s| s.trim().parse::<Stage>().map_err(config_err)).collect()
}

fn load_ruleset(arg: &str) -> Result<RuleSet, CliError> {
    match arg {
        "default" => Ok(RuleSet::expert_defaults()),
        "none" => Ok(RuleSet::default()),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read ruleset {path}: {e}")))?;
            RuleSet::parse(&text)
                .map_err(|e| CliError::Config(format!("ruleset {path}: {e}")))
        }
    }
}

/// Audit trail written next to each processed document.
#[derive(Serialize)]
struct AuditFile<'a> {
    pipe_id: &'a str,
    events: &'a [RuleEvent],
}

pub fn postproc(args: PostprocArgs) -> Result<(), CliError> {
    let mut config: PostprocConfig = match &args.config {
        Some(path) => read_json(path).map_err(config_err)?,
        None => PostprocConfig::default(),
    };
    if let Some(v) = args.floor {
        config.policy.global_floor = v;
    }
    if let Some(v) = args.merge_iou {
        config.merge_link_iou = v;
    }
    if let Some(v) = args.nms_iou {
        config.nms_iou = v;
    }
    if let Some(v) = args.stitch_overlap {
        config.stitch_min_axial_overlap = v;
    }
    if let Some(text) = &args.stages {
        config.stages = parse_stages(text)?;
    }
    config.validate().map_err(params_err)?;
    let rules = load_ruleset(&args.ruleset)?;
    ensure_dir(&args.out_dir)?;
    // Audit trails live in a subdirectory so that `*.json` globs over the
    // output directory pick up only the processed documents.
    let audit_dir = args.out_dir.join("audit");
    ensure_dir(&audit_dir)?;
    let hash = config_hash(&config);

    let lines: Vec<String> = args
        .inputs
        .par_iter()
        .map(|input| -> Result<String, CliError> {
            let doc = InterchangeDocument::load(input).map_err(doc_err)?;
            let file_name = input
                .file_name()
                .ok_or_else(|| CliError::Io(format!("{} has no file name", input.display())))?;
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "pipe".into());

            let ctx = PipeContext::infer(doc.pipe.clone(), &doc.annotations, &doc.detections);
            let before = doc.detections.len();
            let out =
                run_pipeline(doc.detections.clone(), &ctx, &config, &rules).map_err(params_err)?;

            let mut processed = doc;
            processed.detections = out.detections;
            processed.spans = out.spans;
            let seed = processed.provenance.as_ref().map_or(0, |p| p.seed);
            processed.provenance = Some(Provenance::new(seed, hash.clone()));
            processed.save(&args.out_dir.join(file_name)).map_err(write_err)?;

            let audit_path = audit_dir.join(format!("{stem}.json"));
            write_json_atomic(
                &audit_path,
                &AuditFile { pipe_id: &processed.pipe.pipe_id, events: &out.events },
            )
            .map_err(write_err)?;

            Ok(format!(
                "{}: {} detections in, {} out, {} spans, {} rule events",
                processed.pipe.pipe_id,
                before,
                processed.detections.len(),
                processed.spans.len(),
                out.events.len()
            ))
        })
        .collect::<Result<_, _>>()?;
    for line in lines {
        println!("{line}");
    }
    Ok(())
}

fn resolve_eval_config(
    config: Option<&PathBuf>,
    chunk_width: Option<i64>,
    iou: Option<f64>,
) -> Result<EvalConfig, CliError> {
    let mut resolved: EvalConfig = match config {
        Some(path) => read_json(path).map_err(config_err)?,
        None => EvalConfig::default(),
    };
    if let Some(v) = chunk_width {
        resolved.chunk_width_px = v;
    }
    if let Some(v) = iou {
        resolved.object_iou = v;
    }
    resolved.validate().map_err(params_err)?;
    Ok(resolved)
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let config = resolve_eval_config(args.config.as_ref(), args.chunk_width, args.iou)?;
    let documents = load_documents(&args.inputs)?;
    let inputs: Vec<PipeEvalInput<'_>> = documents
        .iter()
        .map(|d| PipeEvalInput {
            geometry: &d.pipe,
            annotations: &d.annotations,
            detections: &d.detections,
            spans: &d.spans,
        })
        .collect();
    let report = evaluate_corpus(&inputs, &config).map_err(params_err)?;
    print!("{}", render_text(&report));
    if let Some(out) = &args.out {
        write_json_atomic(out, &report).map_err(write_err)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let config = resolve_eval_config(None, args.chunk_width, args.iou)?;
    ensure_dir(&args.out_dir)?;
    let options = RenderOptions {
        max_pixels: args.max_pixels,
        draw_labels: true,
        verdict_strip: true,
        chunk_width_px: config.chunk_width_px,
    };

    let documents = load_documents(&args.inputs)?;
    let lines: Vec<String> = documents
        .par_iter()
        .map(|doc| -> Result<String, CliError> {
            let drawn: Vec<Detection> = flatten_spans(&doc.detections, &doc.spans);
            let (image, warnings) =
                render_overlay(&doc.pipe, &doc.annotations, &drawn, &options, args.seed)
                    .map_err(params_err)?;
            let path = args.out_dir.join(format!("{}.ppm", doc.pipe.pipe_id));
            write_bytes_atomic(&path, &image.to_ppm())?;

            let grid = chunk_grid(doc.pipe.width_px, config.chunk_width_px).map_err(params_err)?;
            let (_, counts) = chunk_confusion(&grid, &doc.annotations, &drawn);
            let mut line = format!(
                "pipe {}: {:.1} m, {} annotations, {} detections, chunks tp {} fp {} tn {} fn {} -> {}",
                doc.pipe.pipe_id,
                doc.pipe.length_m(),
                doc.annotations.len(),
                drawn.len(),
                counts.true_positive,
                counts.false_positive,
                counts.true_negative,
                counts.false_negative,
                path.display(),
            );
            for w in warnings {
                line.push_str(&format!("\nnote: {}: {w}", doc.pipe.pipe_id));
            }
            Ok(line)
        })
        .collect::<Result<_, _>>()?;
    for line in lines {
        println!("{line}");
    }

    let inputs: Vec<PipeEvalInput<'_>> = documents
        .iter()
        .map(|d| PipeEvalInput {
            geometry: &d.pipe,
            annotations: &d.annotations,
            detections: &d.detections,
            spans: &d.spans,
        })
        .collect();
    let corpus = evaluate_corpus(&inputs, &config).map_err(params_err)?;
    println!();
    print!("{}", render_text(&corpus));
    Ok(())
}
