//! Batch front end for the sewerkit library.
//!
//! Five verbs cover the fixture-to-report workflow:
//!
//! - `synth`: generate seeded pipes with ground truth, optionally simulated
//!   detections and a PPM overlay
//! - `tile`: slide windows over pipes and export a training manifest
//! - `postproc`: filter, merge, stitch and rule-check detections
//! - `eval`: score detections against ground truth across a corpus
//! - `report`: render verdict overlays plus a combined summary
//!
//! Pipes are processed in parallel (`--jobs`), outputs are written
//! atomically, and summaries are folded in input order, so a run's outputs
//! depend only on inputs, flags and seed. Flags can also come from
//! `SEWERKIT_*` environment variables.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(name = "sewerkit", version, about = "Sewer-inspection mosaic toolkit")]
struct Cli {
    /// Worker threads for per-pipe work; 0 means one per core.
    #[arg(long, global = true, default_value_t = 0, env = "SEWERKIT_JOBS")]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pipes with ground truth and optional detections.
    Synth(SynthArgs),
    /// Export sliding-window training patches from interchange documents.
    Tile(TileArgs),
    /// Post-process the detections in interchange documents.
    Postproc(PostprocArgs),
    /// Evaluate detections against ground truth over a corpus.
    Eval(EvalArgs),
    /// Render overlays and a combined summary for a corpus.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Pipe specification JSON; omitted means the built-in default spec.
    #[arg(long, env = "SEWERKIT_SPEC")]
    spec: Option<PathBuf>,
    /// Detector to simulate: "perfect", "noisy", or a profile JSON path.
    /// Omitted means annotations only.
    #[arg(long, env = "SEWERKIT_PROFILE")]
    profile: Option<String>,
    /// Number of pipes to generate.
    #[arg(long, default_value_t = 1)]
    pipes: usize,
    /// Base seed; pipe seeds are derived from it per index.
    #[arg(long, default_value_t = 0, env = "SEWERKIT_SEED")]
    seed: u64,
    /// Also render a PPM overlay next to each document.
    #[arg(long)]
    overlay: bool,
    /// Directory for the per-pipe documents.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TileArgs {
    /// Interchange documents, one pipe each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Export configuration JSON; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Window edge in mosaic pixels.
    #[arg(long)]
    patch: Option<i64>,
    /// Window advance in mosaic pixels.
    #[arg(long)]
    stride: Option<i64>,
    /// Network edge over patch edge.
    #[arg(long)]
    scale: Option<f64>,
    /// Minimum visible fraction for a clipped box to be kept.
    #[arg(long)]
    min_visible_fraction: Option<f64>,
    /// Probability of each of the two flips per patch.
    #[arg(long)]
    flip_probability: Option<f64>,
    #[arg(long, env = "SEWERKIT_SEED")]
    seed: Option<u64>,
    /// Output manifest path.
    #[arg(long, default_value = "training.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PostprocArgs {
    /// Interchange documents, one pipe each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Post-processing configuration JSON; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global confidence floor; detections at or below it are dropped.
    #[arg(long)]
    floor: Option<f64>,
    /// Linking IoU of the merge stage.
    #[arg(long)]
    merge_iou: Option<f64>,
    /// Suppression IoU of the nms stage.
    #[arg(long)]
    nms_iou: Option<f64>,
    /// Minimum axial overlap for seam stitching.
    #[arg(long)]
    stitch_overlap: Option<f64>,
    /// Comma-separated stage order (filter, merge, nms, stitch, rules), or
    /// "none" for the identity pipeline.
    #[arg(long, env = "SEWERKIT_STAGES")]
    stages: Option<String>,
    /// Rule file path, "default" for the built-in rules, "none" to disable.
    #[arg(long, default_value = "default", env = "SEWERKIT_RULESET")]
    ruleset: String,
    /// Directory for the processed documents and audit files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Interchange documents, one pipe each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Evaluation configuration JSON; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Axial chunk width of the running-meter metric, in pixels.
    #[arg(long, env = "SEWERKIT_CHUNK_WIDTH")]
    chunk_width: Option<i64>,
    /// IoU threshold of the object-level matcher.
    #[arg(long, env = "SEWERKIT_IOU")]
    iou: Option<f64>,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Interchange documents, one pipe each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for the per-pipe overlays.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, env = "SEWERKIT_CHUNK_WIDTH")]
    chunk_width: Option<i64>,
    #[arg(long, env = "SEWERKIT_IOU")]
    iou: Option<f64>,
    /// Overlay pixel budget; larger mosaics are downscaled to fit.
    #[arg(long, default_value_t = 4_000_000)]
    max_pixels: usize,
    /// Seed for the overlay background texture.
    #[arg(long, default_value_t = 0, env = "SEWERKIT_SEED")]
    seed: u64,
}

fn main() -> ExitCode {
    // Rust starts with SIGPIPE ignored, which turns `sewerkit eval … | head`
    // into a panic when stdout closes. Restore the conventional behavior of
    // terminating quietly.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build a {}-thread pool: {e}", cli.jobs)))?;
    pool.install(|| match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Tile(args) => commands::tile(args),
        Command::Postproc(args) => commands::postproc(args),
        Command::Eval(args) => commands::eval(args),
        Command::Report(args) => commands::report(args),
    })
}
