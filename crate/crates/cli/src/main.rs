mod audit;
mod bench;
mod error;
mod extract;
mod io;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{usage, CliError, CliResult};

/// Detection-geometry toolkit: label-rewrite audits, anchors, polygon labels,
/// synthetic scenes, AP evaluation and numeric self-checks.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
/// violation. POLYKIT_THREADS caps the worker thread count.
#[derive(Parser, Debug)]
#[command(name = "polykit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Audit(AuditArgs),
    Anchors(AnchorsArgs),
    Extract(ExtractArgs),
    Synth(SynthArgs),
    Eval(EvalArgs),
    UpsampleBench(BenchArgs),
    LossCheck(LossCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Resize {
    /// Keep aspect ratio, pad to the input size.
    Letterbox,
    /// Scale each axis independently.
    Stretch,
}

/// Count labels lost to (cell, anchor) collisions.
///
/// Prints CSV with columns input_w, input_h, scales, per_scale, n_anchors,
/// mean_iou, total_labels, rewritten, colliding_pairs, rewritten_pct,
/// scale_counts (stride:labels pairs).
#[derive(Args, Debug)]
pub struct AuditArgs {
    /// JSON-lines annotation file.
    pub annotations: PathBuf,
    /// Network input sizes, e.g. 416x416,608x800.
    #[arg(long = "input-size", value_delimiter = ',', required = true, value_parser = io::parse_size)]
    pub input_size: Vec<(u32, u32)>,
    /// Output scales as 1/s or s, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1/4", value_parser = io::parse_stride)]
    pub scales: Vec<u32>,
    /// Anchor file written by `polykit anchors`, or a cluster count for k-means.
    #[arg(long, default_value = "9")]
    pub anchors: String,
    /// Split anchors over the scales by area (one output per scale).
    #[arg(long)]
    pub per_scale: bool,
    /// Seed for k-means++ when --anchors is a count.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Resize::Letterbox)]
    pub resize: Resize,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Cluster box sizes into anchors with IoU k-means.
///
/// Writes CSV `w,h` sorted by area; diagnostics go to stderr.
#[derive(Args, Debug)]
pub struct AnchorsArgs {
    pub annotations: PathBuf,
    #[arg(short = 'k', long, default_value_t = 9)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Map boxes into this network input frame first.
    #[arg(long = "input-size", value_parser = io::parse_size)]
    pub input_size: Option<(u32, u32)>,
    #[arg(long, value_enum, default_value_t = Resize::Letterbox)]
    pub resize: Resize,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Turn PGM instance masks into polygon annotations.
///
/// Each non-zero gray level of a mask is one instance.
#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Directory of .pgm files.
    pub masks: PathBuf,
    #[arg(long, default_value_t = polykit_core::mask::DEFAULT_SECTORS)]
    pub sectors: usize,
    /// Collinear erasure tolerance in pixels.
    #[arg(long, default_value_t = polykit_core::mask::DEFAULT_EPS)]
    pub eps: f64,
    /// Use the gray level as class id instead of 0.
    #[arg(long)]
    pub level_as_class: bool,
    /// Output JSON-lines file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Generate synthetic scenes: images/NNNNNN.ppm plus annotations.jsonl.
#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Objects per image, MIN-MAX.
    #[arg(long, default_value = "1-8", value_parser = io::parse_count_range)]
    pub objects: (usize, usize),
    /// Circumradius range in pixels, MIN-MAX.
    #[arg(long, default_value = "8-40", value_parser = io::parse_real_range)]
    pub size: (f64, f64),
    /// Any of circle, rectangle, triangle, star, polygon.
    #[arg(long, value_delimiter = ',', default_value = "circle,rectangle,triangle,star,polygon")]
    pub primitives: Vec<String>,
    #[arg(long, value_enum, default_value_t = BackgroundArg::Flat)]
    pub background: BackgroundArg,
    #[arg(long, default_value_t = 5)]
    pub spikes: usize,
    /// Write annotations only.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackgroundArg {
    Flat,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalModeArg {
    Box,
    Mask,
}

/// COCO-style AP of detections against ground truth.
///
/// Prints CSV with columns class_id, ap, ap50, ap75 and a final mean row.
#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Detections (JSON lines, every object with a score).
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long = "ground-truth")]
    pub ground_truth: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalModeArg::Box)]
    pub mode: EvalModeArg,
    /// Apply per-class NMS at this IoU before evaluating.
    #[arg(long)]
    pub nms: Option<f64>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Compare direct and stairstep hypercolumn aggregation.
///
/// Prints CSV with columns levels, delta, height, width, interpolation,
/// cases, max_abs_diff, direct_additions, stairstep_additions.
#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub levels: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub delta: usize,
    /// Finest level size HxW.
    #[arg(long, default_value = "32x32", value_parser = io::parse_size)]
    pub size: (u32, u32),
    #[arg(long, default_value_t = 10)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Check the analytic loss gradient against central finite differences.
#[derive(Args, Debug)]
pub struct LossCheckArgs {
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("POLYKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = match value.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return usage(format!("POLYKIT_THREADS must be a positive integer, got '{value}'")),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Audit(a) => audit::audit(&a),
        Command::Anchors(a) => audit::anchors(&a),
        Command::Extract(a) => extract::extract(&a),
        Command::Synth(a) => synth::synth(&a),
        Command::Eval(a) => synth::eval(&a),
        Command::UpsampleBench(a) => bench::upsample_bench(&a),
        Command::LossCheck(a) => bench::loss_check(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polykit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
