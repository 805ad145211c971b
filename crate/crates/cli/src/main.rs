mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use detkit::anchors::AnchorVariant;
use detkit::suppression::SuppressionMode;

#[derive(Debug, Parser)]
#[command(name = "detkit", version, about = "Detection post-processing, evaluation and verification tools")]
struct Cli {
    /// Worker threads; 0 picks the number of CPUs.
    #[arg(long, global = true, env = "DETKIT_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score detections against annotations (AP, AP50, AP75, AP_S, AP_M, AP_L).
    Evaluate(EvaluateArgs),
    /// Suppress overlapping detections with hard or linear soft NMS.
    Nms(NmsArgs),
    /// Generate pyramid anchors and report per-level counts.
    Anchors(AnchorsArgs),
    /// Cut images into fixed-size patches and clip their annotations.
    Tile(TileArgs),
    /// Per-instance size statistics and sqrt-area histograms.
    Stats(StatsArgs),
    /// Compare suppression settings on seeded synthetic crowded scenes.
    Simulate(SimulateArgs),
    /// Check loss gradients against finite differences.
    Losscheck(LosscheckArgs),
    /// Check convolution and scSE invariants.
    ScseCheck(ScseCheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AreaPreset {
    /// Small 10-144, medium 144-1024, large 1024+.
    Aerial,
    /// Boundaries at 32^2 and 96^2.
    Coco,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Annotation file (COCO JSON).
    #[arg(long)]
    annotations: PathBuf,
    /// Detection results (COCO results JSON).
    #[arg(long)]
    detections: PathBuf,
    /// Where to write the report JSON.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = detkit::suppression::MAX_DETECTIONS_WIDE)]
    max_det: usize,
    #[arg(long, value_enum, default_value_t = AreaPreset::Aerial)]
    area_ranges: AreaPreset,
}

#[derive(Debug, Args)]
struct NmsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// hard or soft (linear decay).
    #[arg(long, default_value = "soft", value_parser = parse_mode)]
    mode: SuppressionMode,
    #[arg(long, default_value_t = 0.6)]
    nt: f64,
    #[arg(long, default_value_t = 0.001)]
    score_floor: f64,
    #[arg(long, default_value_t = detkit::suppression::MAX_DETECTIONS_WIDE)]
    max_det: usize,
    /// Suppress across categories instead of within each.
    #[arg(long)]
    class_agnostic: bool,
}

#[derive(Debug, Args)]
struct AnchorsArgs {
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
    /// Size preset: default, a1 or a2.
    #[arg(long, default_value = "a2", value_parser = parse_variant)]
    variant: AnchorVariant,
    /// Pyramid config JSON; overrides --variant.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write every anchor as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TileArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 800)]
    patch: u32,
    #[arg(long, default_value_t = 800)]
    stride: u32,
    /// Minimum fraction of a box's area kept inside a patch.
    #[arg(long, default_value_t = 0.5)]
    retention: f64,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Per-instance CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Summary JSON with histograms.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = detkit::datakit::DEFAULT_BIN_WIDTH)]
    bin_width: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Experiment JSON with `scene`, `noise`, `configs` and `trials`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for ground truth, detections and comparison CSVs.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct LosscheckArgs {
    #[arg(long, default_value_t = 100)]
    batches: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the report JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScseCheckArgs {
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<SuppressionMode, String> {
    s.parse().map_err(|e: detkit::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<AnchorVariant, String> {
    s.parse().map_err(|e: detkit::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
