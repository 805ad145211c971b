use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use detkit::anchors::{generate_anchors, PyramidConfig};
use detkit::checks::{loss_gradient_suite, recal_suite, CheckReport};
use detkit::datakit::{
    detections_by_image, flatten_detections, load_dataset, load_detections, save_dataset, stats, tile, write_json,
    TileConfig,
};
use detkit::evalkit::{evaluate, AreaRanges, DetectionSet, EvalConfig};
use detkit::simkit::{ab_compare, trial_scene, DetectorNoise, NamedConfig, SceneSpec};
use detkit::suppression::{suppress, SuppressionConfig};
use detkit::ImageSize;
use serde::{Deserialize, Serialize};

use crate::{
    AnchorsArgs, AreaPreset, Command, EvaluateArgs, LosscheckArgs, NmsArgs, ScseCheckArgs, SimulateArgs, StatsArgs,
    TileArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Detkit(#[from] detkit::Error),
    #[error("invariant check failed:\n{0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Detkit(_) => 1,
            CliError::Invariant(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Evaluate(a) => run_evaluate(a),
        Command::Nms(a) => run_nms(a),
        Command::Anchors(a) => run_anchors(a),
        Command::Tile(a) => run_tile(a),
        Command::Stats(a) => run_stats(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Losscheck(a) => run_losscheck(a),
        Command::ScseCheck(a) => run_scse_check(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| detkit::Error::io(path, e))?))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| detkit::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| detkit::Error::json(path.display().to_string(), e).into())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let ds = load_dataset(&a.annotations)?;
    let dets = detections_by_image(&load_detections(&a.detections)?)?;
    let cfg = EvalConfig {
        area_ranges: match a.area_ranges {
            AreaPreset::Aerial => AreaRanges::aerial(),
            AreaPreset::Coco => AreaRanges::coco(),
        },
        ..EvalConfig::default()
    }
    .with_max_detections(a.max_det);
    let report = evaluate(&dets, &ds.ground_truth()?, &cfg)?;
    print!("{}", report.to_table(&ds.category_names()));
    println!("{}", report.summary_line());
    if let Some(out) = &a.output {
        write_json(out, &report)?;
    }
    Ok(())
}

fn run_nms(a: NmsArgs) -> Result<()> {
    let cfg = SuppressionConfig {
        mode: a.mode,
        nt: a.nt,
        score_floor: a.score_floor,
        max_detections: a.max_det,
        class_agnostic: a.class_agnostic,
    };
    cfg.validate()?;
    let dets = detections_by_image(&load_detections(&a.input)?)?;
    let before: usize = dets.values().map(Vec::len).sum();
    let kept: DetectionSet = dets.iter().map(|(&img, list)| (img, suppress(list, &cfg))).collect();
    let flat = flatten_detections(&kept);
    write_json(&a.output, &flat)?;
    println!("images={} detections_in={before} detections_out={}", dets.len(), flat.len());
    Ok(())
}

#[derive(Serialize)]
struct AnchorDump {
    image_width: u32,
    image_height: u32,
    aspect_ratios: Vec<f64>,
    levels: Vec<LevelDump>,
}

#[derive(Serialize)]
struct LevelDump {
    name: String,
    stride: u32,
    sizes: Vec<f64>,
    grid_height: usize,
    grid_width: usize,
    count: usize,
    /// `[x1, y1, x2, y2]` per anchor.
    anchors: Vec<[f64; 4]>,
}

fn run_anchors(a: AnchorsArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => read_json::<PyramidConfig>(path)?,
        None => PyramidConfig::from_variant(a.variant),
    };
    let img = ImageSize::new(a.width, a.height)?;
    let levels = generate_anchors(&cfg, img)?;
    println!("{:<6} {:>6} {:>10} {:>10} {:>8}", "level", "stride", "sizes", "grid", "anchors");
    let mut total = 0;
    for (lvl, spec) in levels.iter().zip(&cfg.levels) {
        let sizes = spec.sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
        let grid = format!("{}x{}", lvl.grid_height, lvl.grid_width);
        println!("{:<6} {:>6} {:>10} {:>10} {:>8}", lvl.name, lvl.stride, sizes, grid, lvl.anchors.len());
        total += lvl.anchors.len();
    }
    println!("total {total}");
    if let Some(out) = &a.output {
        let dump = AnchorDump {
            image_width: a.width,
            image_height: a.height,
            aspect_ratios: cfg.aspect_ratios.clone(),
            levels: levels
                .iter()
                .zip(&cfg.levels)
                .map(|(l, spec)| LevelDump {
                    name: l.name.clone(),
                    stride: l.stride,
                    sizes: spec.sizes.clone(),
                    grid_height: l.grid_height,
                    grid_width: l.grid_width,
                    count: l.anchors.len(),
                    anchors: l.anchors.iter().map(|b| b.to_array()).collect(),
                })
                .collect(),
        };
        write_json(out, &dump)?;
    }
    Ok(())
}

fn run_tile(a: TileArgs) -> Result<()> {
    let ds = load_dataset(&a.annotations)?;
    let cfg = TileConfig { patch: a.patch, stride: a.stride, retention: a.retention };
    let out = tile(&ds, &cfg)?;
    save_dataset(&a.output, &out)?;
    println!(
        "images={} patches={} annotations_in={} annotations_out={}",
        ds.images.len(),
        out.images.len(),
        ds.annotations.len(),
        out.annotations.len()
    );
    Ok(())
}

fn run_stats(a: StatsArgs) -> Result<()> {
    let ds = load_dataset(&a.annotations)?;
    let report = stats(&ds, a.bin_width)?;
    match report.small_fraction {
        Some(f) => println!(
            "instances={} small_fraction={f:.6} (width and height <= {} of the image)",
            report.instances.len(),
            report.small_dim_threshold
        ),
        None => println!("instances=0 small_fraction=-"),
    }
    if let Some(path) = &a.csv {
        report.write_csv(create(path)?)?;
    }
    if let Some(path) = &a.json {
        write_json(path, &report.summary())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct Experiment {
    scene: SceneSpec,
    noise: DetectorNoise,
    configs: Vec<NamedConfig>,
    trials: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            scene: SceneSpec::default(),
            noise: DetectorNoise::default(),
            configs: vec![
                NamedConfig { name: "nms".into(), config: SuppressionConfig::hard(0.5) },
                NamedConfig { name: "soft-nms".into(), config: SuppressionConfig::soft(0.5) },
            ],
            trials: 100,
        }
    }
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let mut exp = match &a.config {
        Some(path) => read_json::<Experiment>(path)?,
        None => Experiment::default(),
    };
    if let Some(t) = a.trials {
        exp.trials = t;
    }
    if let Some(s) = a.seed {
        exp.scene.seed = s;
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| detkit::Error::io(&a.out_dir, e))?;

    let report = ab_compare(&exp.scene, &exp.noise, &exp.configs, exp.trials, &EvalConfig::default())?;
    let (scene, raw) = trial_scene(&exp.scene, &exp.noise, 0)?;
    write_json(a.out_dir.join("ground_truth.json"), &scene.to_coco(1, "trial_0.png"))?;
    let dets: DetectionSet = [(1, raw)].into();
    write_json(a.out_dir.join("detections.json"), &flatten_detections(&dets))?;
    report.write_csv(create(&a.out_dir.join("comparison.csv"))?)?;
    report.write_summary_csv(create(&a.out_dir.join("summary.csv"))?)?;

    println!("{:<12} {:>8} {:>8} {:>6}", "config", "AP", "AP50", "wins");
    for s in &report.summary {
        println!("{:<12} {:>8.3} {:>8.3} {:>6}", s.config, 100.0 * s.mean_ap, 100.0 * s.mean_ap50, s.wins);
    }
    println!("trials {}", report.trials);
    Ok(())
}

fn finish_check(report: CheckReport, output: Option<&Path>) -> Result<()> {
    print!("{report}");
    if let Some(path) = output {
        write_json(path, &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Invariant(report.to_string()))
    }
}

fn run_losscheck(a: LosscheckArgs) -> Result<()> {
    finish_check(loss_gradient_suite(a.batches, a.seed)?, a.output.as_deref())
}

fn run_scse_check(a: ScseCheckArgs) -> Result<()> {
    finish_check(recal_suite(a.trials, a.seed)?, a.output.as_deref())
}
