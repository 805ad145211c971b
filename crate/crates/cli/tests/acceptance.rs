//! Acceptance criteria 1-12. Prints one PASS/FAIL/SKIP line per criterion
//! and exits non-zero when any criterion fails.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use detkit::anchors::{decode_deltas, encode_deltas, generate_anchors, AnchorVariant, PyramidConfig};
use detkit::checks::{loss_gradient_suite, recal_suite};
use detkit::datakit::{load_dataset, stats, tile, Annotation, Category, Dataset, ImageRecord, TileConfig};
use detkit::evalkit::{evaluate, DetectionSet, EvalConfig, GroundTruth, GroundTruthSet};
use detkit::losses::{acsl, background_sample_filter, ClassGroup, LogitBatch, Sample};
use detkit::rng::{self, DetRng};
use detkit::simkit::{ab_compare, DetectorNoise, NamedConfig, SceneSpec};
use detkit::suppression::{reference_suppress, suppress, suppress_with, DecayRule, ScoredBox, SuppressionConfig};
use detkit::{BBox, ImageSize};
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Clustered boxes so that overlaps across all thresholds are common.
fn nms_instance(r: &mut DetRng) -> Vec<ScoredBox> {
    let centers: Vec<(f64, f64)> =
        (0..r.random_range(1..=3)).map(|_| (r.random_range(20.0..80.0), r.random_range(20.0..80.0))).collect();
    (0..r.random_range(0..=20))
        .map(|index| {
            let (cx, cy) = centers[r.random_range(0..centers.len())];
            let (w, h) = (r.random_range(8.0..30.0), r.random_range(8.0..30.0));
            let (x, y) = (cx + r.random_range(-6.0..6.0), cy + r.random_range(-6.0..6.0));
            let bbox = BBox::new(x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0).unwrap();
            // coarse scores produce ties
            let score = (r.random_range(0.0..1.0f64) * 20.0).round() / 20.0;
            ScoredBox::new(bbox, score, r.random_range(0..3), index)
        })
        .collect()
}

const NMS_INSTANCES: usize = 1000;
const NTS: [f64; 3] = [0.5, 0.6, 0.7];

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(1, 0);
    let mut mismatches = 0;
    let mut comparisons = 0;
    for _ in 0..NMS_INSTANCES {
        let dets = nms_instance(&mut r);
        let agnostic = r.random_bool(0.25);
        for nt in NTS {
            for mut cfg in [SuppressionConfig::hard(nt), SuppressionConfig::soft(nt)] {
                cfg.class_agnostic = agnostic;
                comparisons += 1;
                mismatches += usize::from(suppress(&dets, &cfg) != reference_suppress(&dets, &cfg));
            }
        }
    }
    let t = start.elapsed();
    check(
        mismatches == 0 && t < Duration::from_secs(5),
        format!("{mismatches} mismatches in {comparisons} comparisons, {}", secs(t)),
    )
}

fn criterion_2() -> Outcome {
    let mut r = rng::stream(1, 0);
    let mut mismatches = 0;
    let mut comparisons = 0;
    for _ in 0..NMS_INSTANCES {
        let dets = nms_instance(&mut r);
        // same draws as criterion 1, so both see identical instances
        let _agnostic = r.random_bool(0.25);
        for nt in NTS {
            let zeroed = suppress_with(&dets, &SuppressionConfig::soft(nt), DecayRule::ZeroOut);
            let hard = suppress(&dets, &SuppressionConfig::hard(nt));
            comparisons += 1;
            mismatches += usize::from(zeroed != hard);
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches in {comparisons} comparisons"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec { crowding: 0.5, n_objects: 50, seed: 3, ..Default::default() };
    let noise = DetectorNoise { sigma: 2.0, ..Default::default() };
    let configs = [
        NamedConfig { name: "hard".into(), config: SuppressionConfig::hard(0.5) },
        NamedConfig { name: "soft".into(), config: SuppressionConfig::soft(0.5) },
    ];
    let report = match ab_compare(&spec, &noise, &configs, 100, &EvalConfig::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let t = start.elapsed();
    let (hard, soft) = (&report.summary[0], &report.summary[1]);
    check(
        soft.mean_ap >= hard.mean_ap && soft.wins >= 70 && t < Duration::from_secs(60),
        format!("mean AP hard {:.4} soft {:.4}, soft wins {}/100, {}", hard.mean_ap, soft.mean_ap, soft.wins, secs(t)),
    )
}

fn single(gt: BBox, det: BBox) -> (GroundTruthSet, DetectionSet) {
    let mut gts = GroundTruthSet::new([1], [1]);
    gts.add(1, GroundTruth::from_box(1, 1, gt)).unwrap();
    let dets = DetectionSet::from([(1, vec![ScoredBox::new(det, 0.9, 1, 0)])]);
    (gts, dets)
}

fn criterion_4() -> Outcome {
    let cfg = EvalConfig::default();
    let mut r = rng::stream(4, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (gts, dets) = oracle::micro_instance(&mut r);
        let got = evaluate(&dets, &gts, &cfg).unwrap().overall.values();
        worst = worst.max(oracle::row_diff(&got, &oracle::metric_row(&gts, &dets)));
    }
    let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let (gts, dets) = single(b, b);
    let perfect = evaluate(&dets, &gts, &cfg).unwrap().overall;
    let (gts, dets) = single(b, BBox::new(2.5, 0.0, 12.5, 10.0).unwrap());
    let shifted = evaluate(&dets, &gts, &cfg).unwrap().overall;
    let hand = perfect.ap == Some(1.0) && shifted.ap50 == Some(1.0) && shifted.ap75 == Some(0.0);
    check(
        worst <= 1e-9 && hand,
        format!(
            "max |evaluate - oracle| = {worst:.2e} over 500 instances; perfect AP {:?}, IoU-0.6 AP50 {:?} AP75 {:?}",
            perfect.ap, shifted.ap50, shifted.ap75
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = EvalConfig::default();
    let mut rows = Vec::new();
    let mut ok = true;
    for (w, h, slot) in [(10.0, 10.0, 0), (20.0, 25.0, 1), (40.0, 50.0, 2)] {
        let b = BBox::new(0.0, 0.0, w, h).unwrap();
        let (gts, dets) = single(b, b);
        let row = evaluate(&dets, &gts, &cfg).unwrap().overall;
        let sizes = [row.ap_s, row.ap_m, row.ap_l];
        for (i, v) in sizes.iter().enumerate() {
            ok &= if i == slot { *v == Some(1.0) } else { v.is_none() };
        }
        rows.push(format!("area {}: S/M/L = {:?}", w * h, sizes));
    }
    check(ok, rows.join("; "))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    match loss_gradient_suite(100, 6) {
        Ok(report) => {
            let t = start.elapsed();
            let detail =
                report.suites.iter().map(|s| format!("{} {:.2e}", s.name, s.max_error)).collect::<Vec<_>>().join(", ");
            check(report.passed() && t < Duration::from_secs(10), format!("{detail}; {}", secs(t)))
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn criterion_7() -> Outcome {
    let mut r = rng::stream(7, 0);
    let mut ce_err: f64 = 0.0;
    let mut positive_weight_ok = true;
    for _ in 0..200 {
        let c = r.random_range(2..=8);
        let logits: Vec<f64> = (0..c).map(|_| r.random_range(-5.0..5.0)).collect();
        let label = r.random_range(0..c);
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let full_ce: f64 = -logits.iter().map(|v| (v.exp() / z).ln()).sum::<f64>();
        let got = acsl(&LogitBatch::new(logits.clone(), label, 0.0).unwrap()).unwrap().value;
        ce_err = ce_err.max((got - full_ce).abs());
        for eta in [r.random_range(0.0..=1.0), 1.0] {
            positive_weight_ok &= LogitBatch::new(logits.clone(), label, eta).unwrap().weights()[label] == 1.0;
        }
    }

    let groups = BTreeMap::from([(1, ClassGroup::Rare), (2, ClassGroup::Common), (3, ClassGroup::Frequent)]);
    let mut samples = Vec::new();
    for class_id in 1..=3u32 {
        for i in 0..1000u64 {
            samples.push(Sample { id: class_id as u64 * 10_000 + i, class_id, background: true });
        }
        samples.push(Sample { id: class_id as u64 * 10_000 + 5000, class_id, background: false });
    }
    let kept = background_sample_filter(&samples, &groups, 7);
    let count = |c: u32| kept.iter().filter(|s| s.class_id == c && s.background).count();
    let counts = (count(1), count(2), count(3));
    let foreground = kept.iter().filter(|s| !s.background).count();
    let repeat = background_sample_filter(&samples, &groups, 7) == kept;
    check(
        ce_err <= 1e-12 && positive_weight_ok && counts == (10, 100, 1000) && foreground == 3 && repeat,
        format!(
            "eta=0 vs cross-entropy {ce_err:.1e}; positive weight always 1: {positive_weight_ok}; background kept rare/common/frequent = {counts:?}"
        ),
    )
}

fn criterion_8() -> Outcome {
    match recal_suite(200, 8) {
        Ok(report) => {
            let detail = report
                .suites
                .iter()
                .map(|s| format!("{} {}", s.name, if s.passed { "ok" } else { "FAILED" }))
                .collect::<Vec<_>>()
                .join(", ");
            check(report.passed(), format!("{detail} (200 cases each)"))
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn criterion_9() -> Outcome {
    let mut count_errors = 0;
    let mut checked = 0;
    for variant in [AnchorVariant::Default, AnchorVariant::A1, AnchorVariant::A2] {
        let cfg = PyramidConfig::from_variant(variant);
        for (w, h) in [(800, 800), (801, 599), (1000, 333), (37, 1201)] {
            let levels = generate_anchors(&cfg, ImageSize::new(w, h).unwrap()).unwrap();
            for (lvl, spec) in levels.iter().zip(&cfg.levels) {
                let s = spec.stride as f64;
                let expected =
                    (h as f64 / s).ceil() * (w as f64 / s).ceil() * (spec.sizes.len() * cfg.aspect_ratios.len()) as f64;
                checked += 1;
                count_errors += usize::from(lvl.anchors.len() as f64 != expected);
            }
        }
    }
    let mut r = rng::stream(9, 0);
    let mut worst: f64 = 0.0;
    let rand_box = |r: &mut DetRng| {
        let (x, y) = (r.random_range(-100.0..900.0), r.random_range(-100.0..900.0));
        BBox::from_xywh(x, y, r.random_range(1.0..300.0), r.random_range(1.0..300.0)).unwrap()
    };
    for _ in 0..10_000 {
        let (anchor, target) = (rand_box(&mut r), rand_box(&mut r));
        let back = decode_deltas(&anchor, &encode_deltas(&anchor, &target).unwrap()).unwrap();
        for (a, b) in back.to_array().iter().zip(target.to_array()) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        count_errors == 0 && worst <= 1e-9,
        format!("{count_errors} count mismatches over {checked} levels; delta round trip max error {worst:.1e}"),
    )
}

fn big_fixture(r: &mut DetRng) -> Dataset {
    let mut annotations = Vec::new();
    for id in 1..=300u64 {
        let (w, h) = (r.random_range(4.0..120.0), r.random_range(4.0..120.0));
        let (x, y) = (r.random_range(0.0..1600.0 - w), r.random_range(0.0..1600.0 - h));
        let bbox = BBox::from_xywh(x, y, w, h).unwrap();
        annotations.push(Annotation { id, image_id: 1, class_id: 1, bbox, area: bbox.area(), iscrowd: false });
    }
    // boxes straddling the patch seams
    for (i, (x, y)) in [(780.0, 100.0), (100.0, 790.0), (770.0, 770.0)].into_iter().enumerate() {
        let bbox = BBox::from_xywh(x, y, 50.0, 40.0).unwrap();
        annotations.push(Annotation {
            id: 1000 + i as u64,
            image_id: 1,
            class_id: 1,
            bbox,
            area: bbox.area(),
            iscrowd: false,
        });
    }
    Dataset {
        images: vec![ImageRecord {
            id: 1,
            file_name: "large.png".into(),
            size: ImageSize::new(1600, 1600).unwrap(),
            source_image_id: None,
            origin: None,
            undersized: false,
        }],
        annotations,
        categories: vec![Category { id: 1, name: "object".into() }],
        clamped_boxes: 0,
    }
}

fn criterion_10() -> Outcome {
    let ds = big_fixture(&mut rng::stream(10, 0));
    let cfg = TileConfig { retention: 1e-9, ..Default::default() };
    let out = match tile(&ds, &cfg) {
        Ok(o) => o,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let windows: Vec<BBox> = [(0.0, 0.0), (800.0, 0.0), (0.0, 800.0), (800.0, 800.0)]
        .iter()
        .map(|&(x, y)| BBox::from_xywh(x, y, 800.0, 800.0).unwrap())
        .collect();
    let global: Vec<BBox> = out
        .annotations
        .iter()
        .map(|a| {
            let [ox, oy] = out.images[(a.image_id - 1) as usize].origin.unwrap();
            a.bbox.translate(ox as f64, oy as f64)
        })
        .collect();
    let same = |a: &BBox, b: &BBox| a.to_array().iter().zip(b.to_array()).all(|(x, y)| (x - y).abs() < 1e-9);

    let mut expected_pieces = 0;
    let mut lost = 0;
    let mut interior = 0;
    let mut interior_bad = 0;
    for a in &ds.annotations {
        let pieces: Vec<BBox> =
            windows.iter().filter_map(|w| a.bbox.intersection(w)).filter(|p| p.area() > 0.0).collect();
        expected_pieces += pieces.len();
        if !pieces.iter().any(|p| global.iter().any(|g| same(g, p))) {
            lost += 1;
        }
        if pieces.len() == 1 {
            interior += 1;
            interior_bad += usize::from(global.iter().filter(|g| same(g, &a.bbox)).count() != 1);
        }
    }
    check(
        out.images.len() == 4 && lost == 0 && interior_bad == 0 && out.annotations.len() == expected_pieces,
        format!(
            "{} patches; {} of {} annotations lost; {interior} interior, {interior_bad} not exactly once; {} pieces (expected {expected_pieces})",
            out.images.len(),
            lost,
            ds.annotations.len(),
            out.annotations.len()
        ),
    )
}

fn criterion_11() -> Outcome {
    let Some(path) = std::env::var_os("DETKIT_ISAID_ANNOTATIONS") else {
        return Outcome::Skip("set DETKIT_ISAID_ANNOTATIONS to an iSAID annotation file to run".into());
    };
    let report = match load_dataset(&path).and_then(|ds| stats(&ds, 10.0)) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    match report.small_fraction {
        Some(f) => check(
            (0.7..=0.9).contains(&f),
            format!("{} instances, small fraction {f:.4} (expected 0.8 +/- 0.1)", report.instances.len()),
        ),
        None => Outcome::Fail("dataset has no instances".into()),
    }
}

fn run_cli(args: &[String], threads: usize) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_detkit"))
        .args(args)
        .arg("--threads")
        .arg(threads.to_string())
        .env_remove("DETKIT_THREADS")
        .output()
        .expect("run detkit");
    (out.status.code().unwrap_or(-1), out.stdout)
}

/// Runs `args` (with `{out}` standing for a fresh output directory) three
/// times and returns a description of any difference.
fn determinism_case(root: &Path, name: &str, args: &[&str]) -> Option<String> {
    let mut runs = Vec::new();
    for (run, threads) in [(0, 1), (1, 1), (2, 4)] {
        let dir = root.join(format!("{name}_{run}"));
        std::fs::create_dir_all(&dir).unwrap();
        let argv: Vec<String> = args.iter().map(|a| a.replace("{out}", dir.to_str().unwrap())).collect();
        let (code, stdout) = run_cli(&argv, threads);
        if code != 0 {
            return Some(format!("{name} exited {code}"));
        }
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Some(format!("{name} wrote no files"));
        }
        runs.push((stdout, files));
    }
    if runs[0] != runs[1] {
        return Some(format!("{name}: reruns differ"));
    }
    if runs[0] != runs[2] {
        return Some(format!("{name}: --threads 1 and 4 differ"));
    }
    None
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let large = root.join("large.json");
    detkit::datakit::save_dataset(&large, &big_fixture(&mut rng::stream(12, 0))).unwrap();
    let ann = fixture("three_images.json");
    let dets = fixture("three_images_detections.json");
    let (ann, dets, large) = (ann.to_str().unwrap(), dets.to_str().unwrap(), large.to_str().unwrap());

    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("evaluate", vec!["evaluate", "--annotations", ann, "--detections", dets, "--output", "{out}/report.json"]),
        ("nms_soft", vec!["nms", "--input", dets, "--output", "{out}/kept.json", "--mode", "soft", "--nt", "0.6"]),
        ("nms_hard", vec!["nms", "--input", dets, "--output", "{out}/kept.json", "--mode", "hard"]),
        (
            "anchors",
            vec!["anchors", "--variant", "a2", "--width", "256", "--height", "200", "--output", "{out}/anchors.json"],
        ),
        ("tile", vec!["tile", "--annotations", large, "--output", "{out}/tiles.json"]),
        ("stats", vec!["stats", "--annotations", large, "--csv", "{out}/stats.csv", "--json", "{out}/stats.json"]),
        ("simulate", vec!["simulate", "--out-dir", "{out}", "--trials", "12", "--seed", "5"]),
        ("losscheck", vec!["losscheck", "--batches", "20", "--output", "{out}/loss.json"]),
        ("scse-check", vec!["scse-check", "--trials", "20", "--output", "{out}/scse.json"]),
    ];
    let problems: Vec<String> = cases.iter().filter_map(|(name, args)| determinism_case(root, name, args)).collect();
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} subcommands byte-identical across reruns and --threads 1/4", cases.len())
        } else {
            problems.join("; ")
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("fast suppression equals the reference transcription", criterion_1),
        ("zero-out decay reproduces hard suppression", criterion_2),
        ("soft suppression beats hard on crowded scenes", criterion_3),
        ("evaluator matches brute-force oracle", criterion_4),
        ("area ranges assign each size to one bucket", criterion_5),
        ("loss gradients match finite differences", criterion_6),
        ("ACSL reductions and background filter", criterion_7),
        ("recalibration numerics", criterion_8),
        ("anchor counts and delta round trip", criterion_9),
        ("tiling conservation", criterion_10),
        ("small-instance fraction on real annotations", criterion_11),
        ("CLI determinism", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {tag}  {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
