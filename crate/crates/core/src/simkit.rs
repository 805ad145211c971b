//! Seeded synthetic scenes with crowded, overlapping objects and a simple
//! noisy detector, used to compare suppression settings under evaluation.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datakit::{CocoAnnotation, CocoCategory, CocoFile, CocoImage};
use crate::evalkit::{evaluate, DetectionSet, EvalConfig, GroundTruth, GroundTruthSet};
use crate::geometry::{BBox, ImageSize};
use crate::rng::{self, DetRng};
use crate::suppression::{suppress, ScoredBox, SuppressionConfig};
use crate::{Error, Result};

/// Overlap band for crowded pairs.
pub const PAIR_IOU_RANGE: (f64, f64) = (0.5, 0.8);
/// Ceiling on IoU between objects that are not crowded partners.
pub const MAX_BACKGROUND_IOU: f64 = 0.3;
const MAX_TRIES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub n_objects: usize,
    /// Fraction of objects placed as overlapping same-class pairs.
    pub crowding: f64,
    /// Object scale is log-uniform in sqrt(area) over this range.
    pub sqrt_area_min: f64,
    pub sqrt_area_max: f64,
    /// Width/height ratio, log-uniform over `[1/max_aspect, max_aspect]`.
    pub max_aspect: f64,
    pub n_classes: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 800,
            height: 800,
            n_objects: 50,
            crowding: 0.5,
            sqrt_area_min: 8.0,
            sqrt_area_max: 64.0,
            max_aspect: 2.0,
            n_classes: 3,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        ImageSize::new(self.width, self.height)?;
        if !(0.0..=1.0).contains(&self.crowding) {
            return Err(Error::Config(format!("crowding {} outside [0, 1]", self.crowding)));
        }
        if !(self.sqrt_area_min > 0.0 && self.sqrt_area_min <= self.sqrt_area_max && self.sqrt_area_max.is_finite()) {
            return Err(Error::Config("sqrt-area range must satisfy 0 < min <= max".into()));
        }
        if !(self.max_aspect >= 1.0 && self.max_aspect.is_finite()) {
            return Err(Error::Config("max aspect must be at least 1".into()));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        if self.n_objects == 0 {
            return Err(Error::Config("need at least one object".into()));
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        (self.crowding * self.n_objects as f64 / 2.0).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    pub size: ImageSize,
    pub spec: SceneSpec,
    /// Ids start at 1; class ids run `1..=n_classes`. Crowded pairs come
    /// first, as consecutive entries.
    pub objects: Vec<GroundTruth>,
}

impl Scene {
    pub fn ground_truth(&self, image_id: u64) -> GroundTruthSet {
        let mut gts = GroundTruthSet::new([image_id], 1..=self.spec.n_classes);
        for g in &self.objects {
            gts.add(image_id, *g).expect("scene objects are valid ground truth");
        }
        gts
    }

    /// The scene as a one-image annotation file with categories
    /// `class1..classN`.
    pub fn to_coco(&self, image_id: u64, file_name: &str) -> CocoFile {
        CocoFile {
            images: vec![CocoImage {
                id: image_id,
                width: self.size.width,
                height: self.size.height,
                file_name: file_name.to_string(),
                source_image_id: None,
                origin: None,
                undersized: false,
            }],
            annotations: self
                .objects
                .iter()
                .map(|g| CocoAnnotation {
                    id: g.id,
                    image_id,
                    category_id: g.class_id,
                    bbox: g.bbox.to_xywh(),
                    area: Some(g.area),
                    iscrowd: 0,
                })
                .collect(),
            categories: (1..=self.spec.n_classes).map(|id| CocoCategory { id, name: format!("class{id}") }).collect(),
        }
    }
}

fn log_uniform(r: &mut DetRng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo.ln()..=hi.ln()).exp()
    }
}

fn sample_dims(spec: &SceneSpec, r: &mut DetRng) -> (f64, f64) {
    let s = log_uniform(r, spec.sqrt_area_min, spec.sqrt_area_max);
    let ratio = log_uniform(r, 1.0 / spec.max_aspect, spec.max_aspect).sqrt();
    (s * ratio, s / ratio)
}

fn place(r: &mut DetRng, span_w: f64, span_h: f64, size: ImageSize) -> Option<(f64, f64)> {
    let (fw, fh) = (size.width as f64 - span_w, size.height as f64 - span_h);
    (fw >= 0.0 && fh >= 0.0).then(|| (r.random_range(0.0..=fw), r.random_range(0.0..=fh)))
}

fn clear_of(placed: &[GroundTruth], b: &BBox) -> bool {
    placed.iter().all(|g| g.bbox.iou(b) < MAX_BACKGROUND_IOU)
}

/// Generates one scene. `floor(crowding * n / 2)` pairs have IoU inside
/// [`PAIR_IOU_RANGE`]; every other pair of objects stays under
/// [`MAX_BACKGROUND_IOU`].
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let size = ImageSize::new(spec.width, spec.height)?;
    let mut r = rng::stream(spec.seed, 0);
    let mut objects: Vec<GroundTruth> = Vec::with_capacity(spec.n_objects);
    let push = |objects: &mut Vec<GroundTruth>, bbox: BBox, class_id: u32| {
        let id = objects.len() as u64 + 1;
        objects.push(GroundTruth::from_box(id, class_id, bbox));
    };

    for pair in 0..spec.n_pairs() {
        let mut done = false;
        for _ in 0..MAX_TRIES {
            let (w, h) = sample_dims(spec, &mut r);
            let target = r.random_range(PAIR_IOU_RANGE.0..=PAIR_IOU_RANGE.1);
            let horizontal: bool = r.random();
            // equal boxes offset by t along one axis overlap with IoU (d - t) / (d + t)
            let along = if horizontal { w } else { h };
            let shift = along * (1.0 - target) / (1.0 + target);
            let (sw, sh) = if horizontal { (w + shift, h) } else { (w, h + shift) };
            let Some((x, y)) = place(&mut r, sw, sh, size) else {
                continue;
            };
            let a = BBox { x1: x, y1: y, x2: x + w, y2: y + h };
            let b = if horizontal { a.translate(shift, 0.0) } else { a.translate(0.0, shift) };
            let o = a.iou(&b);
            if !(PAIR_IOU_RANGE.0..=PAIR_IOU_RANGE.1).contains(&o) || !b.is_within(size) {
                continue;
            }
            if !clear_of(&objects, &a) || !clear_of(&objects, &b) {
                continue;
            }
            let class_id = r.random_range(1..=spec.n_classes);
            push(&mut objects, a, class_id);
            push(&mut objects, b, class_id);
            done = true;
            break;
        }
        if !done {
            return Err(Error::Infeasible(format!("could not place crowded pair {pair} after {MAX_TRIES} tries")));
        }
    }

    while objects.len() < spec.n_objects {
        let mut done = false;
        for _ in 0..MAX_TRIES {
            let (w, h) = sample_dims(spec, &mut r);
            let Some((x, y)) = place(&mut r, w, h, size) else {
                continue;
            };
            let b = BBox { x1: x, y1: y, x2: x + w, y2: y + h };
            if clear_of(&objects, &b) {
                let class_id = r.random_range(1..=spec.n_classes);
                push(&mut objects, b, class_id);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Infeasible(format!(
                "could not place object {} of {} after {MAX_TRIES} tries",
                objects.len() + 1,
                spec.n_objects
            )));
        }
    }
    Ok(Scene { size, spec: *spec, objects })
}

/// A stand-in detector: one jittered candidate per object, optional
/// jittered duplicates, and background false positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    /// Std-dev of per-coordinate Gaussian jitter, pixels.
    pub sigma: f64,
    pub tp_score: (f64, f64),
    /// Expected background false positives per image.
    pub fp_rate: f64,
    pub fp_score: (f64, f64),
    /// Expected extra candidates per object.
    pub duplicate_rate: f64,
    pub duplicate_score: (f64, f64),
}

impl Default for DetectorNoise {
    fn default() -> Self {
        DetectorNoise {
            sigma: 2.0,
            tp_score: (0.5, 1.0),
            fp_rate: 5.0,
            fp_score: (0.1, 0.6),
            duplicate_rate: 0.5,
            duplicate_score: (0.1, 0.6),
        }
    }
}

impl DetectorNoise {
    /// Exact boxes, no duplicates, no false positives.
    pub fn noiseless() -> Self {
        DetectorNoise { sigma: 0.0, fp_rate: 0.0, duplicate_rate: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        if !(self.fp_rate >= 0.0 && self.duplicate_rate >= 0.0) {
            return Err(Error::Config("rates must be non-negative".into()));
        }
        for (lo, hi) in [self.tp_score, self.fp_score, self.duplicate_score] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!("score band [{lo}, {hi}] outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `floor(rate)` plus one more with probability `fract(rate)`.
fn draw_count(r: &mut DetRng, rate: f64) -> usize {
    let base = rate.floor();
    base as usize + (r.random::<f64>() < rate - base) as usize
}

fn draw_score(r: &mut DetRng, band: (f64, f64)) -> f64 {
    if band.0 == band.1 {
        band.0
    } else {
        r.random_range(band.0..=band.1)
    }
}

fn jitter(r: &mut DetRng, b: &BBox, normal: Option<&Normal<f64>>, size: ImageSize) -> BBox {
    let Some(n) = normal else {
        return *b;
    };
    let xs = (b.x1 + n.sample(r), b.x2 + n.sample(r));
    let ys = (b.y1 + n.sample(r), b.y2 + n.sample(r));
    BBox { x1: xs.0.min(xs.1), y1: ys.0.min(ys.1), x2: xs.0.max(xs.1), y2: ys.0.max(ys.1) }.clamp_to(size).0
}

/// Candidates in generation order: per object its main candidate then
/// duplicates, then false positives. `index` is the candidate position.
pub fn simulate_detections(scene: &Scene, noise: &DetectorNoise, seed: u64) -> Result<Vec<ScoredBox>> {
    noise.validate()?;
    let mut r = rng::stream(seed, 0);
    let normal = (noise.sigma > 0.0).then(|| Normal::new(0.0, noise.sigma).expect("validated sigma"));
    let mut out = Vec::new();
    for g in &scene.objects {
        let b = jitter(&mut r, &g.bbox, normal.as_ref(), scene.size);
        let s = draw_score(&mut r, noise.tp_score);
        out.push(ScoredBox::new(b, s, g.class_id, out.len()));
        for _ in 0..draw_count(&mut r, noise.duplicate_rate) {
            let b = jitter(&mut r, &g.bbox, normal.as_ref(), scene.size);
            let s = draw_score(&mut r, noise.duplicate_score);
            out.push(ScoredBox::new(b, s, g.class_id, out.len()));
        }
    }
    for _ in 0..draw_count(&mut r, noise.fp_rate) {
        let (w, h) = sample_dims(&scene.spec, &mut r);
        let (w, h) = (w.min(scene.size.width as f64), h.min(scene.size.height as f64));
        let (x, y) = place(&mut r, w, h, scene.size).expect("dims clamped to the image");
        let b = BBox { x1: x, y1: y, x2: x + w, y2: y + h };
        let class_id = r.random_range(1..=scene.spec.n_classes);
        let s = draw_score(&mut r, noise.fp_score);
        out.push(ScoredBox::new(b, s, class_id, out.len()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfig {
    pub name: String,
    #[serde(flatten)]
    pub config: SuppressionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub config: String,
    pub ap: f64,
    pub ap50: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub config: String,
    pub mean_ap: f64,
    pub mean_ap50: f64,
    /// Trials where this config's AP beat every other config strictly.
    pub wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbReport {
    pub trials: usize,
    pub rows: Vec<TrialRow>,
    pub summary: Vec<ConfigSummary>,
}

/// Per-trial scene and detector seeds derived from the master seed.
pub fn trial_seeds(master: u64, trial: usize) -> (u64, u64) {
    let mut r = rng::stream(master, trial as u64);
    (r.random(), r.random())
}

/// One seeded trial: scene plus raw (unsuppressed) detections.
pub fn trial_scene(spec: &SceneSpec, noise: &DetectorNoise, trial: usize) -> Result<(Scene, Vec<ScoredBox>)> {
    let (scene_seed, det_seed) = trial_seeds(spec.seed, trial);
    let scene = generate(&SceneSpec { seed: scene_seed, ..*spec })?;
    let dets = simulate_detections(&scene, noise, det_seed)?;
    Ok((scene, dets))
}

fn run_trial(
    spec: &SceneSpec,
    noise: &DetectorNoise,
    configs: &[NamedConfig],
    eval: &EvalConfig,
    trial: usize,
) -> Result<Vec<TrialRow>> {
    let (scene, raw) = trial_scene(spec, noise, trial)?;
    let gts = scene.ground_truth(1);
    configs
        .iter()
        .map(|nc| {
            let kept = suppress(&raw, &nc.config);
            let report = evaluate(&DetectionSet::from([(1, kept)]), &gts, eval)?;
            Ok(TrialRow {
                trial,
                config: nc.name.clone(),
                ap: report.overall.ap.unwrap_or(0.0),
                ap50: report.overall.ap50.unwrap_or(0.0),
            })
        })
        .collect()
}

/// Runs `trials` seeded scenes through every suppression config and
/// evaluates each result. Trial `i` uses the same scene and detections for
/// every config.
pub fn ab_compare(
    spec: &SceneSpec,
    noise: &DetectorNoise,
    configs: &[NamedConfig],
    trials: usize,
    eval: &EvalConfig,
) -> Result<AbReport> {
    spec.validate()?;
    noise.validate()?;
    eval.validate()?;
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    if configs.is_empty() {
        return Err(Error::Config("need at least one suppression config".into()));
    }
    for nc in configs {
        nc.config.validate()?;
    }

    #[cfg(feature = "parallel")]
    let per_trial: Vec<Vec<TrialRow>> = {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(|t| run_trial(spec, noise, configs, eval, t)).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_trial: Vec<Vec<TrialRow>> =
        (0..trials).map(|t| run_trial(spec, noise, configs, eval, t)).collect::<Result<_>>()?;

    let mut summary: Vec<ConfigSummary> = configs
        .iter()
        .map(|nc| ConfigSummary { config: nc.name.clone(), mean_ap: 0.0, mean_ap50: 0.0, wins: 0 })
        .collect();
    for rows in &per_trial {
        for (i, row) in rows.iter().enumerate() {
            summary[i].mean_ap += row.ap / trials as f64;
            summary[i].mean_ap50 += row.ap50 / trials as f64;
            if rows.iter().enumerate().all(|(j, other)| j == i || row.ap > other.ap) && rows.len() > 1 {
                summary[i].wins += 1;
            }
        }
    }
    Ok(AbReport { trials, rows: per_trial.into_iter().flatten().collect(), summary })
}

impl AbReport {
    /// `trial,config,ap,ap50`, one row per trial and config.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["trial", "config", "ap", "ap50"])?;
        for r in &self.rows {
            wtr.write_record([
                r.trial.to_string(),
                r.config.clone(),
                format!("{:.9}", r.ap),
                format!("{:.9}", r.ap50),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// `config,trials,mean_ap,mean_ap50,wins`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["config", "trials", "mean_ap", "mean_ap50", "wins"])?;
        for s in &self.summary {
            wtr.write_record([
                s.config.clone(),
                self.trials.to_string(),
                format!("{:.9}", s.mean_ap),
                format!("{:.9}", s.mean_ap50),
                s.wins.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suppression::SuppressionMode;

    fn spec(crowding: f64, n: usize, seed: u64) -> SceneSpec {
        SceneSpec { crowding, n_objects: n, seed, ..Default::default() }
    }

    fn max_pair_iou(objects: &[GroundTruth], skip_partners: bool) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..objects.len() {
            for j in i + 1..objects.len() {
                if skip_partners && j == i + 1 && i % 2 == 0 {
                    continue;
                }
                m = m.max(objects[i].bbox.iou(&objects[j].bbox));
            }
        }
        m
    }

    #[test]
    fn deterministic() {
        let a = generate(&spec(0.5, 30, 9)).unwrap();
        let b = generate(&spec(0.5, 30, 9)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a, generate(&spec(0.5, 30, 10)).unwrap());
    }

    #[test]
    fn uncrowded_scene_has_no_heavy_overlap() {
        let s = generate(&spec(0.0, 50, 3)).unwrap();
        assert_eq!(s.objects.len(), 50);
        assert!(max_pair_iou(&s.objects, false) < 0.5);
    }

    #[test]
    fn fully_crowded_pairs() {
        let s = generate(&spec(1.0, 10, 4)).unwrap();
        assert_eq!(s.objects.len(), 10);
        for p in s.objects.chunks(2) {
            let o = p[0].bbox.iou(&p[1].bbox);
            assert!((0.5..=0.8).contains(&o), "pair iou {o}");
            assert_eq!(p[0].class_id, p[1].class_id);
        }
        assert!(max_pair_iou(&s.objects, true) < MAX_BACKGROUND_IOU);
    }

    #[test]
    fn objects_inside_image() {
        for seed in 0..5 {
            let s = generate(&spec(0.5, 50, seed)).unwrap();
            assert!(s.objects.iter().all(|g| g.bbox.is_within(s.size)));
        }
    }

    #[test]
    fn infeasible_spec_fails() {
        let s = SceneSpec {
            width: 40,
            height: 40,
            n_objects: 200,
            sqrt_area_min: 20.0,
            sqrt_area_max: 20.0,
            ..Default::default()
        };
        assert!(matches!(generate(&s), Err(Error::Infeasible(_))));
    }

    #[test]
    fn noiseless_detections_match_gt() {
        let scene = generate(&spec(0.5, 20, 1)).unwrap();
        let d = simulate_detections(&scene, &DetectorNoise::noiseless(), 5).unwrap();
        assert_eq!(d.len(), 20);
        for (det, g) in d.iter().zip(&scene.objects) {
            assert_eq!(det.bbox, g.bbox);
            assert!((0.5..=1.0).contains(&det.score));
        }
    }

    #[test]
    fn duplicate_rate_one_doubles() {
        let scene = generate(&spec(0.5, 20, 1)).unwrap();
        let noise = DetectorNoise { duplicate_rate: 1.0, fp_rate: 0.0, ..Default::default() };
        let d = simulate_detections(&scene, &noise, 5).unwrap();
        assert_eq!(d.len(), 40);
        assert_eq!(d, simulate_detections(&scene, &noise, 5).unwrap());
    }

    fn configs() -> Vec<NamedConfig> {
        vec![
            NamedConfig { name: "nms".into(), config: SuppressionConfig::hard(0.5) },
            NamedConfig { name: "soft".into(), config: SuppressionConfig::soft(0.5) },
        ]
    }

    #[test]
    fn calibration_case_is_perfect() {
        let r =
            ab_compare(&spec(0.0, 30, 2), &DetectorNoise::noiseless(), &configs(), 3, &EvalConfig::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.ap == 1.0 && row.ap50 == 1.0));
    }

    #[test]
    fn identical_configs_tie() {
        let same = vec![
            NamedConfig { name: "a".into(), config: SuppressionConfig::hard(0.5) },
            NamedConfig { name: "b".into(), config: SuppressionConfig::hard(0.5) },
        ];
        let r = ab_compare(&spec(0.5, 20, 2), &DetectorNoise::default(), &same, 4, &EvalConfig::default()).unwrap();
        assert_eq!(r.summary[0].mean_ap, r.summary[1].mean_ap);
        assert_eq!(r.summary[0].wins + r.summary[1].wins, 0);
    }

    #[test]
    fn single_trial_table() {
        let r =
            ab_compare(&spec(0.5, 20, 2), &DetectorNoise::default(), &configs(), 1, &EvalConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 2);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        assert_eq!(r.summary[1].config, "soft");
        assert_eq!(configs()[1].config.mode, SuppressionMode::SoftLinear);
    }
}
