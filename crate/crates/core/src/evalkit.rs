//! COCO-style box evaluation: AP over IoU thresholds 0.50:0.05:0.95, AP50,
//! AP75 and AP restricted to small/medium/large area ranges.
//!
//! Matching is greedy in descending score order per image and category.
//! Precision is interpolated on a 101-point recall grid after taking the
//! non-increasing envelope. Ground truth outside an area range is ignored
//! for that range, as are unmatched detections whose own area falls outside
//! it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::suppression::{rank_order, ScoredBox};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub area: f64,
    /// Crowd/ignore region: matching it makes a detection neither TP nor FP.
    pub ignore: bool,
}

impl GroundTruth {
    /// Ground truth whose area is the box area.
    pub fn from_box(id: u64, class_id: u32, bbox: BBox) -> Self {
        GroundTruth { id, class_id, bbox, area: bbox.area(), ignore: false }
    }
}

/// Ground truth for a set of images over a fixed category list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    images: BTreeSet<u64>,
    categories: BTreeSet<u32>,
    per_image: BTreeMap<u64, Vec<GroundTruth>>,
}

impl GroundTruthSet {
    pub fn new(images: impl IntoIterator<Item = u64>, categories: impl IntoIterator<Item = u32>) -> Self {
        GroundTruthSet {
            images: images.into_iter().collect(),
            categories: categories.into_iter().collect(),
            per_image: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, image_id: u64, gt: GroundTruth) -> Result<()> {
        let bad = |reason: String| Error::Annotation { id: gt.id, reason };
        if !self.images.contains(&image_id) {
            return Err(bad(format!("unknown image_id {image_id}")));
        }
        if !self.categories.contains(&gt.class_id) {
            return Err(bad(format!("unknown category_id {}", gt.class_id)));
        }
        if gt.area.is_nan() || gt.area < 0.0 {
            return Err(bad(format!("invalid area {}", gt.area)));
        }
        let list = self.per_image.entry(image_id).or_default();
        if list.iter().any(|g| g.id == gt.id) {
            return Err(bad(format!("duplicate id in image {image_id}")));
        }
        list.push(gt);
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = u64> + '_ {
        self.images.iter().copied()
    }

    pub fn categories(&self) -> impl Iterator<Item = u32> + '_ {
        self.categories.iter().copied()
    }

    pub fn image(&self, image_id: u64) -> &[GroundTruth] {
        self.per_image.get(&image_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.per_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Detections keyed by image id.
pub type DetectionSet = BTreeMap<u64, Vec<ScoredBox>>;

/// Half-open area interval `[lo, hi)`; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl AreaRange {
    pub const fn new(lo: f64, hi: Option<f64>) -> Self {
        AreaRange { lo, hi }
    }

    #[inline]
    pub fn contains(&self, area: f64) -> bool {
        area >= self.lo && self.hi.is_none_or(|hi| area < hi)
    }

    fn upper(&self) -> f64 {
        self.hi.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRanges {
    pub all: AreaRange,
    pub small: AreaRange,
    pub medium: AreaRange,
    pub large: AreaRange,
}

impl AreaRanges {
    /// Small 10-144, medium 144-1024, large 1024 and above (pixels^2).
    pub const fn aerial() -> Self {
        AreaRanges {
            all: AreaRange::new(0.0, None),
            small: AreaRange::new(10.0, Some(144.0)),
            medium: AreaRange::new(144.0, Some(1024.0)),
            large: AreaRange::new(1024.0, None),
        }
    }

    /// Stock COCO boundaries at 32^2 and 96^2.
    pub const fn coco() -> Self {
        AreaRanges {
            all: AreaRange::new(0.0, None),
            small: AreaRange::new(0.0, Some(1024.0)),
            medium: AreaRange::new(1024.0, Some(9216.0)),
            large: AreaRange::new(9216.0, None),
        }
    }

    fn as_array(&self) -> [AreaRange; 4] {
        [self.all, self.small, self.medium, self.large]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub area_ranges: AreaRanges,
    /// Per-image cap applied by score before matching.
    pub max_detections: usize,
    pub recall_points: usize,
}

/// 0.50, 0.55, ..., 0.95 computed as exact decimal quotients.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: coco_iou_thresholds(),
            area_ranges: AreaRanges::aerial(),
            max_detections: 1000,
            recall_points: 101,
        }
    }
}

impl EvalConfig {
    pub fn with_max_detections(mut self, n: usize) -> Self {
        self.max_detections = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::Config("no IoU thresholds".into()));
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("IoU thresholds must be strictly increasing".into()));
        }
        for r in self.area_ranges.as_array() {
            if !(r.lo >= 0.0 && r.lo < r.upper()) {
                return Err(Error::Config(format!("empty or negative area range {r:?}")));
            }
        }
        let AreaRanges { small, medium, large, .. } = self.area_ranges;
        if small.upper() > medium.lo || medium.upper() > large.lo {
            return Err(Error::Config("small/medium/large ranges overlap".into()));
        }
        if self.max_detections == 0 {
            return Err(Error::Config("max detections must be positive".into()));
        }
        if self.recall_points < 2 {
            return Err(Error::Config("need at least two recall points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    /// Matched an ignored ground truth, or an unmatched detection outside
    /// the evaluated area range.
    Ignored,
}

/// Greedy matching for one image and one category. The result is aligned
/// with `dets` (input order), not with score order.
pub fn match_image(dets: &[ScoredBox], gts: &[GroundTruth], iou_threshold: f64) -> Vec<MatchOutcome> {
    match_in_range(dets, gts, &[iou_threshold], AreaRange::new(0.0, None)).pop().unwrap()
}

/// Matching at several thresholds at once; `out[t][d]` is aligned with
/// `dets`.
fn match_in_range(
    dets: &[ScoredBox],
    gts: &[GroundTruth],
    thresholds: &[f64],
    range: AreaRange,
) -> Vec<Vec<MatchOutcome>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| rank_order(&dets[a], &dets[b]));

    let ignored: Vec<bool> = gts.iter().map(|g| g.ignore || !range.contains(g.area)).collect();
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&g| ignored[g]);

    let ious: Vec<Vec<f64>> =
        order.iter().map(|&d| gt_order.iter().map(|&g| dets[d].bbox.iou(&gts[g].bbox)).collect()).collect();

    thresholds
        .iter()
        .map(|&t| {
            let mut out = vec![MatchOutcome::FalsePositive; dets.len()];
            let mut taken = vec![false; gt_order.len()];
            for (row, &d) in order.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for (col, &g) in gt_order.iter().enumerate() {
                    if taken[col] {
                        continue;
                    }
                    // a regular match beats any ignored one
                    if ignored[g] && best.is_some_and(|(b, _)| !ignored[gt_order[b]]) {
                        break;
                    }
                    let o = ious[row][col];
                    if o >= t && best.is_none_or(|(_, bo)| o > bo) {
                        best = Some((col, o));
                    }
                }
                out[d] = match best {
                    Some((col, _)) => {
                        taken[col] = true;
                        if ignored[gt_order[col]] {
                            MatchOutcome::Ignored
                        } else {
                            MatchOutcome::TruePositive
                        }
                    }
                    None if !range.contains(dets[d].bbox.area()) => MatchOutcome::Ignored,
                    None => MatchOutcome::FalsePositive,
                };
            }
            out
        })
        .collect()
}

/// One scored, matched detection contributing to a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedMatch {
    pub score: f64,
    pub image_id: u64,
    pub index: usize,
    pub true_positive: bool,
}

/// Interpolated AP over `recall_points` evenly spaced recall levels.
/// `None` when there is no ground truth.
pub fn average_precision(matches: &[RankedMatch], n_gt: usize, recall_points: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image_id.cmp(&b.image_id)).then(a.index.cmp(&b.index)));
    let mut recall = Vec::with_capacity(sorted.len());
    let mut precision = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for m in &sorted {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let last = (recall_points - 1) as f64;
    let total: f64 = (0..recall_points)
        .map(|i| {
            let r = i as f64 / last;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(total / recall_points as f64)
}

/// The metric row reported for a model: AP, AP50, AP75, AP_S, AP_M, AP_L.
/// `None` marks a metric with no ground truth in its range.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
}

impl MetricRow {
    pub const COLUMNS: [&'static str; 6] = ["AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"];

    pub fn values(&self) -> [Option<f64>; 6] {
        [self.ap, self.ap50, self.ap75, self.ap_s, self.ap_m, self.ap_l]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: MetricRow,
    pub per_category: BTreeMap<u32, MetricRow>,
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.3}", 100.0 * x),
        None => "-".to_string(),
    }
}

impl EvalReport {
    /// Aligned plain-text table, values in percent. `names` maps category ids
    /// to display names; missing ids print numerically.
    pub fn to_table(&self, names: &BTreeMap<u32, String>) -> String {
        let mut rows: Vec<(String, MetricRow)> = vec![("all".to_string(), self.overall)];
        for (id, row) in &self.per_category {
            let name = names.get(id).cloned().unwrap_or_else(|| id.to_string());
            rows.push((name, *row));
        }
        let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(8).max(8);
        let mut out = format!("{:<name_w$}", "category");
        for c in MetricRow::COLUMNS {
            out.push_str(&format!(" {c:>8}"));
        }
        out.push('\n');
        for (name, row) in rows {
            out.push_str(&format!("{name:<name_w$}"));
            for v in row.values() {
                out.push_str(&format!(" {:>8}", fmt_metric(v)));
            }
            out.push('\n');
        }
        out
    }

    /// The six overall values on one line.
    pub fn summary_line(&self) -> String {
        MetricRow::COLUMNS
            .iter()
            .zip(self.overall.values())
            .map(|(c, v)| format!("{c}={}", fmt_metric(v)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.into_iter().flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Caps each image's detections at `max` by rank.
fn truncate_per_image(dets: &[ScoredBox], max: usize) -> Vec<ScoredBox> {
    let mut v = dets.to_vec();
    v.sort_by(rank_order);
    v.truncate(max);
    v
}

/// Evaluates `dets` against `gts`. Every detection must reference a known
/// image and category.
pub fn evaluate(dets: &DetectionSet, gts: &GroundTruthSet, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    for (image_id, list) in dets {
        if !gts.images.contains(image_id) {
            let index = list.first().map_or(0, |d| d.index);
            return Err(Error::Detection { index, reason: format!("unknown image_id {image_id}") });
        }
        if let Some(d) = list.iter().find(|d| !gts.categories.contains(&d.class_id)) {
            return Err(Error::Detection { index: d.index, reason: format!("unknown category_id {}", d.class_id) });
        }
    }

    let mut thresholds = cfg.iou_thresholds.clone();
    for fixed in [0.5, 0.75] {
        if !thresholds.contains(&fixed) {
            thresholds.push(fixed);
        }
    }
    let n_cfg = cfg.iou_thresholds.len();
    let t50 = thresholds.iter().position(|&t| t == 0.5).unwrap();
    let t75 = thresholds.iter().position(|&t| t == 0.75).unwrap();
    let ranges = cfg.area_ranges.as_array();

    let truncated: BTreeMap<u64, Vec<ScoredBox>> =
        dets.iter().map(|(&img, list)| (img, truncate_per_image(list, cfg.max_detections))).collect();

    // ap[range][threshold] for one category
    let category_ap = |cat: u32| -> [Vec<Option<f64>>; 4] {
        ranges.map(|range| {
            let mut per_t: Vec<Vec<RankedMatch>> = vec![Vec::new(); thresholds.len()];
            let mut n_gt = 0usize;
            for image_id in gts.images() {
                let g: Vec<GroundTruth> = gts.image(image_id).iter().filter(|g| g.class_id == cat).copied().collect();
                let d: Vec<ScoredBox> = truncated
                    .get(&image_id)
                    .map(|l| l.iter().filter(|d| d.class_id == cat).copied().collect())
                    .unwrap_or_default();
                n_gt += g.iter().filter(|g| !g.ignore && range.contains(g.area)).count();
                if d.is_empty() {
                    continue;
                }
                for (t, outcomes) in match_in_range(&d, &g, &thresholds, range).into_iter().enumerate() {
                    for (det, o) in d.iter().zip(outcomes) {
                        if o != MatchOutcome::Ignored {
                            per_t[t].push(RankedMatch {
                                score: det.score,
                                image_id,
                                index: det.index,
                                true_positive: o == MatchOutcome::TruePositive,
                            });
                        }
                    }
                }
            }
            per_t.iter().map(|m| average_precision(m, n_gt, cfg.recall_points)).collect()
        })
    };

    let cats: Vec<u32> = gts.categories().collect();
    #[cfg(feature = "parallel")]
    let table: Vec<[Vec<Option<f64>>; 4]> = {
        use rayon::prelude::*;
        cats.par_iter().map(|&c| category_ap(c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let table: Vec<[Vec<Option<f64>>; 4]> = cats.iter().map(|&c| category_ap(c)).collect();

    let mut per_category = BTreeMap::new();
    for (&cat, ap) in cats.iter().zip(&table) {
        let over_cfg = |r: usize| mean_defined(ap[r][..n_cfg].iter().copied());
        per_category.insert(
            cat,
            MetricRow {
                ap: over_cfg(0),
                ap50: ap[0][t50],
                ap75: ap[0][t75],
                ap_s: over_cfg(1),
                ap_m: over_cfg(2),
                ap_l: over_cfg(3),
            },
        );
    }
    let col = |f: fn(&MetricRow) -> Option<f64>| mean_defined(per_category.values().map(f));
    let overall = MetricRow {
        ap: col(|r| r.ap),
        ap50: col(|r| r.ap50),
        ap75: col(|r| r.ap75),
        ap_s: col(|r| r.ap_s),
        ap_m: col(|r| r.ap_m),
        ap_l: col(|r| r.ap_l),
    };
    Ok(EvalReport { overall, per_category })
}
