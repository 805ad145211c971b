//! Brute-force precision/recall oracle used to cross-check the evaluator.
//! Written directly from the matching rules with no shared code beyond the
//! input containers.

#![allow(dead_code)]

use detkit::evalkit::{DetectionSet, GroundTruthSet};

pub const THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Area ranges in reporting order: all, small, medium, large.
pub const RANGES: [(f64, f64); 4] = [(0.0, f64::INFINITY), (10.0, 144.0), (144.0, 1024.0), (1024.0, f64::INFINITY)];

fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn in_range(area: f64, r: (f64, f64)) -> bool {
    r.0 <= area && area < r.1
}

struct Det {
    image: u64,
    index: usize,
    score: f64,
    bbox: [f64; 4],
}

/// Interpolated AP from `(score-ranked) is_tp` flags.
fn interpolated_ap(flags: &[bool], n_gt: usize) -> f64 {
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, &f) in flags.iter().enumerate() {
        tp += f as usize;
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for i in 0..101 {
        let r = i as f64 / 100.0;
        let best = points.iter().filter(|(rec, _)| *rec >= r).map(|(_, p)| *p).fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// AP for one category, one threshold and one area range, or `None` with no
/// ground truth in range.
fn ap_one(gts: &GroundTruthSet, dets: &DetectionSet, cat: u32, t: f64, range: (f64, f64)) -> Option<f64> {
    let mut n_gt = 0;
    let mut scored: Vec<(Det, bool)> = Vec::new();
    for image in gts.images() {
        let g: Vec<_> = gts.image(image).iter().filter(|g| g.class_id == cat).collect();
        let ignored: Vec<bool> = g.iter().map(|g| g.ignore || !in_range(g.area, range)).collect();
        n_gt += ignored.iter().filter(|i| !**i).count();
        let mut d: Vec<Det> = dets
            .get(&image)
            .map(|l| {
                l.iter()
                    .filter(|d| d.class_id == cat)
                    .map(|d| Det { image, index: d.index, score: d.score, bbox: d.bbox.to_array() })
                    .collect()
            })
            .unwrap_or_default();
        d.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
        d.truncate(1000);
        let mut used = vec![false; g.len()];
        for det in d {
            // regular ground truth first, then ignored
            let mut pick: Option<usize> = None;
            for want_ignored in [false, true] {
                let mut best = t;
                let mut found = None;
                for (j, gt) in g.iter().enumerate() {
                    if used[j] || ignored[j] != want_ignored {
                        continue;
                    }
                    let o = iou(det.bbox, gt.bbox.to_array());
                    if o >= best && (found.is_none() || o > best) {
                        best = o;
                        found = Some(j);
                    }
                }
                if found.is_some() {
                    pick = found;
                    break;
                }
            }
            let area = (det.bbox[2] - det.bbox[0]) * (det.bbox[3] - det.bbox[1]);
            match pick {
                Some(j) => {
                    used[j] = true;
                    if !ignored[j] {
                        scored.push((det, true));
                    }
                }
                None if in_range(area, range) => scored.push((det, false)),
                None => {}
            }
        }
    }
    if n_gt == 0 {
        return None;
    }
    scored
        .sort_by(|(a, _), (b, _)| b.score.total_cmp(&a.score).then(a.image.cmp(&b.image)).then(a.index.cmp(&b.index)));
    let flags: Vec<bool> = scored.iter().map(|(_, f)| *f).collect();
    Some(interpolated_ap(&flags, n_gt))
}

fn mean(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `[AP, AP50, AP75, AP_S, AP_M, AP_L]` averaged over categories.
pub fn metric_row(gts: &GroundTruthSet, dets: &DetectionSet) -> [Option<f64>; 6] {
    let mut rows: Vec<[Option<f64>; 6]> = Vec::new();
    for cat in gts.categories() {
        let over = |r| mean(&THRESHOLDS.map(|t| ap_one(gts, dets, cat, t, r)));
        rows.push([
            over(RANGES[0]),
            ap_one(gts, dets, cat, 0.5, RANGES[0]),
            ap_one(gts, dets, cat, 0.75, RANGES[0]),
            over(RANGES[1]),
            over(RANGES[2]),
            over(RANGES[3]),
        ]);
    }
    std::array::from_fn(|i| mean(&rows.iter().map(|r| r[i]).collect::<Vec<_>>()))
}

/// Largest absolute difference between two rows; a defined/undefined
/// mismatch counts as infinite.
pub fn row_diff(a: &[Option<f64>; 6], b: &[Option<f64>; 6]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// A random evaluation problem with at most 5 ground truth boxes and 10
/// detections over one or two images and categories. Scores are rounded
/// to tenths so ties occur.
pub fn micro_instance(r: &mut detkit::rng::DetRng) -> (GroundTruthSet, DetectionSet) {
    use detkit::evalkit::GroundTruth;
    use detkit::suppression::ScoredBox;
    use detkit::BBox;
    use rand::Rng;

    let n_images = r.random_range(1..=2u64);
    let n_cats = r.random_range(1..=2u32);
    let mut gts = GroundTruthSet::new(1..=n_images, 1..=n_cats);
    let mut placed: Vec<(u64, u32, BBox)> = Vec::new();
    for id in 0..r.random_range(0..=5u64) {
        let (w, h) = (r.random_range(2.0..50.0), r.random_range(2.0..50.0));
        let (x, y) = (r.random_range(0.0..40.0), r.random_range(0.0..40.0));
        let bbox = BBox::from_xywh(x, y, w, h).unwrap();
        let (image, cat) = (r.random_range(1..=n_images), r.random_range(1..=n_cats));
        let mut g = GroundTruth::from_box(id + 1, cat, bbox);
        g.ignore = r.random_bool(0.1);
        gts.add(image, g).unwrap();
        placed.push((image, cat, bbox));
    }
    let mut dets = DetectionSet::new();
    for index in 0..r.random_range(0..=10usize) {
        let (image, cat, bbox) = if !placed.is_empty() && r.random_bool(0.6) {
            let (image, cat, b) = placed[r.random_range(0..placed.len())];
            let j = |r: &mut detkit::rng::DetRng| r.random_range(-4.0..4.0);
            let (x1, y1) = (b.x1 + j(r), b.y1 + j(r));
            let (x2, y2) = ((b.x2 + j(r)).max(x1 + 0.5), (b.y2 + j(r)).max(y1 + 0.5));
            (image, cat, BBox::new(x1, y1, x2, y2).unwrap())
        } else {
            let (w, h) = (r.random_range(2.0..50.0), r.random_range(2.0..50.0));
            let (x, y) = (r.random_range(0.0..40.0), r.random_range(0.0..40.0));
            (r.random_range(1..=n_images), r.random_range(1..=n_cats), BBox::from_xywh(x, y, w, h).unwrap())
        };
        let score = (r.random_range(0.0..1.0f64) * 10.0).round() / 10.0;
        dets.entry(image).or_default().push(ScoredBox::new(bbox, score, cat, index));
    }
    (gts, dets)
}
