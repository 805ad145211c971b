//! Hard NMS and linear Soft-NMS.
//!
//! Both modes share one greedy loop: take the highest-scoring remaining
//! detection, emit it, then rescore every remaining detection that overlaps
//! it with IoU `>= nt`. Hard mode drops those detections; Soft-NMS multiplies
//! their score by `1 - IoU`. The loop ends once no remaining score is above
//! `score_floor`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
    /// Position in the caller's input; breaks score ties.
    pub index: usize,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64, class_id: u32, index: usize) -> Self {
        ScoredBox { bbox, score, class_id, index }
    }
}

/// Descending score, then ascending index.
pub fn rank_order(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionMode {
    Hard,
    SoftLinear,
}

impl std::str::FromStr for SuppressionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(SuppressionMode::Hard),
            "soft" | "soft_linear" | "soft-linear" => Ok(SuppressionMode::SoftLinear),
            other => Err(Error::Config(format!("unknown suppression mode `{other}`"))),
        }
    }
}

/// What happens to a remaining detection overlapping the selected one with
/// IoU at or above the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayRule {
    /// Drop it.
    Remove,
    /// `score * (1 - iou)`.
    Linear,
    /// Score set to zero. With any floor this drops exactly what
    /// [`DecayRule::Remove`] drops.
    ZeroOut,
}

impl DecayRule {
    #[inline]
    fn apply(self, score: f64, iou: f64, nt: f64) -> Option<f64> {
        if iou < nt {
            return Some(score);
        }
        match self {
            DecayRule::Remove => None,
            DecayRule::Linear => Some(score * (1.0 - iou)),
            DecayRule::ZeroOut => Some(0.0),
        }
    }
}

impl From<SuppressionMode> for DecayRule {
    fn from(m: SuppressionMode) -> Self {
        match m {
            SuppressionMode::Hard => DecayRule::Remove,
            SuppressionMode::SoftLinear => DecayRule::Linear,
        }
    }
}

pub const MAX_DETECTIONS_COCO: usize = 100;
pub const MAX_DETECTIONS_WIDE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuppressionConfig {
    pub mode: SuppressionMode,
    /// IoU threshold `N_t`.
    pub nt: f64,
    pub score_floor: f64,
    pub max_detections: usize,
    pub class_agnostic: bool,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        SuppressionConfig {
            mode: SuppressionMode::Hard,
            nt: 0.6,
            score_floor: 0.001,
            max_detections: MAX_DETECTIONS_WIDE,
            class_agnostic: false,
        }
    }
}

impl SuppressionConfig {
    pub fn hard(nt: f64) -> Self {
        SuppressionConfig { mode: SuppressionMode::Hard, nt, ..Default::default() }
    }

    pub fn soft(nt: f64) -> Self {
        SuppressionConfig { mode: SuppressionMode::SoftLinear, nt, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nt) {
            return Err(Error::Config(format!("nt {} outside [0, 1]", self.nt)));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::Config(format!("score floor {} outside [0, 1]", self.score_floor)));
        }
        if self.max_detections == 0 {
            return Err(Error::Config("max detections must be positive".into()));
        }
        Ok(())
    }
}

/// Runs NMS or Soft-NMS according to `cfg.mode`.
pub fn suppress(dets: &[ScoredBox], cfg: &SuppressionConfig) -> Vec<ScoredBox> {
    suppress_with(dets, cfg, cfg.mode.into())
}

/// Same loop as [`suppress`] with an explicit decay rule; `cfg.mode` is
/// ignored.
pub fn suppress_with(dets: &[ScoredBox], cfg: &SuppressionConfig, rule: DecayRule) -> Vec<ScoredBox> {
    let mut out = if cfg.class_agnostic {
        suppress_group(dets.to_vec(), cfg, rule)
    } else {
        let mut groups: BTreeMap<u32, Vec<ScoredBox>> = BTreeMap::new();
        for d in dets {
            groups.entry(d.class_id).or_default().push(*d);
        }
        groups.into_values().flat_map(|g| suppress_group(g, cfg, rule)).collect()
    };
    out.sort_by(rank_order);
    out.truncate(cfg.max_detections);
    out
}

fn suppress_group(mut group: Vec<ScoredBox>, cfg: &SuppressionConfig, rule: DecayRule) -> Vec<ScoredBox> {
    // entries at or below the floor can never be selected again
    group.retain(|d| d.score > cfg.score_floor);
    if rule == DecayRule::Remove {
        return greedy_hard(group, cfg.nt);
    }
    let mut kept = Vec::new();
    while !group.is_empty() {
        let best = group.iter().enumerate().min_by(|(_, a), (_, b)| rank_order(a, b)).map(|(i, _)| i).unwrap();
        let pick = group.swap_remove(best);
        group.retain_mut(|d| match rule.apply(d.score, pick.bbox.iou(&d.bbox), cfg.nt) {
            Some(s) if s > cfg.score_floor => {
                d.score = s;
                true
            }
            _ => false,
        });
        kept.push(pick);
    }
    kept
}

// scores never change in hard mode, so one sort replaces the repeated argmax
fn greedy_hard(mut group: Vec<ScoredBox>, nt: f64) -> Vec<ScoredBox> {
    group.sort_by(rank_order);
    let mut removed = vec![false; group.len()];
    let mut kept = Vec::new();
    for i in 0..group.len() {
        if removed[i] {
            continue;
        }
        let pick = group[i];
        for (j, d) in group.iter().enumerate().skip(i + 1) {
            if !removed[j] && pick.bbox.iou(&d.bbox) >= nt {
                removed[j] = true;
            }
        }
        kept.push(pick);
    }
    kept
}

/// Literal transcription of the iterative definition, O(n^2) per step with
/// no shortcuts. Used as an oracle for [`suppress`].
pub fn reference_suppress(dets: &[ScoredBox], cfg: &SuppressionConfig) -> Vec<ScoredBox> {
    reference_suppress_with(dets, cfg, cfg.mode.into())
}

pub fn reference_suppress_with(dets: &[ScoredBox], cfg: &SuppressionConfig, rule: DecayRule) -> Vec<ScoredBox> {
    let mut classes: Vec<Option<u32>> = Vec::new();
    if cfg.class_agnostic {
        classes.push(None);
    } else {
        for d in dets {
            if !classes.contains(&Some(d.class_id)) {
                classes.push(Some(d.class_id));
            }
        }
    }

    let mut out: Vec<ScoredBox> = Vec::new();
    for class in classes {
        let mut remaining: Vec<ScoredBox> =
            dets.iter().filter(|d| class.is_none() || class == Some(d.class_id)).copied().collect();
        loop {
            if remaining.is_empty() {
                break;
            }
            let mut best = 0;
            for i in 1..remaining.len() {
                let (r, b) = (&remaining[i], &remaining[best]);
                if r.score > b.score || (r.score == b.score && r.index < b.index) {
                    best = i;
                }
            }
            if remaining[best].score <= cfg.score_floor {
                break;
            }
            let selected = remaining.remove(best);
            out.push(selected);
            let mut next = Vec::new();
            for mut r in remaining {
                let o = selected.bbox.iou(&r.bbox);
                if o >= cfg.nt {
                    match rule {
                        DecayRule::Remove => continue,
                        DecayRule::Linear => r.score *= 1.0 - o,
                        DecayRule::ZeroOut => r.score = 0.0,
                    }
                }
                next.push(r);
            }
            remaining = next;
        }
    }

    // insertion sort keeps the comparison explicit
    let mut sorted: Vec<ScoredBox> = Vec::with_capacity(out.len());
    for d in out {
        let pos = sorted
            .iter()
            .position(|s| d.score > s.score || (d.score == s.score && d.index < s.index))
            .unwrap_or(sorted.len());
        sorted.insert(pos, d);
    }
    sorted.truncate(cfg.max_detections);
    sorted
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sb(x1: f64, y1: f64, x2: f64, y2: f64, score: f64, index: usize) -> ScoredBox {
        ScoredBox::new(BBox::new(x1, y1, x2, y2).unwrap(), score, 0, index)
    }

    // iou((0,0,10,10), (2.5,0,12.5,10)) = 75 / 125 = 0.6
    fn overlapping_pair() -> Vec<ScoredBox> {
        vec![sb(0.0, 0.0, 10.0, 10.0, 0.9, 0), sb(2.5, 0.0, 12.5, 10.0, 0.8, 1)]
    }

    #[test]
    fn pair_iou_is_point_six() {
        let p = overlapping_pair();
        assert_eq!(p[0].bbox.iou(&p[1].bbox), 0.6);
    }

    #[test]
    fn hard_drops_overlap() {
        let out = suppress(&overlapping_pair(), &SuppressionConfig::hard(0.5));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn soft_decays_overlap() {
        let out = suppress(&overlapping_pair(), &SuppressionConfig::soft(0.5));
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].index, 1);
        assert!((out[1].score - 0.32).abs() < 1e-15);
        assert_eq!(out, reference_suppress(&overlapping_pair(), &SuppressionConfig::soft(0.5)));
        assert_eq!(
            suppress(&overlapping_pair(), &SuppressionConfig::hard(0.5)),
            reference_suppress(&overlapping_pair(), &SuppressionConfig::hard(0.5))
        );
    }

    #[test]
    fn threshold_boundary_decays() {
        // iou exactly equal to nt
        let p = overlapping_pair();
        assert_eq!(suppress(&p, &SuppressionConfig::hard(0.6)).len(), 1);
        let soft = suppress(&p, &SuppressionConfig::soft(0.6));
        assert!((soft[1].score - 0.32).abs() < 1e-15);
        assert_eq!(suppress(&p, &SuppressionConfig::hard(0.61)).len(), 2);
    }

    #[test]
    fn trivial_inputs() {
        for cfg in [SuppressionConfig::hard(0.5), SuppressionConfig::soft(0.5)] {
            let one = vec![sb(1.0, 1.0, 5.0, 5.0, 0.7, 0)];
            assert_eq!(suppress(&one, &cfg), one);
            let disjoint = vec![sb(0.0, 0.0, 1.0, 1.0, 0.4, 0), sb(5.0, 5.0, 6.0, 6.0, 0.6, 1)];
            let out = suppress(&disjoint, &cfg);
            assert_eq!(out.len(), 2);
            assert_eq!((out[0].score, out[1].score), (0.6, 0.4));
            assert!(suppress(&[], &cfg).is_empty());
            assert!(reference_suppress(&[], &cfg).is_empty());
        }
    }

    #[test]
    fn per_class_by_default() {
        let mut p = overlapping_pair();
        p[1].class_id = 3;
        assert_eq!(suppress(&p, &SuppressionConfig::hard(0.5)).len(), 2);
        let agnostic = SuppressionConfig { class_agnostic: true, ..SuppressionConfig::hard(0.5) };
        assert_eq!(suppress(&p, &agnostic).len(), 1);
    }

    #[test]
    fn floor_and_truncation() {
        let cfg = SuppressionConfig { score_floor: 0.35, ..SuppressionConfig::soft(0.5) };
        // decayed 0.32 falls under the floor
        assert_eq!(suppress(&overlapping_pair(), &cfg).len(), 1);
        let many: Vec<_> = (0..10).map(|i| sb(20.0 * i as f64, 0.0, 20.0 * i as f64 + 5.0, 5.0, 0.5, i)).collect();
        let cfg = SuppressionConfig { max_detections: 3, ..SuppressionConfig::hard(0.5) };
        let out = suppress(&many, &cfg);
        assert_eq!(out.iter().map(|d| d.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn config_validation() {
        assert!(SuppressionConfig::hard(1.5).validate().is_err());
        assert!(SuppressionConfig { max_detections: 0, ..Default::default() }.validate().is_err());
        assert!(SuppressionConfig { score_floor: -0.1, ..Default::default() }.validate().is_err());
        assert!(SuppressionConfig::default().validate().is_ok());
        assert_eq!("soft".parse::<SuppressionMode>().unwrap(), SuppressionMode::SoftLinear);
    }

    fn arb_dets() -> impl Strategy<Value = Vec<ScoredBox>> {
        proptest::collection::vec((0u32..40, 0u32..40, 1u32..20, 1u32..20, 0.0..1.0f64, 0u32..3), 0..20).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (x, y, w, h, s, c))| {
                    let b = BBox::from_xywh(x as f64, y as f64, w as f64, h as f64).unwrap();
                    ScoredBox::new(b, (s * 8.0).round() / 8.0, c, i)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_reference(dets in arb_dets(), nt in 0.3..0.8f64, soft in any::<bool>(), agnostic in any::<bool>()) {
            let cfg = SuppressionConfig {
                mode: if soft { SuppressionMode::SoftLinear } else { SuppressionMode::Hard },
                nt,
                class_agnostic: agnostic,
                ..Default::default()
            };
            prop_assert_eq!(suppress(&dets, &cfg), reference_suppress(&dets, &cfg));
        }

        #[test]
        fn output_invariants(dets in arb_dets(), nt in 0.3..0.8f64, soft in any::<bool>()) {
            let cfg = SuppressionConfig {
                mode: if soft { SuppressionMode::SoftLinear } else { SuppressionMode::Hard },
                nt,
                max_detections: 7,
                ..Default::default()
            };
            let out = suppress(&dets, &cfg);
            prop_assert!(out.len() <= 7);
            for w in out.windows(2) {
                prop_assert_eq!(rank_order(&w[0], &w[1]), Ordering::Less);
            }
            for d in &out {
                let orig = dets[d.index];
                prop_assert!(d.score <= orig.score);
                prop_assert_eq!(d.bbox, orig.bbox);
                if !soft {
                    prop_assert_eq!(d.score, orig.score);
                }
            }
        }

        #[test]
        fn zero_out_reproduces_hard(dets in arb_dets(), nt in 0.0..1.0f64, floor in 0.0..0.5f64) {
            let cfg = SuppressionConfig { score_floor: floor, ..SuppressionConfig::hard(nt) };
            let hard: Vec<usize> = suppress(&dets, &cfg).iter().map(|d| d.index).collect();
            let zero: Vec<usize> = suppress_with(&dets, &cfg, DecayRule::ZeroOut).iter().map(|d| d.index).collect();
            prop_assert_eq!(hard, zero);
        }

        #[test]
        fn permutation_resolved_by_index(dets in arb_dets(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut crate::rng::stream(seed, 0));
            let cfg = SuppressionConfig::soft(0.5);
            prop_assert_eq!(suppress(&dets, &cfg), suppress(&shuffled, &cfg));
        }
    }
}
