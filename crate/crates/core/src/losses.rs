//! Orthogonal projection loss (OPL) and adaptive class suppression loss
//! (ACSL), each returning its value and analytic gradient.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<G> {
    pub value: f64,
    pub gradient: G,
}

/// `B x D` feature rows with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    features: Vec<Vec<f64>>,
    labels: Vec<u32>,
}

impl FeatureBatch {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Input("empty feature batch".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Shape(format!("{} feature rows but {} labels", features.len(), labels.len())));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::Shape("feature rows have zero width".into()));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Shape(format!("row {i} has width {} not {dim}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("row {i} has a non-finite entry")));
            }
        }
        Ok(FeatureBatch { features, labels })
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean same-class and cross-class cosine similarities `(s, d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OplTerms {
    /// 1 when no same-class pair exists.
    pub same: f64,
    /// 0 when no cross-class pair exists.
    pub cross: f64,
}

/// `L = (1 - s) + |d|` where `s` and `d` are mean cosine similarities over
/// ordered same-class and cross-class pairs `i != j`.
pub fn opl(batch: &FeatureBatch) -> Result<LossOutput<Vec<Vec<f64>>>> {
    let (value, _, gradient) = opl_parts(batch)?;
    Ok(LossOutput { value, gradient })
}

pub fn opl_terms(batch: &FeatureBatch) -> Result<OplTerms> {
    opl_parts(batch).map(|(_, t, _)| t)
}

fn opl_parts(batch: &FeatureBatch) -> Result<(f64, OplTerms, Vec<Vec<f64>>)> {
    let n = batch.len();
    let norms: Vec<f64> = batch.features.iter().map(|f| dot(f, f).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Input(format!("feature row {i} has zero norm")));
    }
    let units: Vec<Vec<f64>> =
        batch.features.iter().zip(&norms).map(|(f, &nrm)| f.iter().map(|v| v / nrm).collect()).collect();

    let mut cos = vec![vec![0.0; n]; n];
    let (mut same_sum, mut cross_sum) = (0.0, 0.0);
    let (mut same_n, mut cross_n) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = dot(&units[i], &units[j]);
            cos[i][j] = c;
            if batch.labels[i] == batch.labels[j] {
                same_sum += c;
                same_n += 1;
            } else {
                cross_sum += c;
                cross_n += 1;
            }
        }
    }
    let same = if same_n > 0 { same_sum / same_n as f64 } else { 1.0 };
    let cross = if cross_n > 0 { cross_sum / cross_n as f64 } else { 0.0 };
    let value = (1.0 - same) + cross.abs();

    // dL/dc_ij per ordered pair; each unordered pair appears twice
    let same_coef = if same_n > 0 { -1.0 / same_n as f64 } else { 0.0 };
    // subgradient 0 at d = 0
    let sign = if cross > 0.0 {
        1.0
    } else if cross < 0.0 {
        -1.0
    } else {
        0.0
    };
    let cross_coef = if cross_n > 0 { sign / cross_n as f64 } else { 0.0 };
    let dim = batch.dim();
    let mut grad = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let coef = if batch.labels[i] == batch.labels[j] { same_coef } else { cross_coef };
            if coef == 0.0 {
                continue;
            }
            // d cos(f_i, f_j) / d f_i = (u_j - cos * u_i) / |f_i|
            let scale = 2.0 * coef / norms[i];
            for k in 0..dim {
                grad[i][k] += scale * (units[j][k] - cos[i][j] * units[i][k]);
            }
        }
    }
    Ok((value, OplTerms { same, cross }, grad))
}

/// `ce + lambda * opl`.
pub fn combined_loss(ce: f64, opl: f64, lambda: f64) -> f64 {
    ce + lambda * opl
}

pub const DEFAULT_OPL_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Softmax,
    Sigmoid,
}

/// Logits for one sample with its label and the suppression threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    pub logits: Vec<f64>,
    pub label: usize,
    pub eta: f64,
    pub activation: Activation,
}

impl LogitBatch {
    pub fn new(logits: Vec<f64>, label: usize, eta: f64) -> Result<Self> {
        let b = LogitBatch { logits, label, eta, activation: Activation::Softmax };
        b.validate()?;
        Ok(b)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.logits.len() < 2 {
            return Err(Error::Shape("need at least two classes".into()));
        }
        if self.label >= self.logits.len() {
            return Err(Error::Input(format!("label {} out of range for {} classes", self.label, self.logits.len())));
        }
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite logit".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        Ok(())
    }

    /// Class probabilities and their logarithms.
    pub fn probabilities(&self) -> (Vec<f64>, Vec<f64>) {
        match self.activation {
            Activation::Softmax => {
                let m = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + self.logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                let logp: Vec<f64> = self.logits.iter().map(|z| z - lse).collect();
                (logp.iter().map(|l| l.exp()).collect(), logp)
            }
            Activation::Sigmoid => {
                let logp: Vec<f64> = self.logits.iter().map(|&z| log_sigmoid(z)).collect();
                (logp.iter().map(|l| l.exp()).collect(), logp)
            }
        }
    }

    /// `w_k = 1`; other classes get 1 only when `p_i >= eta`.
    pub fn weights(&self) -> Vec<f64> {
        let (p, _) = self.probabilities();
        p.iter().enumerate().map(|(i, &pi)| if i == self.label || pi >= self.eta { 1.0 } else { 0.0 }).collect()
    }
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `L = -sum_i w_i log p_i` with the weights treated as constants.
pub fn acsl(batch: &LogitBatch) -> Result<LossOutput<Vec<f64>>> {
    batch.validate()?;
    let w = batch.weights();
    Ok(acsl_with_weights(batch, &w))
}

/// ACSL for caller-supplied weights. Zero-weight terms never evaluate a
/// logarithm.
pub fn acsl_with_weights(batch: &LogitBatch, w: &[f64]) -> LossOutput<Vec<f64>> {
    let (p, logp) = batch.probabilities();
    let value = -w.iter().zip(&logp).filter(|(wi, _)| **wi != 0.0).map(|(wi, lp)| wi * lp).sum::<f64>();
    let gradient = match batch.activation {
        // d(-log p_i)/dz_j = p_j - [i == j]
        Activation::Softmax => {
            let total: f64 = w.iter().sum();
            w.iter().zip(&p).map(|(wj, pj)| total * pj - wj).collect()
        }
        Activation::Sigmoid => w.iter().zip(&p).map(|(wj, pj)| -wj * (1.0 - pj)).collect(),
    };
    LossOutput { value, gradient }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassGroup {
    Rare,
    Common,
    Frequent,
}

impl ClassGroup {
    /// Percentage of background samples kept for this group.
    pub fn background_percent(self) -> usize {
        match self {
            ClassGroup::Rare => 1,
            ClassGroup::Common => 10,
            ClassGroup::Frequent => 100,
        }
    }
}

/// A training sample. Background samples carry the foreground class they
/// were drawn against in `class_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub class_id: u32,
    pub background: bool,
}

/// Keeps every foreground sample and a seeded subsample of background
/// samples: 1% for rare classes, 10% for common, all for frequent. Classes
/// missing from `groups` count as frequent. Output preserves input order.
pub fn background_sample_filter(samples: &[Sample], groups: &BTreeMap<u32, ClassGroup>, seed: u64) -> Vec<Sample> {
    let group_of = |s: &Sample| groups.get(&s.class_id).copied().unwrap_or(ClassGroup::Frequent);
    let mut buckets: BTreeMap<ClassGroup, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if s.background {
            buckets.entry(group_of(s)).or_default().push(i);
        }
    }
    let mut keep: Vec<bool> = samples.iter().map(|s| !s.background).collect();
    for (group, idx) in buckets {
        let n = idx.len();
        let k = (n * group.background_percent() + 50) / 100;
        let mut r = rng::stream(seed, group as u64);
        for pick in sample(&mut r, n, k.min(n)) {
            keep[idx[pick]] = true;
        }
    }
    samples.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| *s).collect()
}
