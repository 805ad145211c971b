//! Seeded self-check suites for the losses and the recalibration blocks.
//! Each suite reports its worst observed error against a tolerance.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::gradcheck::{max_relative_error, numerical_gradient};
use crate::losses::{acsl_with_weights, opl, Activation, FeatureBatch, LogitBatch};
use crate::recal::{
    channel_gates, conv2d, cse, reference_conv2d, rpn_head_forward, scse, spatial_gates, sse, Combine, ConvWeights,
    FeatureMap, Padding, RpnHeadConfig, RpnHeadWeights, ScseWeights,
};
use crate::rng::{self, DetRng};
use crate::Result;

pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// ACSL test points keep every probability at least this far from eta.
pub const THRESHOLD_MARGIN: f64 = 1e-3;
pub const RECAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteResult {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        SuiteResult { name: name.to_string(), cases, max_error, tolerance, passed: max_error <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub suites: Vec<SuiteResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(
                f,
                "{} {:<24} cases={:<5} max_error={:.3e} tolerance={:.0e}",
                if s.passed { "PASS" } else { "FAIL" },
                s.name,
                s.cases,
                s.max_error,
                s.tolerance
            )?;
        }
        Ok(())
    }
}

fn normal(r: &mut DetRng) -> f64 {
    StandardNormal.sample(r)
}

fn random_feature_batch(r: &mut DetRng) -> Result<FeatureBatch> {
    let b = r.random_range(2..=8);
    let d = r.random_range(2..=16);
    let features = (0..b).map(|_| (0..d).map(|_| normal(r)).collect()).collect();
    let labels = (0..b).map(|_| r.random_range(0..3)).collect();
    FeatureBatch::new(features, labels)
}

fn opl_case(r: &mut DetRng) -> Result<f64> {
    let batch = random_feature_batch(r)?;
    let (b, d) = (batch.len(), batch.dim());
    let labels = batch.labels().to_vec();
    let analytic: Vec<f64> = opl(&batch)?.gradient.concat();
    let x: Vec<f64> = batch.features().concat();
    let f = |v: &[f64]| {
        let rows = v.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
        debug_assert_eq!(rows.len(), b);
        opl(&FeatureBatch::new(rows, labels.clone()).expect("same shape")).expect("valid batch").value
    };
    Ok(max_relative_error(&analytic, &numerical_gradient(f, &x, GRADIENT_STEP)))
}

/// Draws logits until every probability sits clear of eta.
fn random_logit_batch(r: &mut DetRng, activation: Activation) -> Result<LogitBatch> {
    loop {
        let c = r.random_range(2..=8);
        let logits = (0..c).map(|_| 2.0 * normal(r)).collect();
        let label = r.random_range(0..c);
        let eta = r.random_range(0.0..=1.0);
        let batch = LogitBatch::new(logits, label, eta)?.with_activation(activation);
        let (p, _) = batch.probabilities();
        if p.iter().all(|pi| (pi - eta).abs() > THRESHOLD_MARGIN) {
            return Ok(batch);
        }
    }
}

fn acsl_case(r: &mut DetRng, activation: Activation) -> Result<f64> {
    let batch = random_logit_batch(r, activation)?;
    let w = batch.weights();
    let analytic = acsl_with_weights(&batch, &w).gradient;
    let f = |z: &[f64]| {
        let probe = LogitBatch { logits: z.to_vec(), ..batch.clone() };
        acsl_with_weights(&probe, &w).value
    };
    Ok(max_relative_error(&analytic, &numerical_gradient(f, &batch.logits, GRADIENT_STEP)))
}

fn worst(cases: usize, mut case: impl FnMut() -> Result<f64>) -> Result<f64> {
    let mut m: f64 = 0.0;
    for _ in 0..cases {
        m = m.max(case()?);
    }
    Ok(m)
}

/// Analytic versus central-difference gradients for OPL and both ACSL
/// activations, `batches` random cases each. ACSL weights are frozen at the
/// evaluation point.
pub fn loss_gradient_suite(batches: usize, seed: u64) -> Result<CheckReport> {
    let mut r = rng::stream(seed, 0);
    let opl_err = worst(batches, || opl_case(&mut r))?;
    let mut r = rng::stream(seed, 1);
    let softmax_err = worst(batches, || acsl_case(&mut r, Activation::Softmax))?;
    let mut r = rng::stream(seed, 2);
    let sigmoid_err = worst(batches, || acsl_case(&mut r, Activation::Sigmoid))?;
    Ok(CheckReport {
        suites: vec![
            SuiteResult::new("opl_gradient", batches, opl_err, GRADIENT_TOLERANCE),
            SuiteResult::new("acsl_softmax_gradient", batches, softmax_err, GRADIENT_TOLERANCE),
            SuiteResult::new("acsl_sigmoid_gradient", batches, sigmoid_err, GRADIENT_TOLERANCE),
        ],
    })
}

fn random_map(r: &mut DetRng, c: usize, h: usize, w: usize, nonnegative: bool) -> Result<FeatureMap> {
    let data = (0..c * h * w)
        .map(|_| {
            let v = normal(r);
            if nonnegative {
                v.abs()
            } else {
                v
            }
        })
        .collect();
    FeatureMap::from_vec(c, h, w, data)
}

fn conv_case(r: &mut DetRng) -> Result<f64> {
    let (c_in, c_out) = (r.random_range(1..=4), r.random_range(1..=4));
    let k = [1, 3, 5][r.random_range(0..3)];
    let padding = if r.random() { Padding::Same } else { Padding::Valid };
    let min = if padding == Padding::Valid { k } else { 1 };
    let (h, w) = (r.random_range(min..=8), r.random_range(min..=8));
    let x = random_map(r, c_in, h, w, false)?;
    let weights = ConvWeights::seeded(c_out, c_in, k, 1.0, r);
    Ok(conv2d(&x, &weights, padding)?.max_abs_diff(&reference_conv2d(&x, &weights, padding)?))
}

fn zero_scse_case(r: &mut DetRng) -> Result<f64> {
    let c = r.random_range(1..=4);
    let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
    let x = random_map(r, c, h, w, true)?;
    let w = ScseWeights::zeros(c, 1)?;
    let half = x.map(|v| 0.5 * v);
    let mut err: f64 = 0.0;
    for out in [cse(&x, &w)?, sse(&x, &w)?, scse(&x, &w, Combine::Max)?] {
        err = err.max(out.max_abs_diff(&half));
    }
    Ok(err)
}

/// Structural gate properties. Returns the number of violations.
fn gate_case(r: &mut DetRng) -> Result<usize> {
    let c = [2, 4][r.random_range(0..2)];
    let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
    let x = random_map(r, c, h, w, true)?;
    let weights = ScseWeights::seeded(c, 2, 1.0, r)?;
    let mut bad = 0;
    let e = channel_gates(&x, &weights)?;
    let q = spatial_gates(&x, &weights)?;
    bad += e.iter().chain(&q).filter(|g| !(**g > 0.0 && **g < 1.0)).count();

    let (co, so) = (cse(&x, &weights)?, sse(&x, &weights)?);
    let m = scse(&x, &weights, Combine::Max)?;
    let hw = h * w;
    for i in 0..x.data().len() {
        let v = x.data()[i];
        let (ch, pos) = (i / hw, i % hw);
        if v != 0.0 {
            // per-channel and per-position scaling ratios
            if (co.data()[i] / v - e[ch]).abs() > RECAL_TOLERANCE || (so.data()[i] / v - q[pos]).abs() > RECAL_TOLERANCE
            {
                bad += 1;
            }
        }
        if co.data()[i].abs() > v.abs() || so.data()[i].abs() > v.abs() {
            bad += 1;
        }
        if m.data()[i] < co.data()[i] || m.data()[i] < so.data()[i] {
            bad += 1;
        }
    }
    let zero = FeatureMap::zeros(c, h, w)?;
    if scse(&zero, &weights, Combine::Add)?.data().iter().any(|v| *v != 0.0) {
        bad += 1;
    }
    Ok(bad)
}

/// Returns 1 when the output shapes or the objectness range break the
/// contract.
fn head_case(r: &mut DetRng, seed: u64) -> Result<usize> {
    let reduction = [1, 2][r.random_range(0..2)];
    let cfg = RpnHeadConfig {
        depth: r.random_range(1..=3),
        channels: reduction * r.random_range(1..=3),
        anchors_per_cell: r.random_range(1..=4),
        scse_after_each: r.random(),
        reduction,
        combine: if r.random() { Combine::Max } else { Combine::Add },
    };
    let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
    let x = random_map(r, cfg.channels, h, w, false)?;
    let weights = RpnHeadWeights::seeded(&cfg, 0.5, seed)?;
    let out = rpn_head_forward(&x, &cfg, &weights)?;
    let a = cfg.anchors_per_cell;
    let ok = out.objectness.shape() == (a, h, w)
        && out.deltas.shape() == (4 * a, h, w)
        // an f64 sigmoid saturates to exactly 0 or 1 for large inputs
        && out.objectness.data().iter().all(|v| (0.0..=1.0).contains(v));
    Ok(usize::from(!ok))
}

/// Convolution against the literal definition, the zero-weight scSE closed
/// form, gate structure, and the head's shape contract.
pub fn recal_suite(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut r = rng::stream(seed, 10);
    let conv_err = worst(trials, || conv_case(&mut r))?;
    let mut r = rng::stream(seed, 11);
    let zero_err = worst(trials, || zero_scse_case(&mut r))?;
    let mut r = rng::stream(seed, 12);
    let mut gate_bad = 0;
    for _ in 0..trials {
        gate_bad += gate_case(&mut r)?;
    }
    let mut r = rng::stream(seed, 13);
    let mut head_bad = 0;
    for i in 0..trials {
        head_bad += head_case(&mut r, seed.wrapping_add(i as u64))?;
    }
    Ok(CheckReport {
        suites: vec![
            SuiteResult::new("conv2d_vs_reference", trials, conv_err, RECAL_TOLERANCE),
            SuiteResult::new("zero_weight_scse", trials, zero_err, RECAL_TOLERANCE),
            SuiteResult::new("gate_invariants", trials, gate_bad as f64, 0.0),
            SuiteResult::new("rpn_head_shapes", trials, head_bad as f64, 0.0),
        ],
    })
}
