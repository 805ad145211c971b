//! Naive dense tensor ops: enough to run concurrent spatial and channel
//! squeeze-and-excitation (scSE) and a deep RPN head forward pass in plain
//! `f64` arithmetic.
//!
//! Sums are accumulated in a fixed loop order (output channel, row, column,
//! input channel, kernel row, kernel column) so results are bit-identical
//! across runs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Channels x height x width, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::from_vec(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty feature map {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!("{} values for a {channels}x{height}x{width} map", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature map has a non-finite entry".into()));
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_vec(channels, height, width, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    fn zip_with(&self, other: &FeatureMap, f: impl Fn(f64, f64) -> f64) -> FeatureMap {
        debug_assert_eq!(self.shape(), other.shape());
        FeatureMap { data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(), ..*self }
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Spatial slice of one channel.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding that keeps H x W.
    #[default]
    Same,
    Valid,
}

/// `c_out x c_in x k x k` kernel plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn new(c_out: usize, c_in: usize, k: usize, kernel: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let w = ConvWeights { c_out, c_in, k, kernel, bias };
        w.validate()?;
        Ok(w)
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        ConvWeights { c_out, c_in, k, kernel: vec![0.0; c_out * c_in * k * k], bias: vec![0.0; c_out] }
    }

    /// Kernel that copies input channel `o` to output channel `o` through
    /// the center tap.
    pub fn identity(channels: usize, k: usize) -> Self {
        let mut w = Self::zeros(channels, channels, k);
        let mid = k / 2;
        for o in 0..channels {
            let i = w.index(o, o, mid, mid);
            w.kernel[i] = 1.0;
        }
        w
    }

    pub fn seeded(c_out: usize, c_in: usize, k: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        ConvWeights {
            c_out,
            c_in,
            k,
            kernel: (0..c_out * c_in * k * k).map(|_| normal.sample(rng)).collect(),
            bias: (0..c_out).map(|_| normal.sample(rng)).collect(),
        }
    }

    #[inline]
    pub fn index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.c_in + i) * self.k + ky) * self.k + kx
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(Error::Shape(format!("kernel size {} must be odd", self.k)));
        }
        if self.kernel.len() != self.c_out * self.c_in * self.k * self.k {
            return Err(Error::Shape(format!(
                "{} kernel values for {}x{}x{}x{}",
                self.kernel.len(),
                self.c_out,
                self.c_in,
                self.k,
                self.k
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::Shape(format!("{} biases for {} outputs", self.bias.len(), self.c_out)));
        }
        Ok(())
    }
}

/// Cross-correlation (no kernel flip), as deep-learning frameworks define
/// convolution.
pub fn conv2d(x: &FeatureMap, w: &ConvWeights, padding: Padding) -> Result<FeatureMap> {
    w.validate()?;
    if w.c_in != x.channels {
        return Err(Error::Shape(format!("kernel expects {} channels, input has {}", w.c_in, x.channels)));
    }
    let (pad, oh, ow) = match padding {
        Padding::Same => (w.k / 2, x.height, x.width),
        Padding::Valid => {
            if x.height < w.k || x.width < w.k {
                return Err(Error::Shape(format!(
                    "{}x{} input smaller than {}x{} kernel",
                    x.height, x.width, w.k, w.k
                )));
            }
            (0, x.height - w.k + 1, x.width - w.k + 1)
        }
    };
    let mut out = FeatureMap::zeros(w.c_out, oh, ow)?;
    for o in 0..w.c_out {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = w.bias[o];
                for i in 0..w.c_in {
                    for ky in 0..w.k {
                        let sy = (y + ky) as isize - pad as isize;
                        if sy < 0 || sy >= x.height as isize {
                            continue;
                        }
                        let row = &x.data[(i * x.height + sy as usize) * x.width..];
                        let krow = w.index(o, i, ky, 0);
                        for kx in 0..w.k {
                            let sx = (xx + kx) as isize - pad as isize;
                            if sx < 0 || sx >= x.width as isize {
                                continue;
                            }
                            acc += w.kernel[krow + kx] * row[sx as usize];
                        }
                    }
                }
                out.set(o, y, xx, acc);
            }
        }
    }
    Ok(out)
}

/// Literal quadruple-loop convolution over an explicitly zero-padded copy
/// of the input. Slow on purpose; serves as the oracle for [`conv2d`].
pub fn reference_conv2d(x: &FeatureMap, w: &ConvWeights, padding: Padding) -> Result<FeatureMap> {
    w.validate()?;
    if w.c_in != x.channels {
        return Err(Error::Shape("channel mismatch".into()));
    }
    let pad = match padding {
        Padding::Same => w.k / 2,
        Padding::Valid => 0,
    };
    let ph = x.height + 2 * pad;
    let pw = x.width + 2 * pad;
    let mut padded = vec![vec![vec![0.0; pw]; ph]; x.channels];
    for (c, plane) in padded.iter_mut().enumerate() {
        for y in 0..x.height {
            for xx in 0..x.width {
                plane[y + pad][xx + pad] = x.get(c, y, xx);
            }
        }
    }
    if ph < w.k || pw < w.k {
        return Err(Error::Shape("input smaller than kernel".into()));
    }
    let oh = ph - w.k + 1;
    let ow = pw - w.k + 1;
    FeatureMap::from_fn(w.c_out, oh, ow, |o, y, xx| {
        let mut acc = w.bias[o];
        for (i, plane) in padded.iter().enumerate() {
            for ky in 0..w.k {
                for kx in 0..w.k {
                    acc += w.kernel[w.index(o, i, ky, kx)] * plane[y + ky][xx + kx];
                }
            }
        }
        acc
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    Max,
    Add,
}

pub const DEFAULT_REDUCTION: usize = 16;

/// Parameters of one scSE block over `C` channels with squeeze ratio `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScseWeights {
    pub channels: usize,
    pub reduction: usize,
    /// `C/r x C`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `C x C/r`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// 1x1 conv to a single spatial gate channel.
    pub spatial_w: Vec<f64>,
    pub spatial_b: f64,
}

impl ScseWeights {
    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        check_reduction(channels, reduction)?;
        let hidden = channels / reduction;
        Ok(ScseWeights {
            channels,
            reduction,
            w1: vec![0.0; hidden * channels],
            b1: vec![0.0; hidden],
            w2: vec![0.0; channels * hidden],
            b2: vec![0.0; channels],
            spatial_w: vec![0.0; channels],
            spatial_b: 0.0,
        })
    }

    pub fn seeded(channels: usize, reduction: usize, std: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut w = Self::zeros(channels, reduction)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        for v in w.w1.iter_mut().chain(&mut w.b1).chain(&mut w.w2).chain(&mut w.b2).chain(&mut w.spatial_w) {
            *v = normal.sample(rng);
        }
        w.spatial_b = normal.sample(rng);
        Ok(w)
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn validate(&self) -> Result<()> {
        check_reduction(self.channels, self.reduction)?;
        let (c, h) = (self.channels, self.hidden());
        let lens = [
            (self.w1.len(), h * c, "w1"),
            (self.b1.len(), h, "b1"),
            (self.w2.len(), c * h, "w2"),
            (self.b2.len(), c, "b2"),
            (self.spatial_w.len(), c, "spatial_w"),
        ];
        for (got, want, name) in lens {
            if got != want {
                return Err(Error::Shape(format!("{name} has {got} values, expected {want}")));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        self.validate()?;
        if x.channels != self.channels {
            return Err(Error::Shape(format!(
                "scSE block built for {} channels, input has {}",
                self.channels, x.channels
            )));
        }
        Ok(())
    }
}

fn check_reduction(channels: usize, reduction: usize) -> Result<()> {
    if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
        return Err(Error::Shape(format!("reduction {reduction} does not divide {channels} channels")));
    }
    Ok(())
}

/// Per-channel gates `sigmoid(W2 relu(W1 z + b1) + b2)` from the global
/// average pool `z`.
pub fn channel_gates(x: &FeatureMap, w: &ScseWeights) -> Result<Vec<f64>> {
    w.check_input(x)?;
    let n = (x.height * x.width) as f64;
    let z: Vec<f64> = (0..x.channels).map(|c| x.channel(c).iter().sum::<f64>() / n).collect();
    let hidden = w.hidden();
    let h: Vec<f64> = (0..hidden)
        .map(|j| relu(w.b1[j] + (0..x.channels).map(|c| w.w1[j * x.channels + c] * z[c]).sum::<f64>()))
        .collect();
    Ok((0..x.channels)
        .map(|c| sigmoid(w.b2[c] + (0..hidden).map(|j| w.w2[c * hidden + j] * h[j]).sum::<f64>()))
        .collect())
}

/// Per-position gates `sigmoid(1x1 conv(x))`, row-major over H x W.
pub fn spatial_gates(x: &FeatureMap, w: &ScseWeights) -> Result<Vec<f64>> {
    w.check_input(x)?;
    let mut q = Vec::with_capacity(x.height * x.width);
    for y in 0..x.height {
        for xx in 0..x.width {
            let s: f64 = (0..x.channels).map(|c| w.spatial_w[c] * x.get(c, y, xx)).sum();
            q.push(sigmoid(s + w.spatial_b));
        }
    }
    Ok(q)
}

/// Channel squeeze and excitation.
pub fn cse(x: &FeatureMap, w: &ScseWeights) -> Result<FeatureMap> {
    let e = channel_gates(x, w)?;
    let hw = x.height * x.width;
    Ok(FeatureMap { data: x.data.iter().enumerate().map(|(i, v)| v * e[i / hw]).collect(), ..*x })
}

/// Spatial squeeze and excitation.
pub fn sse(x: &FeatureMap, w: &ScseWeights) -> Result<FeatureMap> {
    let q = spatial_gates(x, w)?;
    let hw = x.height * x.width;
    Ok(FeatureMap { data: x.data.iter().enumerate().map(|(i, v)| v * q[i % hw]).collect(), ..*x })
}

pub fn scse(x: &FeatureMap, w: &ScseWeights, combine: Combine) -> Result<FeatureMap> {
    let c = cse(x, w)?;
    let s = sse(x, w)?;
    Ok(match combine {
        Combine::Max => c.zip_with(&s, f64::max),
        Combine::Add => c.zip_with(&s, |a, b| a + b),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RpnHeadConfig {
    /// Number of stacked 3x3 conv + relu layers.
    pub depth: usize,
    pub channels: usize,
    pub anchors_per_cell: usize,
    pub scse_after_each: bool,
    pub reduction: usize,
    pub combine: Combine,
}

impl Default for RpnHeadConfig {
    fn default() -> Self {
        RpnHeadConfig {
            depth: 2,
            channels: 256,
            anchors_per_cell: 3,
            scse_after_each: true,
            reduction: DEFAULT_REDUCTION,
            combine: Combine::Max,
        }
    }
}

impl RpnHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.channels == 0 || self.anchors_per_cell == 0 {
            return Err(Error::Config("depth, channels and anchors per cell must be positive".into()));
        }
        if self.scse_after_each {
            check_reduction(self.channels, self.reduction)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpnHeadWeights {
    pub convs: Vec<ConvWeights>,
    /// One block per conv when `scse_after_each`, otherwise empty.
    pub scse: Vec<ScseWeights>,
    pub objectness: ConvWeights,
    pub deltas: ConvWeights,
}

impl RpnHeadWeights {
    pub fn zeros(cfg: &RpnHeadConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let scse = if cfg.scse_after_each {
            (0..cfg.depth).map(|_| ScseWeights::zeros(c, cfg.reduction)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(RpnHeadWeights {
            convs: (0..cfg.depth).map(|_| ConvWeights::zeros(c, c, 3)).collect(),
            scse,
            objectness: ConvWeights::zeros(cfg.anchors_per_cell, c, 1),
            deltas: ConvWeights::zeros(4 * cfg.anchors_per_cell, c, 1),
        })
    }

    /// Gaussian initialization with standard deviation `std`.
    pub fn seeded(cfg: &RpnHeadConfig, std: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, 0);
        let c = cfg.channels;
        let mut convs = Vec::with_capacity(cfg.depth);
        let mut scse = Vec::new();
        for _ in 0..cfg.depth {
            convs.push(ConvWeights::seeded(c, c, 3, std, &mut r));
            if cfg.scse_after_each {
                scse.push(ScseWeights::seeded(c, cfg.reduction, std, &mut r)?);
            }
        }
        Ok(RpnHeadWeights {
            convs,
            scse,
            objectness: ConvWeights::seeded(cfg.anchors_per_cell, c, 1, std, &mut r),
            deltas: ConvWeights::seeded(4 * cfg.anchors_per_cell, c, 1, std, &mut r),
        })
    }

    fn check(&self, cfg: &RpnHeadConfig) -> Result<()> {
        cfg.validate()?;
        let c = cfg.channels;
        if self.convs.len() != cfg.depth {
            return Err(Error::Shape(format!("{} conv layers for depth {}", self.convs.len(), cfg.depth)));
        }
        if let Some(w) = self.convs.iter().find(|w| w.c_in != c || w.c_out != c || w.k != 3) {
            return Err(Error::Shape(format!("trunk conv is {}x{}x{}, expected {c}x{c}x3", w.c_out, w.c_in, w.k)));
        }
        let want_scse = if cfg.scse_after_each { cfg.depth } else { 0 };
        if self.scse.len() != want_scse {
            return Err(Error::Shape(format!("{} scSE blocks, expected {want_scse}", self.scse.len())));
        }
        let a = cfg.anchors_per_cell;
        for (w, outs, name) in [(&self.objectness, a, "objectness"), (&self.deltas, 4 * a, "deltas")] {
            if w.c_out != outs || w.c_in != c || w.k != 1 {
                return Err(Error::Shape(format!(
                    "{name} conv is {}x{}x{}, expected {outs}x{c}x1",
                    w.c_out, w.c_in, w.k
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpnOutput {
    /// `A x H x W`, each value in (0, 1).
    pub objectness: FeatureMap,
    /// `4A x H x W`.
    pub deltas: FeatureMap,
}

/// Trunk of `depth` (3x3 conv, relu[, scSE]) layers, then sibling 1x1 convs
/// for objectness (through a sigmoid) and box deltas.
pub fn rpn_head_forward(x: &FeatureMap, cfg: &RpnHeadConfig, w: &RpnHeadWeights) -> Result<RpnOutput> {
    w.check(cfg)?;
    if x.channels != cfg.channels {
        return Err(Error::Shape(format!("head expects {} channels, input has {}", cfg.channels, x.channels)));
    }
    let mut h = x.clone();
    for (layer, conv) in w.convs.iter().enumerate() {
        h = conv2d(&h, conv, Padding::Same)?.map(relu);
        if cfg.scse_after_each {
            h = scse(&h, &w.scse[layer], cfg.combine)?;
        }
    }
    Ok(RpnOutput {
        objectness: conv2d(&h, &w.objectness, Padding::Same)?.map(sigmoid),
        deltas: conv2d(&h, &w.deltas, Padding::Same)?,
    })
}
