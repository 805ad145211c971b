//! FPN anchor grids and the log-space box-delta parameterization used by
//! RPN regression.

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, ImageSize};
use crate::{Error, Result};

pub const FPN_STRIDES: [u32; 5] = [4, 8, 16, 32, 64];
pub const DEFAULT_ASPECT_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidLevel {
    pub name: String,
    pub stride: u32,
    pub sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub levels: Vec<PyramidLevel>,
    /// Width-to-height ratios.
    pub aspect_ratios: Vec<f64>,
}

/// Named anchor-size presets over P2-P6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorVariant {
    Default,
    A1,
    A2,
}

impl AnchorVariant {
    pub fn sizes(self) -> [f64; 5] {
        match self {
            AnchorVariant::Default => [32.0, 64.0, 128.0, 256.0, 512.0],
            AnchorVariant::A1 => [16.0, 64.0, 128.0, 256.0, 512.0],
            AnchorVariant::A2 => [8.0, 64.0, 128.0, 256.0, 512.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AnchorVariant::Default => "default",
            AnchorVariant::A1 => "a1",
            AnchorVariant::A2 => "a2",
        }
    }
}

impl std::str::FromStr for AnchorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(AnchorVariant::Default),
            "a1" => Ok(AnchorVariant::A1),
            "a2" => Ok(AnchorVariant::A2),
            other => Err(Error::Config(format!("unknown anchor variant `{other}`"))),
        }
    }
}

impl PyramidConfig {
    /// P2-P6 with one size per level and three aspect ratios.
    pub fn from_variant(variant: AnchorVariant) -> Self {
        let levels = FPN_STRIDES
            .iter()
            .zip(variant.sizes())
            .enumerate()
            .map(|(i, (&stride, size))| PyramidLevel { name: format!("P{}", i + 2), stride, sizes: vec![size] })
            .collect();
        PyramidConfig { levels, aspect_ratios: DEFAULT_ASPECT_RATIOS.to_vec() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("pyramid has no levels".into()));
        }
        if self.aspect_ratios.is_empty() {
            return Err(Error::Config("at least one aspect ratio is required".into()));
        }
        if let Some(r) = self.aspect_ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::Config(format!("aspect ratio {r} is not positive")));
        }
        for level in &self.levels {
            if level.stride == 0 {
                return Err(Error::Config(format!("level {} has stride 0", level.name)));
            }
            if level.sizes.is_empty() {
                return Err(Error::Config(format!("level {} has no sizes", level.name)));
            }
            if let Some(s) = level.sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                return Err(Error::Config(format!("level {} has non-positive size {s}", level.name)));
            }
        }
        if self.levels.windows(2).any(|w| w[0].stride >= w[1].stride) {
            return Err(Error::Config("strides must be strictly increasing".into()));
        }
        Ok(())
    }
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig::from_variant(AnchorVariant::Default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelAnchors {
    pub name: String,
    pub stride: u32,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Row-major over cells, then sizes, then aspect ratios.
    pub anchors: Vec<BBox>,
}

/// Number of grid cells along an axis of `len` pixels.
pub fn grid_cells(len: u32, stride: u32) -> usize {
    len.div_ceil(stride) as usize
}

/// Anchor for one cell: centered at `((col + 0.5) * stride, (row + 0.5) *
/// stride)`, sized `size * sqrt(ratio)` by `size / sqrt(ratio)`.
pub fn cell_anchor(row: usize, col: usize, stride: u32, size: f64, ratio: f64) -> BBox {
    let stride = stride as f64;
    let cx = (col as f64 + 0.5) * stride;
    let cy = (row as f64 + 0.5) * stride;
    let sr = ratio.sqrt();
    let (hw, hh) = (0.5 * size * sr, 0.5 * size / sr);
    BBox { x1: cx - hw, y1: cy - hh, x2: cx + hw, y2: cy + hh }
}

fn level_anchors(level: &PyramidLevel, ratios: &[f64], img: ImageSize) -> LevelAnchors {
    let gh = grid_cells(img.height, level.stride);
    let gw = grid_cells(img.width, level.stride);
    let mut anchors = Vec::with_capacity(gh * gw * level.sizes.len() * ratios.len());
    for row in 0..gh {
        for col in 0..gw {
            for &size in &level.sizes {
                for &ratio in ratios {
                    anchors.push(cell_anchor(row, col, level.stride, size, ratio));
                }
            }
        }
    }
    LevelAnchors { name: level.name.clone(), stride: level.stride, grid_height: gh, grid_width: gw, anchors }
}

/// Unclipped anchors for every pyramid level.
pub fn generate_anchors(cfg: &PyramidConfig, img: ImageSize) -> Result<Vec<LevelAnchors>> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok(cfg.levels.par_iter().map(|l| level_anchors(l, &cfg.aspect_ratios, img)).collect())
    }
    #[cfg(not(feature = "parallel"))]
    Ok(cfg.levels.iter().map(|l| level_anchors(l, &cfg.aspect_ratios, img)).collect())
}

/// Center offsets normalized by anchor size plus log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

fn check_anchor(anchor: &BBox, what: &str) -> Result<()> {
    if !(anchor.width() > 0.0 && anchor.height() > 0.0) {
        return Err(Error::InvalidBox(format!("{what} {anchor:?} has zero area")));
    }
    Ok(())
}

pub fn encode_deltas(anchor: &BBox, target: &BBox) -> Result<Deltas> {
    check_anchor(anchor, "anchor")?;
    check_anchor(target, "target")?;
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok(Deltas {
        dx: (tcx - acx) / aw,
        dy: (tcy - acy) / ah,
        dw: (target.width() / aw).ln(),
        dh: (target.height() / ah).ln(),
    })
}

pub fn decode_deltas(anchor: &BBox, d: &Deltas) -> Result<BBox> {
    check_anchor(anchor, "anchor")?;
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + d.dx * aw;
    let cy = acy + d.dy * ah;
    let w = aw * d.dw.exp();
    let h = ah * d.dh.exp();
    Ok(BBox { x1: cx - 0.5 * w, y1: cy - 0.5 * h, x2: cx + 0.5 * w, y2: cy + 0.5 * h })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedProposal {
    pub index: usize,
    pub bbox: BBox,
    pub score: f64,
}

/// The `k` best proposals by descending score, ties to the lower index.
pub fn select_topk(proposals: &[(BBox, f64)], k: usize) -> Vec<RankedProposal> {
    let mut ranked: Vec<RankedProposal> =
        proposals.iter().enumerate().map(|(index, &(bbox, score))| RankedProposal { index, bbox, score }).collect();
    // stable, so equal scores keep index order
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    ranked.truncate(k);
    ranked
}
