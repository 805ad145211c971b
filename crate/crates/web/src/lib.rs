//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers or strings and returns a JSON string; errors come back as
//! strings.

use detkit::anchors::{cell_anchor, generate_anchors, grid_cells, AnchorVariant, PyramidConfig};
use detkit::evalkit::{evaluate, DetectionSet, EvalConfig};
use detkit::simkit::{generate, simulate_detections, DetectorNoise, Scene, SceneSpec};
use detkit::suppression::{suppress, ScoredBox, SuppressionConfig};
use detkit::ImageSize;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Scene size used by the demo canvas.
pub const DEMO_SIZE: u32 = 400;

#[derive(Debug, Serialize)]
struct BoxOut {
    bbox: [f64; 4],
    class_id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl BoxOut {
    fn det(d: &ScoredBox) -> Self {
        BoxOut { bbox: d.bbox.to_array(), class_id: d.class_id, score: Some(d.score) }
    }
}

#[derive(Debug, Serialize)]
struct SceneOut {
    width: u32,
    height: u32,
    objects: Vec<BoxOut>,
    detections: Vec<BoxOut>,
}

#[derive(Debug, Serialize)]
struct ModeOut {
    kept: Vec<BoxOut>,
    ap: Option<f64>,
    ap50: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CompareOut {
    hard: ModeOut,
    soft: ModeOut,
}

fn demo_scene(seed: u32, crowding: f64, sigma: f64) -> Result<(Scene, Vec<ScoredBox>), String> {
    let spec = SceneSpec {
        width: DEMO_SIZE,
        height: DEMO_SIZE,
        n_objects: 20,
        crowding,
        sqrt_area_min: 12.0,
        sqrt_area_max: 48.0,
        n_classes: 1,
        seed: seed as u64,
        ..Default::default()
    };
    let scene = generate(&spec).map_err(|e| e.to_string())?;
    let noise = DetectorNoise { sigma, fp_rate: 2.0, ..Default::default() };
    let dets = simulate_detections(&scene, &noise, seed as u64 ^ 0x5eed).map_err(|e| e.to_string())?;
    Ok((scene, dets))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// A seeded crowded scene and its raw detections.
#[wasm_bindgen]
pub fn crowded_scene(seed: u32, crowding: f64, sigma: f64) -> Result<String, String> {
    let (scene, dets) = demo_scene(seed, crowding, sigma)?;
    to_json(&SceneOut {
        width: scene.size.width,
        height: scene.size.height,
        objects: scene
            .objects
            .iter()
            .map(|g| BoxOut { bbox: g.bbox.to_array(), class_id: g.class_id, score: None })
            .collect(),
        detections: dets.iter().map(BoxOut::det).collect(),
    })
}

/// Hard and linear soft suppression of the same scene at threshold `nt`,
/// each with its kept detections and AP / AP50.
#[wasm_bindgen]
pub fn compare_suppression(seed: u32, crowding: f64, sigma: f64, nt: f64) -> Result<String, String> {
    let (scene, dets) = demo_scene(seed, crowding, sigma)?;
    let gts = scene.ground_truth(1);
    let run = |cfg: SuppressionConfig| -> Result<ModeOut, String> {
        cfg.validate().map_err(|e| e.to_string())?;
        let kept = suppress(&dets, &cfg);
        let report = evaluate(&DetectionSet::from([(1, kept.clone())]), &gts, &EvalConfig::default())
            .map_err(|e| e.to_string())?;
        Ok(ModeOut { kept: kept.iter().map(BoxOut::det).collect(), ap: report.overall.ap, ap50: report.overall.ap50 })
    };
    to_json(&CompareOut { hard: run(SuppressionConfig::hard(nt))?, soft: run(SuppressionConfig::soft(nt))? })
}

#[derive(Debug, Serialize)]
struct LevelOut {
    name: String,
    stride: u32,
    size: f64,
    grid_height: usize,
    grid_width: usize,
    count: usize,
    /// Anchors of the cell nearest the image center.
    center_cell: Vec<[f64; 4]>,
}

/// Per-level anchor counts for an image and the anchors of its center cell.
#[wasm_bindgen]
pub fn anchor_layout(width: u32, height: u32, variant: &str) -> Result<String, String> {
    let variant: AnchorVariant = variant.parse().map_err(|e: detkit::Error| e.to_string())?;
    let cfg = PyramidConfig::from_variant(variant);
    let img = ImageSize::new(width, height).map_err(|e| e.to_string())?;
    let levels = generate_anchors(&cfg, img).map_err(|e| e.to_string())?;
    let out: Vec<LevelOut> = levels
        .iter()
        .zip(&cfg.levels)
        .map(|(l, spec)| {
            let (row, col) = ((grid_cells(height, l.stride) - 1) / 2, (grid_cells(width, l.stride) - 1) / 2);
            LevelOut {
                name: l.name.clone(),
                stride: l.stride,
                size: spec.sizes[0],
                grid_height: l.grid_height,
                grid_width: l.grid_width,
                count: l.anchors.len(),
                center_cell: cfg
                    .aspect_ratios
                    .iter()
                    .map(|&r| cell_anchor(row, col, l.stride, spec.sizes[0], r).to_array())
                    .collect(),
            }
        })
        .collect();
    to_json(&out)
}
