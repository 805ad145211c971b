//! COCO-format annotation ingestion, fixed-size patch tiling, and the box
//! statistics used to characterize object scale in a dataset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evalkit::{DetectionSet, GroundTruth, GroundTruthSet};
use crate::geometry::{BBox, ImageSize};
use crate::suppression::ScoredBox;
use crate::{Error, Result};

// ---- on-disk schema ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undersized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub iscrowd: u8,
}

fn is_zero(v: &u8) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// One entry of a detection results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDetection {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

// ---- validated in-memory form ----

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub size: ImageSize,
    pub source_image_id: Option<u64>,
    pub origin: Option<[u32; 2]>,
    pub undersized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub area: f64,
    pub iscrowd: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
    /// Boxes that were clamped into their image while loading.
    pub clamped_boxes: usize,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dataset(&read_file(path)?).map_err(|e| match e {
        Error::Json { source, .. } => Error::json(path.display().to_string(), source),
        other => other,
    })
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let raw: CocoFile = serde_json::from_str(text).map_err(|e| Error::json("annotations", e))?;
    Dataset::from_coco(raw)
}

impl Dataset {
    /// Validates cross references and clamps boxes into their images.
    pub fn from_coco(raw: CocoFile) -> Result<Dataset> {
        let mut sizes = HashMap::new();
        let mut images = Vec::with_capacity(raw.images.len());
        for im in raw.images {
            let size =
                ImageSize::new(im.width, im.height).map_err(|e| Error::Input(format!("image {}: {e}", im.id)))?;
            if sizes.insert(im.id, size).is_some() {
                return Err(Error::Input(format!("image {}: duplicate id", im.id)));
            }
            images.push(ImageRecord {
                id: im.id,
                file_name: im.file_name,
                size,
                source_image_id: im.source_image_id,
                origin: im.origin,
                undersized: im.undersized,
            });
        }
        let mut cat_ids = HashSet::new();
        let mut categories = Vec::with_capacity(raw.categories.len());
        for c in raw.categories {
            if !cat_ids.insert(c.id) {
                return Err(Error::Input(format!("category {}: duplicate id", c.id)));
            }
            categories.push(Category { id: c.id, name: c.name });
        }

        let mut ann_ids = HashSet::new();
        let mut clamped_boxes = 0;
        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for a in raw.annotations {
            let bad = |reason: String| Error::Annotation { id: a.id, reason };
            if !ann_ids.insert(a.id) {
                return Err(bad("duplicate annotation id".into()));
            }
            let size =
                *sizes.get(&a.image_id).ok_or_else(|| bad(format!("references missing image_id {}", a.image_id)))?;
            if !cat_ids.contains(&a.category_id) {
                return Err(bad(format!("references missing category_id {}", a.category_id)));
            }
            let [x, y, w, h] = a.bbox;
            let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| bad(e.to_string()))?;
            let (bbox, moved) = bbox.clamp_to(size);
            clamped_boxes += moved as usize;
            let area = match a.area {
                Some(v) if v < 0.0 || !v.is_finite() => return Err(bad(format!("invalid area {v}"))),
                Some(v) => v,
                None => bbox.area(),
            };
            annotations.push(Annotation {
                id: a.id,
                image_id: a.image_id,
                class_id: a.category_id,
                bbox,
                area,
                iscrowd: a.iscrowd != 0,
            });
        }
        Ok(Dataset { images, annotations, categories, clamped_boxes })
    }

    pub fn to_coco(&self) -> CocoFile {
        CocoFile {
            images: self
                .images
                .iter()
                .map(|im| CocoImage {
                    id: im.id,
                    width: im.size.width,
                    height: im.size.height,
                    file_name: im.file_name.clone(),
                    source_image_id: im.source_image_id,
                    origin: im.origin,
                    undersized: im.undersized,
                })
                .collect(),
            annotations: self
                .annotations
                .iter()
                .map(|a| CocoAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.class_id,
                    bbox: a.bbox.to_xywh(),
                    area: Some(a.area),
                    iscrowd: a.iscrowd as u8,
                })
                .collect(),
            categories: self.categories.iter().map(|c| CocoCategory { id: c.id, name: c.name.clone() }).collect(),
        }
    }

    pub fn category_names(&self) -> BTreeMap<u32, String> {
        self.categories.iter().map(|c| (c.id, c.name.clone())).collect()
    }

    /// Ground truth for evaluation; crowd annotations become ignore regions.
    pub fn ground_truth(&self) -> Result<GroundTruthSet> {
        let mut gts = GroundTruthSet::new(self.images.iter().map(|i| i.id), self.categories.iter().map(|c| c.id));
        for a in &self.annotations {
            gts.add(
                a.image_id,
                GroundTruth { id: a.id, class_id: a.class_id, bbox: a.bbox, area: a.area, ignore: a.iscrowd },
            )?;
        }
        Ok(gts)
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    write_json(path, &ds.to_coco())
}

pub fn parse_detections(text: &str) -> Result<Vec<CocoDetection>> {
    let dets: Vec<CocoDetection> = serde_json::from_str(text).map_err(|e| Error::json("detections", e))?;
    for (i, d) in dets.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::Detection { index: i, reason: format!("score {} outside [0, 1]", d.score) });
        }
        let [x, y, w, h] = d.bbox;
        BBox::from_xywh(x, y, w, h).map_err(|e| Error::Detection { index: i, reason: e.to_string() })?;
    }
    Ok(dets)
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<CocoDetection>> {
    let path = path.as_ref();
    parse_detections(&read_file(path)?).map_err(|e| match e {
        Error::Json { source, .. } => Error::json(path.display().to_string(), source),
        other => other,
    })
}

/// Groups a flat results list by image; `index` is the position in the
/// list.
pub fn detections_by_image(dets: &[CocoDetection]) -> Result<DetectionSet> {
    let mut out = DetectionSet::new();
    for (i, d) in dets.iter().enumerate() {
        let [x, y, w, h] = d.bbox;
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| Error::Detection { index: i, reason: e.to_string() })?;
        out.entry(d.image_id).or_default().push(ScoredBox::new(bbox, d.score, d.category_id, i));
    }
    Ok(out)
}

/// Flattens per-image detections back to the results schema, image by
/// image in the order given.
pub fn flatten_detections(set: &DetectionSet) -> Vec<CocoDetection> {
    set.iter()
        .flat_map(|(&image_id, list)| {
            list.iter().map(move |d| CocoDetection {
                image_id,
                category_id: d.class_id,
                bbox: d.bbox.to_xywh(),
                score: d.score,
            })
        })
        .collect()
}

// ---- tiling ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileConfig {
    pub patch: u32,
    pub stride: u32,
    /// Minimum fraction of a box's area that must fall inside a patch.
    pub retention: f64,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig { patch: 800, stride: 800, retention: 0.5 }
    }
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.stride == 0 {
            return Err(Error::Config("patch and stride must be positive".into()));
        }
        if self.stride > self.patch {
            return Err(Error::Config(format!(
                "stride {} exceeds patch {} and would leave gaps",
                self.stride, self.patch
            )));
        }
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return Err(Error::Config(format!("retention {} outside (0, 1]", self.retention)));
        }
        Ok(())
    }
}

/// Patch origins along one axis. The last patch is pulled back so it ends
/// at the image edge; an axis shorter than the patch gets a single origin.
pub fn patch_origins(len: u32, patch: u32, stride: u32) -> Vec<u32> {
    if len <= patch {
        return vec![0];
    }
    let mut v: Vec<u32> = (0..).map(|i| i * stride).take_while(|&o| o + patch < len).collect();
    v.push(len - patch);
    v
}

fn patch_file_name(source: &str, x: u32, y: u32) -> String {
    match source.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => format!("{stem}_x{x}_y{y}.{ext}"),
        _ => format!("{source}_x{x}_y{y}"),
    }
}

/// Cuts every image into `patch x patch` windows and clips annotations
/// into them. Output images and annotations get fresh sequential ids,
/// ordered by source image id, then patch row, then column.
pub fn tile(ds: &Dataset, cfg: &TileConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut by_image: BTreeMap<u64, Vec<&Annotation>> = BTreeMap::new();
    for a in &ds.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }
    let mut sources: Vec<&ImageRecord> = ds.images.iter().collect();
    sources.sort_by_key(|im| im.id);

    let mut out = Dataset { categories: ds.categories.clone(), ..Default::default() };
    let mut next_ann = 1u64;
    for src in sources {
        let undersized = src.size.width < cfg.patch || src.size.height < cfg.patch;
        let pw = src.size.width.min(cfg.patch);
        let ph = src.size.height.min(cfg.patch);
        let anns = by_image.get(&src.id).map(Vec::as_slice).unwrap_or(&[]);
        for &oy in &patch_origins(src.size.height, cfg.patch, cfg.stride) {
            for &ox in &patch_origins(src.size.width, cfg.patch, cfg.stride) {
                let image_id = out.images.len() as u64 + 1;
                let window = BBox { x1: ox as f64, y1: oy as f64, x2: (ox + pw) as f64, y2: (oy + ph) as f64 };
                out.images.push(ImageRecord {
                    id: image_id,
                    file_name: patch_file_name(&src.file_name, ox, oy),
                    size: ImageSize { width: pw, height: ph },
                    source_image_id: Some(src.id),
                    origin: Some([ox, oy]),
                    undersized,
                });
                for a in anns {
                    let Some(clipped) = a.bbox.intersection(&window) else {
                        continue;
                    };
                    let full = a.bbox.area();
                    let keep = if full > 0.0 { clipped.area() / full >= cfg.retention } else { true };
                    if !keep {
                        continue;
                    }
                    let local = clipped.translate(-window.x1, -window.y1);
                    out.annotations.push(Annotation {
                        id: next_ann,
                        image_id,
                        class_id: a.class_id,
                        bbox: local,
                        area: local.area(),
                        iscrowd: a.iscrowd,
                    });
                    next_ann += 1;
                }
            }
        }
    }
    Ok(out)
}

// ---- statistics ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceStat {
    pub image_id: u64,
    pub class_id: u32,
    pub category: String,
    pub norm_w: f64,
    pub norm_h: f64,
    pub sqrt_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts[i]` covers `[i * bin_width, (i + 1) * bin_width)`.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub instances: Vec<InstanceStat>,
    pub sqrt_area_histogram: Histogram,
    pub per_category: BTreeMap<u32, Histogram>,
    /// Fraction of instances with normalized width and height both at most
    /// `small_dim_threshold`. `None` for an empty dataset.
    pub small_fraction: Option<f64>,
    pub small_dim_threshold: f64,
}

pub const DEFAULT_BIN_WIDTH: f64 = 10.0;
pub const SMALL_DIM_THRESHOLD: f64 = 0.2;

pub fn stats(ds: &Dataset, bin_width: f64) -> Result<StatsReport> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width {bin_width} must be positive")));
    }
    let sizes: HashMap<u64, ImageSize> = ds.images.iter().map(|i| (i.id, i.size)).collect();
    let names = ds.category_names();
    let mut instances = Vec::with_capacity(ds.annotations.len());
    for a in &ds.annotations {
        let size = sizes.get(&a.image_id).ok_or_else(|| Error::Annotation {
            id: a.id,
            reason: format!("references missing image_id {}", a.image_id),
        })?;
        let (w, h) = (a.bbox.width(), a.bbox.height());
        instances.push(InstanceStat {
            image_id: a.image_id,
            class_id: a.class_id,
            category: names.get(&a.class_id).cloned().unwrap_or_else(|| a.class_id.to_string()),
            norm_w: w / size.width as f64,
            norm_h: h / size.height as f64,
            sqrt_area: (w * h).sqrt(),
        });
    }

    let bin = |v: f64| (v / bin_width).floor() as usize;
    let n_bins = instances.iter().map(|s| bin(s.sqrt_area) + 1).max().unwrap_or(0);
    let empty = || Histogram { bin_width, counts: vec![0; n_bins] };
    let mut overall = empty();
    let mut per_category: BTreeMap<u32, Histogram> = ds.categories.iter().map(|c| (c.id, empty())).collect();
    let mut small = 0usize;
    for s in &instances {
        let i = bin(s.sqrt_area);
        overall.counts[i] += 1;
        per_category.entry(s.class_id).or_insert_with(empty).counts[i] += 1;
        small += (s.norm_w <= SMALL_DIM_THRESHOLD && s.norm_h <= SMALL_DIM_THRESHOLD) as usize;
    }
    let small_fraction = (!instances.is_empty()).then(|| small as f64 / instances.len() as f64);
    Ok(StatsReport {
        instances,
        sqrt_area_histogram: overall,
        per_category,
        small_fraction,
        small_dim_threshold: SMALL_DIM_THRESHOLD,
    })
}

/// Summary half of a stats report, without the per-instance rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSummary<'a> {
    pub instances: usize,
    pub small_fraction: Option<f64>,
    pub small_dim_threshold: f64,
    pub sqrt_area_histogram: &'a Histogram,
    pub per_category: &'a BTreeMap<u32, Histogram>,
}

impl StatsReport {
    pub fn summary(&self) -> StatsSummary<'_> {
        StatsSummary {
            instances: self.instances.len(),
            small_fraction: self.small_fraction,
            small_dim_threshold: self.small_dim_threshold,
            sqrt_area_histogram: &self.sqrt_area_histogram,
            per_category: &self.per_category,
        }
    }

    /// One row per instance, floats at 9 decimal places.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["image_id", "category", "norm_w", "norm_h", "sqrt_area"])?;
        for s in &self.instances {
            wtr.write_record([
                s.image_id.to_string(),
                s.category.clone(),
                format!("{:.9}", s.norm_w),
                format!("{:.9}", s.norm_h),
                format!("{:.9}", s.sqrt_area),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
