//! Tensor file format.
//!
//! ```text
//! u64 LE   header length N
//! N bytes  UTF-8 JSON: {"tensors": [{"name": .., "shape": [..]}, ..]}
//! payload  each tensor's values as f64 LE, in header order
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::recal::{ConvWeights, RpnHeadConfig, RpnHeadWeights, ScseWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("tensor {name}: shape {shape:?} holds {n} values, got {}", data.len())));
        }
        Ok(NamedTensor { name, shape, data })
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<HeaderEntry>,
}

const MAX_HEADER: u64 = 1 << 26;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor]) -> std::io::Result<()> {
    let header = Header {
        tensors: tensors.iter().map(|t| HeaderEntry { name: t.name.clone(), shape: t.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in tensors {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let io = |e| Error::io("<tensor stream>", e);
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::Input(format!("tensor header of {len} bytes is implausibly large")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::json("tensor header", e))?;
    let mut out = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push(NamedTensor { name: entry.name, shape: entry.shape, data });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Input(format!("{} trailing bytes after tensor payload", rest.len())));
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensors(std::io::BufWriter::new(f), tensors).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensors(std::io::BufReader::new(f))
}

fn conv_tensors(prefix: &str, w: &ConvWeights) -> [NamedTensor; 2] {
    [
        NamedTensor {
            name: format!("{prefix}.weight"),
            shape: vec![w.c_out, w.c_in, w.k, w.k],
            data: w.kernel.clone(),
        },
        NamedTensor { name: format!("{prefix}.bias"), shape: vec![w.c_out], data: w.bias.clone() },
    ]
}

impl RpnHeadWeights {
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.extend(conv_tensors(&format!("conv{i}"), c));
        }
        for (i, s) in self.scse.iter().enumerate() {
            let (c, h) = (s.channels, s.hidden());
            let p = format!("scse{i}");
            out.push(NamedTensor { name: format!("{p}.w1"), shape: vec![h, c], data: s.w1.clone() });
            out.push(NamedTensor { name: format!("{p}.b1"), shape: vec![h], data: s.b1.clone() });
            out.push(NamedTensor { name: format!("{p}.w2"), shape: vec![c, h], data: s.w2.clone() });
            out.push(NamedTensor { name: format!("{p}.b2"), shape: vec![c], data: s.b2.clone() });
            out.push(NamedTensor { name: format!("{p}.spatial_w"), shape: vec![c], data: s.spatial_w.clone() });
            out.push(NamedTensor { name: format!("{p}.spatial_b"), shape: vec![1], data: vec![s.spatial_b] });
        }
        out.extend(conv_tensors("objectness", &self.objectness));
        out.extend(conv_tensors("deltas", &self.deltas));
        out
    }

    /// Rebuilds head weights from named tensors and checks every shape
    /// against `cfg`.
    pub fn from_tensors(cfg: &RpnHeadConfig, tensors: &[NamedTensor]) -> Result<Self> {
        let by_name: BTreeMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = by_name.get(name).ok_or_else(|| Error::Shape(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Shape(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            Ok(t.data.clone())
        };
        let conv = |p: &str, o: usize, i: usize, k: usize| -> Result<ConvWeights> {
            ConvWeights::new(o, i, k, take(&format!("{p}.weight"), &[o, i, k, k])?, take(&format!("{p}.bias"), &[o])?)
        };
        cfg.validate()?;
        let c = cfg.channels;
        let a = cfg.anchors_per_cell;
        let convs = (0..cfg.depth).map(|i| conv(&format!("conv{i}"), c, c, 3)).collect::<Result<_>>()?;
        let mut scse = Vec::new();
        if cfg.scse_after_each {
            let h = c / cfg.reduction;
            for i in 0..cfg.depth {
                let p = format!("scse{i}");
                scse.push(ScseWeights {
                    channels: c,
                    reduction: cfg.reduction,
                    w1: take(&format!("{p}.w1"), &[h, c])?,
                    b1: take(&format!("{p}.b1"), &[h])?,
                    w2: take(&format!("{p}.w2"), &[c, h])?,
                    b2: take(&format!("{p}.b2"), &[c])?,
                    spatial_w: take(&format!("{p}.spatial_w"), &[c])?,
                    spatial_b: take(&format!("{p}.spatial_b"), &[1])?[0],
                });
            }
        }
        Ok(RpnHeadWeights {
            convs,
            scse,
            objectness: conv("objectness", a, c, 1)?,
            deltas: conv("deltas", 4 * a, c, 1)?,
        })
    }
}
