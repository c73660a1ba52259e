//! Binary checkpoint format.
//!
//! ```text
//! "DILC" | version: u32 | manifest length: u32 | manifest | arrays
//! manifest: count u32, then per entry: name length u32, UTF-8 name,
//!           rank u32, rank × dim u64
//! arrays:   row-major f32, in manifest order
//! ```
//! Every integer is little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::iem::{Aggregation, Design, ExtractorParams, ModelSnapshot};
use crate::models::{ModelConfig, ModelKind, NgcfWeights};
use crate::tensor::Tensor;
use crate::train::Model;

pub const MAGIC: &[u8; 4] = b"DILC";
pub const VERSION: u32 = 1;

fn corrupt(message: impl Into<String>) -> Error {
    Error::Config(format!("invalid checkpoint: {}", message.into()))
}

pub fn write_arrays(path: impl AsRef<Path>, arrays: &[(String, &Tensor)]) -> Result<()> {
    let mut manifest = Vec::new();
    manifest.extend((arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        manifest.extend((name.len() as u32).to_le_bytes());
        manifest.extend(name.as_bytes());
        manifest.extend((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            manifest.extend((d as u64).to_le_bytes());
        }
    }
    let mut buf = Vec::with_capacity(12 + manifest.len() + 4 * arrays.iter().map(|(_, t)| t.len()).sum::<usize>());
    buf.extend(MAGIC);
    buf.extend(VERSION.to_le_bytes());
    buf.extend((manifest.len() as u32).to_le_bytes());
    buf.extend(&manifest);
    for (_, t) in arrays {
        for &v in t.values() {
            buf.extend((v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("truncated file"))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_arrays(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let manifest_len = c.u32()? as usize;
    let manifest_end = c.at + manifest_len;
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| corrupt("name is not UTF-8"))?;
        let rank = c.u32()? as usize;
        if rank > 2 {
            return Err(corrupt(format!("`{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        entries.push((name.to_string(), shape));
    }
    if c.at != manifest_end {
        return Err(corrupt("manifest length mismatch"));
    }
    let mut out = Vec::with_capacity(entries.len());
    for (name, shape) in entries {
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| corrupt("array too large"))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push((name, Tensor::new(shape, values)?));
    }
    if c.at != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(out)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_arrays(path, &model.named())
}

fn take(arrays: &mut Vec<(String, Tensor)>, name: &str) -> Option<Tensor> {
    let k = arrays.iter().position(|(n, _)| n == name)?;
    Some(arrays.remove(k).1)
}

fn take_all(arrays: &mut Vec<(String, Tensor)>, prefix: &str) -> Vec<Tensor> {
    let mut out = Vec::new();
    while let Some(t) = take(arrays, &format!("{prefix}{}", out.len())) {
        out.push(t);
    }
    out
}

/// Rebuilds a model. Layer count, kind and slope come from `config`; the
/// extractor design is read from the stored arrays and the aggregation
/// (which leaves no trace for sum and mean) from `aggregation`.
pub fn load_model(path: impl AsRef<Path>, config: &ModelConfig, aggregation: Aggregation) -> Result<Model> {
    let mut arrays = read_arrays(path)?;
    let embeddings = take(&mut arrays, "embeddings").ok_or_else(|| corrupt("missing `embeddings`"))?;
    if embeddings.shape().len() != 2 || embeddings.cols() != config.dim {
        return Err(corrupt(format!(
            "embeddings have shape {:?}, config dim is {}",
            embeddings.shape(),
            config.dim
        )));
    }
    let ngcf = if config.kind == ModelKind::Ngcf {
        let w = NgcfWeights {
            w1: take_all(&mut arrays, "ngcf.w1."),
            w2: take_all(&mut arrays, "ngcf.w2."),
            b1: take_all(&mut arrays, "ngcf.b1."),
            b2: take_all(&mut arrays, "ngcf.b2."),
        };
        if [w.w1.len(), w.w2.len(), w.b1.len(), w.b2.len()] != [config.layers; 4] {
            return Err(corrupt("NGCF weights do not match the configured layer count"));
        }
        Some(w)
    } else {
        None
    };
    let extractor = match take(&mut arrays, "iem.extract") {
        None => None,
        Some(extract) => {
            let pos = take_all(&mut arrays, "iem.pos.");
            let weights = take_all(&mut arrays, "iem.w.");
            let projection = take(&mut arrays, "iem.projection");
            let design = match (pos.is_empty(), weights.is_empty()) {
                (false, true) => Design::Gated,
                (true, false) => Design::Linear,
                _ => return Err(corrupt("extractor needs exactly one of positional vectors or layer matrices")),
            };
            let aggregation = if projection.is_some() { Aggregation::Concat } else { aggregation };
            if aggregation == Aggregation::Concat && projection.is_none() {
                return Err(corrupt("concat aggregation without a projection"));
            }
            Some(ExtractorParams {
                design,
                aggregation,
                extract,
                pos,
                weights,
                projection,
            })
        }
    };
    if let Some((name, _)) = arrays.first() {
        return Err(corrupt(format!("unexpected array `{name}`")));
    }
    Ok(Model {
        config: *config,
        embeddings,
        ngcf,
        extractor,
    })
}

pub fn save_snapshot(path: impl AsRef<Path>, snapshot: &ModelSnapshot) -> Result<()> {
    let meta = Tensor::vector(vec![
        snapshot.user_count as f64,
        snapshot.item_count as f64,
        snapshot.known_users as f64,
        snapshot.known_items as f64,
        snapshot.period.map_or(0.0, |p| p as f64 + 1.0),
    ]);
    let mut arrays: Vec<(String, &Tensor)> = vec![("meta".into(), &meta)];
    arrays.extend(snapshot.layers().iter().enumerate().map(|(l, t)| (format!("layer.{l}"), t)));
    arrays.push(("final".into(), snapshot.final_rep()));
    write_arrays(path, &arrays)
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<ModelSnapshot> {
    let mut arrays = read_arrays(path)?;
    let meta = take(&mut arrays, "meta").ok_or_else(|| corrupt("missing `meta`"))?;
    let m: Vec<usize> = meta.values().iter().map(|&v| v as usize).collect();
    if m.len() != 5 {
        return Err(corrupt("malformed `meta`"));
    }
    let layers = take_all(&mut arrays, "layer.");
    let final_rep = take(&mut arrays, "final").ok_or_else(|| corrupt("missing `final`"))?;
    let period = m[4].checked_sub(1);
    Ok(ModelSnapshot::new(period, (m[0], m[1]), (m[2], m[3]), layers, final_rep)?)
}
