//! `MCNN` weight files.
//!
//! Layout, all integers little-endian: magic `MCNN`, u32 version, u32 tensor
//! count, then per tensor a u16 name length, the UTF-8 name, a u8 rank, rank
//! u32 dims and the values as f32. Batchnorm running statistics are stored as
//! `<bn>.running_mean` / `<bn>.running_var`, the input normalization as
//! `input.mean` / `input.std`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Model, ModelSpec};
use crate::autodiff::RunningStats;
use crate::data::DatasetStats;
use crate::error::{Error, Result, WeightFileError};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"MCNN";
pub const WEIGHTS_VERSION: u32 = 1;

fn named_tensors(model: &Model) -> BTreeMap<String, (Vec<usize>, Vec<f64>)> {
    let mut out = BTreeMap::new();
    for (name, t) in &model.params {
        out.insert(name.clone(), (t.shape().to_vec(), t.data().to_vec()));
    }
    for (name, rs) in &model.running {
        out.insert(
            format!("{name}.running_mean"),
            (vec![rs.mean.len()], rs.mean.clone()),
        );
        out.insert(
            format!("{name}.running_var"),
            (vec![rs.var.len()], rs.var.clone()),
        );
    }
    let s = &model.input_stats;
    out.insert("input.mean".into(), (vec![3], s.channel_mean.to_vec()));
    out.insert("input.std".into(), (vec![3], s.channel_std.to_vec()));
    out
}

pub fn encode_weights(model: &Model) -> Vec<u8> {
    let tensors = named_tensors(model);
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, (shape, data)) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], WeightFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(WeightFileError::Truncated {
                what: what.to_string(),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes a weight file against `spec`, checking every tensor's presence
/// and shape.
pub fn decode_weights(spec: &ModelSpec, bytes: &[u8]) -> Result<Model> {
    spec.validate()?;
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(WeightFileError::BadMagic {
            found: magic.to_vec(),
        }
        .into());
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(WeightFileError::Version {
            found: version,
            expected: WEIGHTS_VERSION,
        }
        .into());
    }
    let count = r.u32("tensor count")?;
    let mut found: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for i in 0..count {
        let header = format!("header of tensor #{i}");
        let len = u16::from_le_bytes(r.take(2, &header)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, &header)?)
            .map_err(|_| WeightFileError::BadName)?
            .to_string();
        let rank = r.take(1, &format!("rank of tensor `{name}`"))?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("dims of tensor `{name}`"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, &format!("values of tensor `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        found.insert(name, (shape, data));
    }

    let (shapes, norms) = Model::expected_shapes(spec);
    let mut expected: BTreeMap<String, Vec<usize>> = shapes.clone();
    for (bn, &c) in &norms {
        expected.insert(format!("{bn}.running_mean"), vec![c]);
        expected.insert(format!("{bn}.running_var"), vec![c]);
    }
    expected.insert("input.mean".into(), vec![3]);
    expected.insert("input.std".into(), vec![3]);
    if let Some(name) = found.keys().find(|n| !expected.contains_key(*n)) {
        return Err(WeightFileError::Unexpected { name: name.clone() }.into());
    }
    for (name, shape) in &expected {
        match found.get(name) {
            None => return Err(WeightFileError::Missing { name: name.clone() }.into()),
            Some((actual, _)) if actual != shape => {
                return Err(WeightFileError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    actual: actual.clone(),
                }
                .into())
            }
            Some(_) => {}
        }
    }

    let mut take = |name: &str| found.remove(name).expect("checked above");
    let mut params = BTreeMap::new();
    for name in shapes.keys() {
        let (shape, data) = take(name);
        params.insert(name.clone(), Tensor::new(shape, data)?);
    }
    let mut running = BTreeMap::new();
    for bn in norms.keys() {
        let mean = take(&format!("{bn}.running_mean")).1;
        let var = take(&format!("{bn}.running_var")).1;
        running.insert(bn.clone(), RunningStats { mean, var });
    }
    let mean = take("input.mean").1;
    let std = take("input.std").1;
    let stats = DatasetStats::new([mean[0], mean[1], mean[2]], [std[0], std[1], std[2]])?;
    Ok(Model::from_parts(spec.clone(), params, running, stats))
}

pub fn save_weights(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(spec: &ModelSpec, path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(spec, &bytes)
}
