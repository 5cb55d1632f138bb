//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! the R, G and B planes of a 32×32 image, row-major.

use std::fs;
use std::path::Path;

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
pub const RECORD_BYTES: usize = 1 + 3 * PLANE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn files(self) -> Vec<String> {
        match self {
            Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            Split::Test => vec!["test_batch.bin".to_string()],
        }
    }
}

/// Decodes a whole batch. `name` prefixes each image's `source_id`.
pub fn decode_batch(bytes: &[u8], name: &str, path: &Path) -> Result<Vec<LabeledImage>> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        let offset = (bytes.len() / RECORD_BYTES * RECORD_BYTES) as u64;
        return Err(Error::format(
            path,
            Some(offset),
            format!(
                "file size {} is not a multiple of the {RECORD_BYTES}-byte record; truncated record",
                bytes.len()
            ),
        ));
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, record)| decode_record(record, i, name, path))
        .collect()
}

fn decode_record(record: &[u8], index: usize, name: &str, path: &Path) -> Result<LabeledImage> {
    let label = record[0] as usize;
    if label > 9 {
        return Err(Error::format(
            path,
            Some((index * RECORD_BYTES) as u64),
            format!("label byte {label} exceeds 9"),
        ));
    }
    let data = record[1..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(LabeledImage {
        pixels: Tensor::new(vec![3, SIDE, SIDE], data)?,
        label,
        source_id: format!("{name}:{index}"),
    })
}

pub fn read_batch_file(path: &Path) -> Result<Vec<LabeledImage>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("batch")
        .to_string();
    decode_batch(&bytes, &name, path)
}

/// Loads every batch file of `split` that exists under `dir`.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let mut images = Vec::new();
    let mut found = false;
    for file in split.files() {
        let path = dir.join(&file);
        if path.exists() {
            found = true;
            images.extend(read_batch_file(&path)?);
        }
    }
    if !found {
        return Err(Error::format(
            dir,
            None,
            format!(
                "no {split:?} batch files ({}) found",
                split.files().join(", ")
            ),
        ));
    }
    Ok(images)
}

/// Encodes 32×32 images back into the batch layout (pixels rounded to bytes).
pub fn encode_batch(images: &[LabeledImage]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * RECORD_BYTES);
    for img in images {
        if img.pixels.shape() != [3, SIDE, SIDE] {
            return Err(Error::dim(
                "encode_batch",
                "image",
                3 * PLANE,
                img.pixels.numel(),
            ));
        }
        if img.label > 9 {
            return Err(Error::Usage(format!(
                "label {} does not fit a CIFAR-10 record",
                img.label
            )));
        }
        out.push(img.label as u8);
        out.extend(
            img.pixels
                .data()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

pub fn write_batch_file(path: &Path, images: &[LabeledImage]) -> Result<()> {
    let bytes = encode_batch(images)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
