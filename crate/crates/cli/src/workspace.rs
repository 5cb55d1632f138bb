//! Loading models, datasets and images named on the command line.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cnnlens_core::data::{self, cifar_label, LabeledImage, Split, CIFAR10_CLASSES};
use cnnlens_core::model::{load_weights, Model, ModelSpec};
use cnnlens_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MODEL_CARD: &str = "model.toml";

/// Spec plus class names, stored next to every weight file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCard {
    pub classes: Vec<String>,
    pub spec: ModelSpec,
}

impl ModelCard {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("card serializes")
    }
}

pub struct Loaded {
    pub model: Model,
    pub classes: Vec<String>,
}

pub fn weights_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.run
        .weights
        .as_deref()
        .ok_or_else(|| Error::Usage("--weights is required for this command".into()).into())
}

pub fn load_model(cfg: &RunConfig) -> Result<Loaded> {
    let weights = weights_path(cfg)?;
    let card_path = weights.with_file_name(MODEL_CARD);
    let text = std::fs::read_to_string(&card_path).map_err(|e| Error::Io {
        path: card_path.clone(),
        source: e,
    })?;
    let card: ModelCard = toml::from_str(&text).map_err(|e| Error::Format {
        path: card_path.clone(),
        offset: None,
        message: e.to_string(),
    })?;
    card.spec.validate()?;
    if card.classes.len() != card.spec.num_classes {
        return Err(Error::Format {
            path: card_path,
            offset: None,
            message: format!(
                "{} class names for a {}-class spec",
                card.classes.len(),
                card.spec.num_classes
            ),
        }
        .into());
    }
    let model = load_weights(&card.spec, weights)?;
    Ok(Loaded {
        model,
        classes: card.classes,
    })
}

/// Resolves `--class` (name or index) against the model's classes.
pub fn class_index(classes: &[String], arg: Option<&str>) -> Result<usize> {
    let arg = arg.ok_or_else(|| Error::Usage("--class is required for this command".into()))?;
    if let Some(i) = classes.iter().position(|c| c == arg) {
        return Ok(i);
    }
    match arg.parse::<usize>() {
        Ok(i) if i < classes.len() => Ok(i),
        _ => Err(Error::Usage(format!(
            "unknown class `{arg}` (model classes: {})",
            classes.join(", ")
        ))
        .into()),
    }
}

pub fn data_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.run.data.as_deref().ok_or_else(|| {
        Error::Usage("--data (or CIFAR10_DIR) is required for this command".into()).into()
    })
}

/// CIFAR label indices of `classes`, which must all be CIFAR-10 names.
pub fn cifar_labels(classes: &[String]) -> Result<Vec<usize>> {
    classes
        .iter()
        .map(|c| {
            cifar_label(c).ok_or_else(|| {
                anyhow!(Error::Usage(format!(
                    "`{c}` is not a CIFAR-10 class ({})",
                    CIFAR10_CLASSES.join(", ")
                )))
            })
        })
        .collect()
}

/// `split` restricted to `classes` and relabelled in their order.
pub fn load_split(cfg: &RunConfig, split: Split, classes: &[String]) -> Result<Vec<LabeledImage>> {
    let all = data::load_cifar10(data_dir(cfg)?, split)?;
    Ok(data::subset_ordered(&all, &cifar_labels(classes)?)?)
}

/// A PPM/PGM path, a test-split index, or a test-split source id.
pub fn resolve_image(cfg: &RunConfig, classes: &[String], arg: &str) -> Result<LabeledImage> {
    let path = PathBuf::from(arg);
    if path.is_file() {
        let pixels = data::read_pnm(&path)?;
        return Ok(LabeledImage {
            pixels,
            label: 0,
            source_id: arg.to_string(),
        });
    }
    let test = load_split(cfg, Split::Test, classes)?;
    let found = match arg.parse::<usize>() {
        Ok(i) => test.get(i),
        Err(_) => test.iter().find(|img| img.source_id == arg),
    };
    found.cloned().ok_or_else(|| {
        Error::Usage(format!(
            "image `{arg}` is neither a file nor a test image of the model's classes"
        ))
        .into()
    })
}

/// Every image in a batch file or in a directory of PNM files (sorted by name).
pub fn load_image_set(path: &Path) -> Result<Vec<LabeledImage>> {
    if path.is_file() {
        return Ok(data::read_batch_file(path)?);
    }
    if !path.is_dir() {
        bail!(Error::Usage(format!(
            "image set {} does not exist",
            path.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm")))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            Ok(LabeledImage {
                pixels: data::read_pnm(p)?,
                label: 0,
                source_id: p
                    .file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
            })
        })
        .collect()
}
