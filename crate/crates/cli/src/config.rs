//! Layered run configuration: defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cnnlens_core::actmax::{Jitter, RegularizerConfig};
use cnnlens_core::model::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::cli::Common;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub spec: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            data: None,
            weights: None,
            spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscentSection {
    pub lr: f64,
    pub epochs: usize,
    pub jitter: bool,
    pub clamp_to_data_range: bool,
}

impl Default for AscentSection {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 100,
            jitter: false,
            clamp_to_data_range: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    pub layer: String,
    pub k: usize,
    pub bins: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            layer: "layer4".into(),
            k: 9,
            bins: 20,
        }
    }
}

/// Effective configuration, echoed verbatim into every manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub train: TrainConfig,
    pub ascent: AscentSection,
    pub regularizer: RegularizerConfig,
    pub jitter: Jitter,
    pub analysis: AnalysisSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| cnnlens_core::Error::Config(format!("{}: {e}", path.display())))
            .map_err(Into::into)
    }

    /// Defaults, overlaid by `--config`, overlaid by explicit flags.
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = common.seed {
            cfg.run.seed = s;
        }
        cfg.train.seed = cfg.run.seed;
        if let Some(o) = &common.out {
            cfg.run.out = o.clone();
        }
        if let Some(d) = &common.data {
            cfg.run.data = Some(d.clone());
        }
        if cfg.run.data.is_none() {
            cfg.run.data = std::env::var_os("CIFAR10_DIR").map(PathBuf::from);
        }
        if let Some(w) = &common.weights {
            cfg.run.weights = Some(w.clone());
        }
        if let Some(s) = &common.spec {
            cfg.run.spec = Some(s.clone());
        }
        if let Some(l) = &common.layer {
            cfg.analysis.layer = l.clone();
        }
        if let Some(lr) = common.lr {
            cfg.ascent.lr = lr;
            cfg.train.lr = lr;
        }
        if let Some(e) = common.epochs {
            cfg.ascent.epochs = e;
            cfg.train.epochs = e;
        }
        if let Some(v) = common.lambda_alpha {
            cfg.regularizer.lambda_alpha = v;
        }
        if let Some(v) = common.alpha {
            cfg.regularizer.alpha = v;
        }
        if let Some(v) = common.lambda_tv {
            cfg.regularizer.lambda_tv = v;
        }
        if let Some(v) = common.beta {
            cfg.regularizer.beta = v;
        }
        if common.jitter {
            cfg.ascent.jitter = true;
        }
        if let Some(k) = common.k {
            cfg.analysis.k = k;
        }
        Ok(cfg)
    }
}
