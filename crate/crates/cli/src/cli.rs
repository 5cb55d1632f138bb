use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cnnlens",
    version,
    about = "Inspect what a small residual CNN has learned"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML config with [run], [train], [ascent], [regularizer], [jitter], [analysis] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Weight file; `model.toml` next to it supplies the model spec and class names.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Model spec TOML (train only; other commands read it from the weights' directory).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Directory of CIFAR-10 binary batches (default: `$CIFAR10_DIR`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub layer: Option<String>,
    /// Class by name or index.
    #[arg(long, global = true)]
    pub class: Option<String>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long = "lambda-alpha", global = true)]
    pub lambda_alpha: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long = "lambda-tv", global = true)]
    pub lambda_tv: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Enable blur/translate/rotate jitter of the ascent gradient.
    #[arg(long, global = true)]
    pub jitter: bool,
    /// Parent directory for run directories.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier on the train split (optionally a class subset).
    Train {
        /// Comma-separated CIFAR-10 class names; all ten by default.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
    },
    /// Gradient ascent on an objective from a start image.
    Maximize {
        /// Start image: PPM path, test-split index, or source id. Mid-gray if omitted.
        #[arg(long)]
        image: Option<String>,
        /// Objective address such as `channel:layer4:3`; defaults to the `--class` logit.
        #[arg(long)]
        target: Option<String>,
    },
    /// Grad-CAM heatmap of a class logit at a layer.
    Gradcam {
        #[arg(long)]
        image: String,
    },
    /// Ascend a class logit and map where the image changed.
    Diff {
        #[arg(long)]
        image: String,
    },
    /// Epochs of unregularized ascent needed to flip each image to `--class`.
    Robustness {
        /// Images to test (repeatable).
        #[arg(long)]
        image: Vec<String>,
        /// Also test the first `--count` test images of this class.
        #[arg(long)]
        source_class: Option<String>,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// The `--k` test images that most activate one filter.
    Topk {
        #[arg(long)]
        filter: usize,
    },
    /// Histogram of one filter's activation over the test split.
    Hist {
        #[arg(long)]
        filter: usize,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Class distribution of out-of-sample image sets.
    OosTable {
        /// `NAME=PATH` with PATH a batch file or a directory of PPM images (repeatable).
        #[arg(long)]
        set: Vec<String>,
        /// Add a set of this many Gaussian noise images.
        #[arg(long)]
        noise: Option<usize>,
    },
    /// Greedy category hierarchy.
    CategoryTree {
        #[command(flatten)]
        source: CategorySource,
    },
    /// Minimum spanning tree of the category distance graph.
    Mst {
        #[command(flatten)]
        source: CategorySource,
    },
    /// Filter-wise prediction tree of one category.
    FilterTree {
        /// Number of test images of `--class` to use.
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Descend a saved filter tree with one image.
    QueryPath {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        image: String,
    },
    /// Write a synthetic CIFAR-format dataset into the run directory.
    MakeFixture {
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 10)]
        test_per_class: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CategorySource {
    /// Distance-matrix CSV (`category,<names…>` header) instead of a model.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// Add a pseudo-category of this many Gaussian noise images.
    #[arg(long)]
    pub noise_category: Option<usize>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Maximize { .. } => "maximize",
            Command::Gradcam { .. } => "gradcam",
            Command::Diff { .. } => "diff",
            Command::Robustness { .. } => "robustness",
            Command::Topk { .. } => "topk",
            Command::Hist { .. } => "hist",
            Command::OosTable { .. } => "oos-table",
            Command::CategoryTree { .. } => "category-tree",
            Command::Mst { .. } => "mst",
            Command::FilterTree { .. } => "filter-tree",
            Command::QueryPath { .. } => "query-path",
            Command::MakeFixture { .. } => "make-fixture",
        }
    }
}
