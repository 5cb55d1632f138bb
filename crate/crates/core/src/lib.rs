//! Interpretability toolkit for small residual CNNs: activation maximization,
//! gradient attribution, and hierarchical clustering of categories and filters.

pub mod actmax;
pub mod attribution;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod filter_tree;
pub mod gradcheck;
pub mod hier;
pub mod model;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use data::{DatasetStats, LabeledImage};
pub use error::{Error, Result, WeightFileError};
pub use model::{LayerAddress, Model, ModelSpec};
pub use tensor::Tensor;
