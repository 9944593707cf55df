//! On-disk formats: MNIST IDX files and model directories.

pub mod mnist;
pub mod model;

pub use mnist::{load_mnist, MnistPaths, MnistSet};
pub use model::{load_model, save_model, ModelManifest};
