//! Shared fixtures: the MNIST files and a trained reference MLP cached on disk
//! between test binaries.

#![allow(dead_code)]

pub mod replay;

use std::path::PathBuf;
use std::sync::OnceLock;

use xbar_guard::io::mnist::{load_mnist, MnistPaths, MnistSet};
use xbar_guard::io::model::{load_model, save_model};
use xbar_guard::nn::layer::{LayerSpec, ModelGraph};
use xbar_guard::nn::tensor::Tensor;
use xbar_guard::nn::train::{train_reference_mlp, TrainOptions};

pub fn mnist_dir() -> PathBuf {
    std::env::var_os("XBAR_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn paths() -> MnistPaths {
    let dir = mnist_dir();
    let paths = MnistPaths::in_dir(&dir);
    assert!(
        paths.test_images.exists(),
        "MNIST not found in {}; run scripts/fetch-mnist.sh or set XBAR_MNIST_DIR",
        dir.display()
    );
    paths
}

pub fn test_set() -> &'static MnistSet {
    static SET: OnceLock<MnistSet> = OnceLock::new();
    SET.get_or_init(|| {
        let p = paths();
        load_mnist(&p.test_images, &p.test_labels).unwrap()
    })
}

pub fn train_set() -> MnistSet {
    let p = paths();
    load_mnist(&p.train_images, &p.train_labels).unwrap()
}

pub const REFERENCE_OPTS: TrainOptions = TrainOptions {
    hidden: 64,
    epochs: 5,
    batch_size: 32,
    learning_rate: 0.1,
    seed: 1,
    limit: None,
};

/// Directory holding the trained reference MLP, training it on first use.
pub fn reference_mlp_dir() -> PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let o = REFERENCE_OPTS;
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!(
            "reference-mlp-h{}-e{}-b{}-lr{}-s{}",
            o.hidden, o.epochs, o.batch_size, o.learning_rate, o.seed
        ));
        if load_model(&dir).is_err() {
            let graph = train_reference_mlp(&train_set(), &o).unwrap();
            // Save elsewhere and rename so concurrent test binaries never see
            // a half-written directory.
            let staging = dir.with_extension(format!("tmp{}", std::process::id()));
            let _ = std::fs::remove_dir_all(&staging);
            save_model(&graph, &staging).unwrap();
            if std::fs::rename(&staging, &dir).is_err() {
                let _ = std::fs::remove_dir_all(&staging);
            }
        }
        dir
    })
    .clone()
}

pub fn reference_mlp() -> ModelGraph {
    load_model(reference_mlp_dir()).unwrap()
}

/// A 4-input, 4-output linear classifier over 2x2 images.
pub fn toy_model() -> ModelGraph {
    let w = vec![
        0.9, -0.2, 0.1, -0.6, //
        -0.4, 0.8, -0.3, 0.2, //
        0.05, -0.5, 0.7, -0.1, //
        -0.3, 0.1, -0.2, 1.0,
    ];
    ModelGraph::new(
        "toy",
        vec![1, 2, 2],
        vec![
            LayerSpec::Flatten,
            LayerSpec::Linear {
                in_features: 4,
                out_features: 4,
                weights: Tensor::new(vec![4, 4], w).unwrap(),
                bias: Tensor::new(vec![4], vec![0.01, -0.02, 0.0, 0.03]).unwrap(),
            },
        ],
    )
    .unwrap()
}

/// Images with one dominant pixel, labelled by that pixel.
pub fn toy_data(n: usize) -> MnistSet {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let hot = i % 4;
        for p in 0..4 {
            pixels.push(if p == hot {
                0.6 + 0.1 * (i % 5) as f32
            } else {
                0.05 * ((i + p) % 7) as f32
            });
        }
        labels.push(hot as u8);
    }
    MnistSet::new(2, 2, pixels, labels).unwrap()
}
