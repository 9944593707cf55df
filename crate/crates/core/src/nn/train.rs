//! Deterministic minibatch SGD for the reference `784 -> hidden -> 10` MLP.
//!
//! Single-threaded and seeded end to end (initialization and per-epoch
//! shuffles), so a fixed seed reproduces the weights bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::mnist::MnistSet;
use crate::nn::layer::{LayerSpec, ModelGraph};
use crate::nn::tensor::Tensor;

pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Train on the first `n` samples only.
    pub limit: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hidden: 64,
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.1,
            seed: 1,
            limit: None,
        }
    }
}

struct Mlp {
    inputs: usize,
    hidden: usize,
    w1: Vec<f32>, // [hidden, inputs]
    b1: Vec<f32>,
    w2: Vec<f32>, // [CLASSES, hidden]
    b2: Vec<f32>,
}

impl Mlp {
    fn init(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let a1 = (6.0 / inputs as f32).sqrt();
        let a2 = (3.0 / hidden as f32).sqrt();
        let w1 = (0..hidden * inputs)
            .map(|_| rng.random_range(-a1..a1))
            .collect();
        let w2 = (0..CLASSES * hidden)
            .map(|_| rng.random_range(-a2..a2))
            .collect();
        Mlp {
            inputs,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; CLASSES],
        }
    }

    fn into_graph(self, rows: usize, cols: usize) -> Result<ModelGraph> {
        let Mlp {
            inputs,
            hidden,
            w1,
            b1,
            w2,
            b2,
        } = self;
        ModelGraph::new(
            format!("mlp-{inputs}-{hidden}-{CLASSES}"),
            vec![1, rows, cols],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    in_features: inputs,
                    out_features: hidden,
                    weights: Tensor::new(vec![hidden, inputs], w1)?,
                    bias: Tensor::new(vec![hidden], b1)?,
                },
                LayerSpec::Relu,
                LayerSpec::Linear {
                    in_features: hidden,
                    out_features: CLASSES,
                    weights: Tensor::new(vec![CLASSES, hidden], w2)?,
                    bias: Tensor::new(vec![CLASSES], b2)?,
                },
            ],
        )
    }
}

/// The reference MLP with seeded random weights and no training.
pub fn random_mlp(rows: usize, cols: usize, hidden: usize, seed: u64) -> Result<ModelGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::init(rows * cols, hidden, &mut rng).into_graph(rows, cols)
}

/// Trains the reference MLP with softmax cross-entropy.
pub fn train_reference_mlp(data: &MnistSet, opts: &TrainOptions) -> Result<ModelGraph> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    if opts.hidden == 0
        || opts.batch_size == 0
        || opts.learning_rate.is_nan()
        || opts.learning_rate <= 0.0
    {
        return Err(Error::InvalidParameter(format!(
            "hidden, batch_size and learning_rate must be positive ({opts:?})"
        )));
    }
    let inputs = data.rows * data.cols;
    let hidden = opts.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut net = Mlp::init(inputs, hidden, &mut rng);
    let n = opts.limit.unwrap_or(data.len()).min(data.len());
    let mut order: Vec<usize> = (0..n).collect();

    let mut g_w1 = vec![0.0f32; hidden * inputs];
    let mut g_b1 = vec![0.0f32; hidden];
    let mut g_w2 = vec![0.0f32; CLASSES * hidden];
    let mut g_b2 = vec![0.0f32; CLASSES];
    let mut h = vec![0.0f32; hidden];
    let mut dh = vec![0.0f32; hidden];
    let mut z = [0.0f32; CLASSES];

    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            g_w1.fill(0.0);
            g_b1.fill(0.0);
            g_w2.fill(0.0);
            g_b2.fill(0.0);
            for &idx in batch {
                let x = data.pixels(idx);
                let label = data.label(idx) as usize;
                for (j, hj) in h.iter_mut().enumerate() {
                    let row = &net.w1[j * inputs..(j + 1) * inputs];
                    let a = net.b1[j] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f32>();
                    *hj = a.max(0.0);
                }
                for (c, zc) in z.iter_mut().enumerate() {
                    let row = &net.w2[c * hidden..(c + 1) * hidden];
                    *zc = net.b2[c] + row.iter().zip(&h).map(|(w, h)| w * h).sum::<f32>();
                }
                // softmax - onehot
                let m = z.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
                let mut total = 0.0;
                for zc in z.iter_mut() {
                    *zc = (*zc - m).exp();
                    total += *zc;
                }
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc /= total;
                    if c == label {
                        *zc -= 1.0;
                    }
                }
                dh.fill(0.0);
                for (c, dz) in z.iter().enumerate() {
                    g_b2[c] += dz;
                    let row = c * hidden;
                    for j in 0..hidden {
                        g_w2[row + j] += dz * h[j];
                        dh[j] += dz * net.w2[row + j];
                    }
                }
                for j in 0..hidden {
                    if h[j] <= 0.0 {
                        continue;
                    }
                    let d = dh[j];
                    g_b1[j] += d;
                    let grad = &mut g_w1[j * inputs..(j + 1) * inputs];
                    for (g, xi) in grad.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            let step = opts.learning_rate / batch.len() as f32;
            for (w, g) in net.w1.iter_mut().zip(&g_w1) {
                *w -= step * g;
            }
            for (w, g) in net.b1.iter_mut().zip(&g_b1) {
                *w -= step * g;
            }
            for (w, g) in net.w2.iter_mut().zip(&g_w2) {
                *w -= step * g;
            }
            for (w, g) in net.b2.iter_mut().zip(&g_b2) {
                *w -= step * g;
            }
        }
    }
    net.into_graph(data.rows, data.cols)
}

/// Top-1 accuracy of plain floating-point inference.
pub fn exact_accuracy(model: &ModelGraph, data: &MnistSet) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let logits = model.forward_exact(&data.image(i))?;
        if logits.argmax() == data.label(i) as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
