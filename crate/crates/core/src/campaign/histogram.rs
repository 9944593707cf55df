use std::path::Path;

use crate::error::Result;
use crate::io::mnist::MnistSet;
use crate::io::model::load_model;
use crate::nn::layer::ModelGraph;
use crate::nn::mapped::{CodeHistogram, ForwardOptions, InferenceMode, MappedModel};
use crate::nn::mapping::MappingConfig;

/// ADC codes emitted during fault-free crossbar inference over the first
/// `samples` images, per weighted layer.
pub fn adc_histogram(
    graph: &ModelGraph,
    mapping: &MappingConfig,
    data: &MnistSet,
    samples: usize,
) -> Result<CodeHistogram> {
    let mut model = MappedModel::new(graph.clone(), *mapping)?;
    let mut hist = CodeHistogram::new(mapping.adc_bits);
    let opts = ForwardOptions::default();
    for i in 0..samples.min(data.len()) {
        model.forward_observed(
            &data.image(i),
            InferenceMode::Crossbar,
            &opts,
            Some(&mut hist),
        )?;
    }
    Ok(hist)
}

/// [`adc_histogram`] for a saved model directory.
pub fn adc_histogram_from_dir(
    model_dir: impl AsRef<Path>,
    mapping: &MappingConfig,
    data: &MnistSet,
    samples: usize,
) -> Result<CodeHistogram> {
    adc_histogram(&load_model(model_dir)?, mapping, data, samples)
}

/// Codes a histogram must hold: every physical column of every tile, once per
/// tile MVM. `mvms_per_input[layer]` is how many input vectors one sample
/// sends through that layer (1 for linear layers, output positions for
/// convolutions).
pub fn expected_code_count(
    model: &MappedModel,
    mvms_per_input: &[(usize, u64)],
    samples: u64,
) -> u64 {
    mvms_per_input
        .iter()
        .map(|&(layer, per_input)| {
            let cols: u64 = model
                .layer(layer)
                .map(|l| l.tiles.iter().map(|t| t.xbar.cols() as u64).sum())
                .unwrap_or(0);
            cols * per_input * samples
        })
        .sum()
}
