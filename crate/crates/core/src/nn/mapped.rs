//! Inference through mapped crossbars.
//!
//! Per tile, the slice of the layer input it sees is scaled so its largest
//! element drives `v_max`, the array is read through the ADC, and each pair
//! is reconstructed digitally:
//!
//! ```text
//! y = (deq(code+) - deq(code-)) * s / (g_on - g_off) * (x_max / v_max)
//! ```
//!
//! Partial sums from row tiles are added digitally, then the bias. Pooling,
//! activations and bias never touch the array.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::adc::DigitalCode;
use crate::error::{Error, Result};
use crate::fault::{FaultMap, FaultModel, InjectionConfig};
use crate::guard::{protected_mvm, GuardConfig};
use crate::nn::im2col::im2col;
use crate::nn::layer::{apply_digital, LayerSpec, ModelGraph};
use crate::nn::mapping::{map_layer, MappedLayer, MappingConfig, Tile};
use crate::nn::tensor::Tensor;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Floating-point reference, no crossbars.
    Exact,
    /// Crossbars and ADCs, no checking.
    Crossbar,
    /// Crossbars with test-vector checking and column repair.
    Guarded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub guard: GuardConfig,
    /// Input DAC resolution. `None` applies ideal continuous voltages.
    pub dac_bits: Option<u32>,
}

/// Location of a crossbar: weighted-layer index in the graph and tile index
/// within the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileId {
    pub layer: usize,
    pub tile: usize,
}

/// A physical column anywhere in the mapped model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnId {
    pub layer: usize,
    pub tile: usize,
    pub col: usize,
}

impl ColumnId {
    pub fn new(id: TileId, col: usize) -> Self {
        ColumnId {
            layer: id.layer,
            tile: id.tile,
            col,
        }
    }
}

/// Guard outcomes aggregated over every tile and every MVM.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGuardReport {
    pub detected: BTreeSet<ColumnId>,
    pub reprogrammed: BTreeSet<ColumnId>,
    pub permanent: BTreeSet<ColumnId>,
    pub test_cycles: u64,
    pub reprogram_events: u64,
    /// Payload MVMs issued to crossbars.
    pub payload_cycles: u64,
}

impl ModelGuardReport {
    /// No detection or repair happened.
    pub fn is_clean(&self) -> bool {
        self.detected.is_empty()
            && self.reprogrammed.is_empty()
            && self.permanent.is_empty()
            && self.reprogram_events == 0
    }

    /// `(payload + test) / payload` cycles; 1 when nothing ran.
    pub fn overhead_ratio(&self) -> f64 {
        if self.payload_cycles == 0 {
            1.0
        } else {
            (self.payload_cycles + self.test_cycles) as f64 / self.payload_cycles as f64
        }
    }

    pub fn merge(&mut self, other: &ModelGuardReport) {
        self.detected.extend(&other.detected);
        self.reprogrammed.extend(&other.reprogrammed);
        self.permanent.extend(&other.permanent);
        self.test_cycles += other.test_cycles;
        self.reprogram_events += other.reprogram_events;
        self.payload_cycles += other.payload_cycles;
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub report: ModelGuardReport,
}

/// ADC code counts per weighted layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeHistogram {
    pub bits: u32,
    pub layers: BTreeMap<usize, LayerCodes>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCodes {
    pub counts: Vec<u64>,
    /// Tile MVMs recorded.
    pub mvms: u64,
}

impl CodeHistogram {
    pub fn new(bits: u32) -> Self {
        CodeHistogram {
            bits,
            layers: BTreeMap::new(),
        }
    }

    fn record(&mut self, layer: usize, codes: &[DigitalCode]) {
        let bins = 1usize << self.bits;
        let entry = self.layers.entry(layer).or_insert_with(|| LayerCodes {
            counts: vec![0; bins],
            mvms: 0,
        });
        entry.mvms += 1;
        for c in codes {
            entry.counts[c.0 as usize] += 1;
        }
    }

    /// All layers summed.
    pub fn pooled(&self) -> Vec<u64> {
        let mut out = vec![0; 1usize << self.bits];
        for l in self.layers.values() {
            for (o, c) in out.iter_mut().zip(&l.counts) {
                *o += c;
            }
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.pooled().iter().sum()
    }

    /// Lower median of the pooled distribution.
    pub fn median_code(&self) -> Option<u32> {
        median(&self.pooled())
    }
}

/// Lower median code of a histogram.
pub fn median(counts: &[u64]) -> Option<u32> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let target = total.div_ceil(2);
    let mut seen = 0;
    for (code, c) in counts.iter().enumerate() {
        seen += c;
        if seen >= target {
            return Some(code as u32);
        }
    }
    None
}

/// A model graph with every weighted layer programmed onto crossbars.
#[derive(Debug, Clone)]
pub struct MappedModel {
    graph: ModelGraph,
    config: MappingConfig,
    layers: Vec<Option<MappedLayer>>,
}

impl MappedModel {
    pub fn new(graph: ModelGraph, config: MappingConfig) -> Result<Self> {
        graph.shapes()?;
        let layers = graph
            .layers
            .iter()
            .map(|l| {
                if l.is_weighted() {
                    map_layer(l, &config).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MappedModel {
            graph,
            config,
            layers,
        })
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn config(&self) -> &MappingConfig {
        &self.config
    }

    /// Mapped layer at graph index `layer`, if that layer is weighted.
    pub fn layer(&self, layer: usize) -> Option<&MappedLayer> {
        self.layers.get(layer).and_then(|l| l.as_ref())
    }

    /// Every tile in a fixed order: graph layer order, then tile order.
    pub fn tiles(&self) -> impl Iterator<Item = (TileId, &Tile)> {
        self.layers.iter().enumerate().flat_map(|(li, l)| {
            l.iter().flat_map(move |m| {
                m.tiles.iter().enumerate().map(move |(ti, t)| {
                    (
                        TileId {
                            layer: li,
                            tile: ti,
                        },
                        t,
                    )
                })
            })
        })
    }

    pub fn tiles_mut(&mut self) -> impl Iterator<Item = (TileId, &mut Tile)> {
        self.layers.iter_mut().enumerate().flat_map(|(li, l)| {
            l.iter_mut().flat_map(move |m| {
                m.tiles.iter_mut().enumerate().map(move |(ti, t)| {
                    (
                        TileId {
                            layer: li,
                            tile: ti,
                        },
                        t,
                    )
                })
            })
        })
    }

    pub fn tile_count(&self) -> usize {
        self.tiles().count()
    }

    /// Samples and applies a fresh fault map on every tile. Tile `n` (in
    /// [`MappedModel::tiles`] order) draws from `derive_seed(master, [trial, n])`.
    pub fn inject_faults(
        &mut self,
        model: FaultModel,
        rate: f64,
        master_seed: u64,
        trial: u64,
    ) -> Result<Vec<(TileId, FaultMap)>> {
        let mut maps = Vec::new();
        for (n, (id, tile)) in self.tiles_mut().enumerate() {
            let cfg = InjectionConfig {
                rate,
                model,
                seed: derive_seed(master_seed, &[trial, n as u64]),
            };
            let map =
                FaultMap::sample(tile.xbar.rows(), tile.xbar.cols(), tile.xbar.device(), &cfg)?;
            map.apply_to(&mut tile.xbar)?;
            maps.push((id, map));
        }
        Ok(maps)
    }

    /// Clears every fault and the MVM counters.
    pub fn restore(&mut self) {
        for (_, t) in self.tiles_mut() {
            t.xbar.restore();
            t.invocations = 0;
        }
    }

    pub fn forward(
        &mut self,
        input: &Tensor,
        mode: InferenceMode,
        opts: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        self.forward_observed(input, mode, opts, None)
    }

    /// As [`MappedModel::forward`], additionally recording every ADC code.
    pub fn forward_observed(
        &mut self,
        input: &Tensor,
        mode: InferenceMode,
        opts: &ForwardOptions,
        mut hist: Option<&mut CodeHistogram>,
    ) -> Result<ForwardOutput> {
        if mode == InferenceMode::Exact {
            return Ok(ForwardOutput {
                logits: self.graph.forward_exact(input)?,
                report: ModelGuardReport::default(),
            });
        }
        if input.shape() != self.graph.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "model {} expects input {:?}, got {:?}",
                self.graph.name,
                self.graph.input_shape,
                input.shape()
            )));
        }
        if mode == InferenceMode::Guarded {
            opts.guard.validate(&self.layers_adc()?)?;
            if opts.guard.k != self.config.k {
                return Err(Error::InvalidParameter(format!(
                    "crossbars were programmed with {}-LSB signatures, guard asks for {}",
                    self.config.k, opts.guard.k
                )));
            }
        }
        if let Some(bits) = opts.dac_bits {
            if !(1..=16).contains(&bits) {
                return Err(Error::InvalidParameter(format!(
                    "DAC resolution must be 1..=16 bits, got {bits}"
                )));
            }
        }

        let mut report = ModelGuardReport::default();
        let mut x = input.clone();
        for (li, layer) in self.graph.layers.iter().enumerate() {
            x = match layer {
                LayerSpec::Linear { .. } => {
                    let mapped = self.layers[li].as_mut().unwrap();
                    let mut ctx = LayerRun {
                        layer: li,
                        mode,
                        opts,
                        report: &mut report,
                        hist: hist.as_deref_mut(),
                    };
                    Tensor::from_vec(ctx.run(mapped, x.data())?)
                }
                LayerSpec::Conv2d { .. } => {
                    let mapped = self.layers[li].as_mut().unwrap();
                    let patches = im2col(&x, &layer.conv_geometry().unwrap())?;
                    let positions = patches.positions;
                    let fan_out = mapped.fan_out;
                    let mut out = vec![0.0; fan_out * positions];
                    let mut ctx = LayerRun {
                        layer: li,
                        mode,
                        opts,
                        report: &mut report,
                        hist: hist.as_deref_mut(),
                    };
                    for p in 0..positions {
                        let y = ctx.run(mapped, patches.patch(p))?;
                        for (oc, v) in y.into_iter().enumerate() {
                            out[oc * positions + p] = v;
                        }
                    }
                    Tensor::new(vec![fan_out, patches.out_h, patches.out_w], out)?
                }
                other => apply_digital(other, x)?,
            };
        }
        Ok(ForwardOutput { logits: x, report })
    }

    fn layers_adc(&self) -> Result<crate::adc::AdcSpec> {
        self.tiles()
            .next()
            .map(|(_, t)| t.adc)
            .ok_or_else(|| Error::InvalidParameter("model has no mapped layers".into()))
    }
}

struct LayerRun<'a> {
    layer: usize,
    mode: InferenceMode,
    opts: &'a ForwardOptions,
    report: &'a mut ModelGuardReport,
    hist: Option<&'a mut CodeHistogram>,
}

impl LayerRun<'_> {
    /// One input vector through every tile of a mapped layer.
    fn run(&mut self, mapped: &mut MappedLayer, x: &[f32]) -> Result<Vec<f32>> {
        if let Some(&value) = x.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::NegativeActivation {
                layer: self.layer,
                value,
            });
        }
        let mut acc = vec![0.0f64; mapped.fan_out];
        let scale = mapped.scale;
        for (ti, tile) in mapped.tiles.iter_mut().enumerate() {
            let id = TileId {
                layer: self.layer,
                tile: ti,
            };
            let device = *tile.xbar.device();
            let slice = &x[tile.row_offset..tile.row_offset + tile.xbar.rows()];
            let x_max = slice.iter().fold(0.0f32, |m, v| m.max(*v)) as f64;
            let voltages: Vec<f64> = if x_max > 0.0 {
                slice
                    .iter()
                    .map(|v| drive(*v as f64 / x_max, device.v_max, self.opts.dac_bits))
                    .collect()
            } else {
                vec![0.0; slice.len()]
            };

            let check = self.mode == InferenceMode::Guarded
                && tile.invocations % self.opts.guard.interval() as u64 == 0;
            tile.invocations += 1;
            let codes = if check {
                let (codes, r) = protected_mvm(
                    &mut tile.xbar,
                    &voltages,
                    &tile.adc,
                    &tile.signatures,
                    &self.opts.guard,
                )?;
                let ids = |s: &BTreeSet<usize>| {
                    s.iter().map(|c| ColumnId::new(id, *c)).collect::<Vec<_>>()
                };
                self.report.detected.extend(ids(&r.detected_columns));
                self.report
                    .reprogrammed
                    .extend(ids(&r.reprogrammed_columns));
                self.report.permanent.extend(ids(&r.permanent_columns));
                self.report.test_cycles += r.test_cycles;
                self.report.reprogram_events += r.reprogram_events;
                codes
            } else {
                tile.xbar.mvm_codes(&voltages, &tile.adc)?
            };
            self.report.payload_cycles += 1;
            if let Some(h) = self.hist.as_deref_mut() {
                h.record(self.layer, &codes);
            }

            let rescale = scale / device.g_range() * (x_max / device.v_max);
            for l in 0..tile.pairs {
                let (cp, cm) = Tile::pair(l);
                let diff = tile.adc.dequantize(codes[cp]) - tile.adc.dequantize(codes[cm]);
                acc[tile.col_offset + l] += diff * rescale;
            }
        }
        Ok(acc
            .into_iter()
            .zip(&mapped.bias)
            .map(|(a, b)| a as f32 + b)
            .collect())
    }
}

/// Wordline voltage for a normalized input in `[0, 1]`.
fn drive(unit: f64, v_max: f64, dac_bits: Option<u32>) -> f64 {
    let unit = unit.clamp(0.0, 1.0);
    match dac_bits {
        None => unit * v_max,
        Some(bits) => {
            let levels = ((1u32 << bits) - 1) as f64;
            (unit * levels + 0.5).floor() / levels * v_max
        }
    }
}
