use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campaign::config::CampaignConfig;
use crate::error::{Error, Result};
use crate::fault::{column_ground_truth, FaultMap};
use crate::io::mnist::{load_mnist, MnistSet};
use crate::io::model::load_model;
use crate::nn::layer::ModelGraph;
use crate::nn::mapped::{ColumnId, ForwardOptions, InferenceMode, MappedModel, TileId};

/// Metrics of one `(rate, k, trial)` work item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub rate: f64,
    pub k: u32,
    pub trial: u64,
    pub accuracy: f64,
    /// Detected faulty columns over all faulty columns; 1 when none are faulty.
    pub detection_rate: f64,
    /// Faulty columns the guard never flagged.
    pub false_neg_cols: u64,
    pub reprograms: u64,
    pub permanent_cols: u64,
    pub overhead_ratio: f64,
    pub seconds: f64,
    pub injected_cells: u64,
    pub faulty_cols: u64,
    /// Faulty columns whose test-vector code differs from the golden code.
    pub perturbing_cols: u64,
    pub detected_perturbing_cols: u64,
    pub test_cycles: u64,
    pub payload_cycles: u64,
}

impl TrialRecord {
    /// Detection rate restricted to columns whose faults move the test code.
    pub fn perturbing_detection_rate(&self) -> f64 {
        ratio_or_one(self.detected_perturbing_cols, self.perturbing_cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: impl IntoIterator<Item = f64>) -> MeanStd {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return MeanStd {
                mean: 0.0,
                std: 0.0,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

/// Aggregate over the trials of one `(rate, k)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub rate: f64,
    pub k: u32,
    pub trials: u64,
    pub accuracy: MeanStd,
    pub detection_rate: MeanStd,
    pub perturbing_detection_rate: MeanStd,
    pub false_neg_cols: MeanStd,
    pub reprograms: MeanStd,
    pub permanent_cols: MeanStd,
    pub overhead_ratio: MeanStd,
}

/// One injected cell, for the optional fault audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultAudit {
    pub rate: f64,
    pub k: u32,
    pub trial: u64,
    pub layer: usize,
    pub tile: usize,
    pub row: usize,
    pub col: usize,
    pub kind: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub model_name: String,
    pub evaluated_images: usize,
    pub inference_mode: InferenceMode,
    /// Fault-free crossbar-mode accuracy on the same images.
    pub clean_accuracy: f64,
    /// Floating-point accuracy on the same images.
    pub exact_accuracy: f64,
    /// Sweep order: rates outer, then k, then trial.
    pub records: Vec<TrialRecord>,
    pub points: Vec<PointSummary>,
    #[serde(skip)]
    pub faults: Vec<FaultAudit>,
    pub wall_seconds: f64,
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Loads the configured model and test subset, then sweeps.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult> {
    cfg.validate()?;
    let graph = load_model(&cfg.model)?;
    let data = load_mnist(&cfg.test_images, &cfg.test_labels)?;
    run_campaign_with(&graph, &data, cfg)
}

/// Sweeps an in-memory model over the first `cfg.subset` samples of `data`.
pub fn run_campaign_with(
    graph: &ModelGraph,
    data: &MnistSet,
    cfg: &CampaignConfig,
) -> Result<CampaignResult> {
    cfg.validate()?;
    let started = Instant::now();
    let data = data.head(cfg.subset);
    if data.is_empty() {
        return Err(Error::InvalidParameter("evaluation set is empty".into()));
    }
    let mode = if cfg.guard {
        InferenceMode::Guarded
    } else {
        InferenceMode::Crossbar
    };

    // One programmed model per k; work items clone it.
    let mut bases = BTreeMap::new();
    for &k in &cfg.k_values {
        bases.insert(k, MappedModel::new(graph.clone(), cfg.mapping(k))?);
    }
    let default_k = cfg.k_values.first().copied().unwrap_or(cfg.adc_bits.min(4));
    let mut clean = match bases.get(&default_k) {
        Some(m) => m.clone(),
        None => MappedModel::new(graph.clone(), cfg.mapping(default_k))?,
    };

    let mut items = Vec::new();
    for &rate in &cfg.rates {
        for &k in &cfg.k_values {
            for trial in 0..cfg.trials {
                items.push((rate, k, trial));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let (clean_accuracy, exact_accuracy, outcomes) = pool.install(|| {
        let clean_accuracy = accuracy(
            &mut clean,
            &data,
            InferenceMode::Crossbar,
            &ForwardOptions::default(),
        )?;
        let exact_accuracy = accuracy(
            &mut clean,
            &data,
            InferenceMode::Exact,
            &ForwardOptions::default(),
        )?;
        let outcomes = items
            .par_iter()
            .map(|&(rate, k, trial)| run_item(&bases[&k], &data, cfg, mode, rate, k, trial))
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, Error>((clean_accuracy, exact_accuracy, outcomes))
    })?;

    let mut records = Vec::with_capacity(outcomes.len());
    let mut faults = Vec::new();
    for (rec, audit) in outcomes {
        records.push(rec);
        faults.extend(audit);
    }
    let points = summarize(&records);
    Ok(CampaignResult {
        config: cfg.clone(),
        model_name: graph.name.clone(),
        evaluated_images: data.len(),
        inference_mode: mode,
        clean_accuracy,
        exact_accuracy,
        records,
        points,
        faults,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Top-1 accuracy of `model` over `data` in the given mode.
pub fn accuracy(
    model: &mut MappedModel,
    data: &MnistSet,
    mode: InferenceMode,
    opts: &ForwardOptions,
) -> Result<f64> {
    let mut correct = 0usize;
    for i in 0..data.len() {
        let out = model.forward(&data.image(i), mode, opts)?;
        if out.logits.argmax() == data.label(i) as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Columns whose test-vector code currently differs from the golden code.
pub fn perturbed_columns(model: &MappedModel) -> BTreeSet<ColumnId> {
    let mut out = BTreeSet::new();
    for (id, tile) in model.tiles() {
        let golden = tile.golden_codes();
        let now = tile.xbar.test_codes(&tile.adc);
        for (c, (g, n)) in golden.iter().zip(&now).enumerate() {
            if g != n {
                out.insert(ColumnId::new(id, c));
            }
        }
    }
    out
}

/// Ground-truth faulty columns over all tiles.
pub fn ground_truth(maps: &[(TileId, FaultMap)]) -> BTreeSet<ColumnId> {
    maps.iter()
        .flat_map(|(id, m)| {
            column_ground_truth(m)
                .into_iter()
                .map(|c| ColumnId::new(*id, c))
        })
        .collect()
}

fn run_item(
    base: &MappedModel,
    data: &MnistSet,
    cfg: &CampaignConfig,
    mode: InferenceMode,
    rate: f64,
    k: u32,
    trial: u64,
) -> Result<(TrialRecord, Vec<FaultAudit>)> {
    let started = Instant::now();
    let mut model = base.clone();
    let maps = model.inject_faults(cfg.fault_model, rate, cfg.seed, trial)?;
    let truth = ground_truth(&maps);
    let perturbing: BTreeSet<ColumnId> = perturbed_columns(&model)
        .intersection(&truth)
        .copied()
        .collect();

    let opts = ForwardOptions {
        guard: cfg.guard_config(k),
        dac_bits: None,
    };
    let mut correct = 0usize;
    let mut report = crate::nn::mapped::ModelGuardReport::default();
    for i in 0..data.len() {
        let out = model.forward(&data.image(i), mode, &opts)?;
        if out.logits.argmax() == data.label(i) as usize {
            correct += 1;
        }
        report.merge(&out.report);
    }

    let detected_faulty = report.detected.intersection(&truth).count() as u64;
    let detected_perturbing = report.detected.intersection(&perturbing).count() as u64;
    let faulty = truth.len() as u64;
    let record = TrialRecord {
        rate,
        k,
        trial,
        accuracy: correct as f64 / data.len() as f64,
        detection_rate: ratio_or_one(detected_faulty, faulty),
        false_neg_cols: faulty - detected_faulty,
        reprograms: report.reprogram_events,
        permanent_cols: report.permanent.len() as u64,
        overhead_ratio: report.overhead_ratio(),
        seconds: if cfg.record_timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
        injected_cells: maps.iter().map(|(_, m)| m.len() as u64).sum(),
        faulty_cols: faulty,
        perturbing_cols: perturbing.len() as u64,
        detected_perturbing_cols: detected_perturbing,
        test_cycles: report.test_cycles,
        payload_cycles: report.payload_cycles,
    };

    let mut audit = Vec::new();
    if cfg.audit_faults {
        for (id, map) in &maps {
            for (row, col, kind, value) in map.to_tuples() {
                audit.push(FaultAudit {
                    rate,
                    k,
                    trial,
                    layer: id.layer,
                    tile: id.tile,
                    row,
                    col,
                    kind: kind.to_string(),
                    value,
                });
            }
        }
    }
    Ok((record, audit))
}

fn summarize(records: &[TrialRecord]) -> Vec<PointSummary> {
    let mut points: Vec<PointSummary> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let (rate, k) = (records[start].rate, records[start].k);
        let end = start
            + records[start..]
                .iter()
                .take_while(|r| r.rate.to_bits() == rate.to_bits() && r.k == k)
                .count();
        let group = &records[start..end];
        let stat = |f: fn(&TrialRecord) -> f64| MeanStd::of(group.iter().map(f));
        points.push(PointSummary {
            rate,
            k,
            trials: group.len() as u64,
            accuracy: stat(|r| r.accuracy),
            detection_rate: stat(|r| r.detection_rate),
            perturbing_detection_rate: stat(|r| r.perturbing_detection_rate()),
            false_neg_cols: stat(|r| r.false_neg_cols as f64),
            reprograms: stat(|r| r.reprograms as f64),
            permanent_cols: stat(|r| r.permanent_cols as f64),
            overhead_ratio: stat(|r| r.overhead_ratio),
        });
        start = end;
    }
    points
}
