//! Hard (stuck-at) and soft (conductance deviation) fault injection.
//!
//! Every cell is independently faulty with probability `rate`. A fault map is
//! a pure function of its dimensions, device and [`InjectionConfig`]; the
//! random stream consumes the same draws for every cell whatever the rate,
//! so for a fixed seed the faulty set at a lower rate is a subset of the
//! faulty set at a higher rate.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crossbar::{Crossbar, DeviceParams};
use crate::error::{Error, Result};

/// Default relative deviation for [`FaultModel::SoftGaussian`].
pub const DEFAULT_SIGMA_REL: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultModel {
    /// Stuck at HRS (`g_off`).
    Sa0,
    /// Stuck at LRS (`g_on`).
    Sa1,
    /// `g * (1 + eps)`, `eps ~ N(0, sigma_rel^2)`, clamped to the device range.
    SoftGaussian { sigma_rel: f64 },
    /// Conductance redrawn uniformly over `[g_off, g_on]`.
    SoftRedraw,
}

impl FaultModel {
    pub fn is_hard(&self) -> bool {
        matches!(self, FaultModel::Sa0 | FaultModel::Sa1)
    }

    pub fn label(&self) -> &'static str {
        match self {
            FaultModel::Sa0 => "sa0",
            FaultModel::Sa1 => "sa1",
            FaultModel::SoftGaussian { .. } => "soft_gaussian",
            FaultModel::SoftRedraw => "soft_redraw",
        }
    }

    fn validate(&self) -> Result<()> {
        if let FaultModel::SoftGaussian { sigma_rel } = self {
            if !(*sigma_rel > 0.0 && sigma_rel.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "sigma_rel must be positive, got {sigma_rel}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub rate: f64,
    pub model: FaultModel,
    pub seed: u64,
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidParameter(format!(
                "fault rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        self.model.validate()
    }
}

/// What a faulty cell holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CellFault {
    /// Pinned at the carried level (`g_off`).
    Sa0(f64),
    /// Pinned at the carried level (`g_on`).
    Sa1(f64),
    /// Relative deviation `eps`; the cell reads `clamp(g_nominal * (1 + eps))`.
    Gaussian(f64),
    /// Absolute replacement conductance.
    Redraw(f64),
}

impl CellFault {
    pub fn is_stuck(&self) -> bool {
        matches!(self, CellFault::Sa0(_) | CellFault::Sa1(_))
    }

    /// Conductance a cell programmed to `nominal` reads under this fault.
    pub fn perturbed(&self, nominal: f64, device: &DeviceParams) -> f64 {
        match *self {
            CellFault::Sa0(g) | CellFault::Sa1(g) | CellFault::Redraw(g) => device.clamp(g),
            CellFault::Gaussian(eps) => device.clamp(nominal * (1.0 + eps)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub row: usize,
    pub col: usize,
    pub fault: CellFault,
}

/// Per-cell fault assignments for one crossbar, sorted row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultMap {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    entries: Vec<FaultEntry>,
}

impl FaultMap {
    pub fn empty(rows: usize, cols: usize) -> Self {
        FaultMap {
            rows,
            cols,
            seed: 0,
            entries: Vec::new(),
        }
    }

    /// Builds a map from explicit entries. Entries are sorted; out-of-bounds
    /// coordinates and duplicate cells are rejected.
    pub fn from_entries(rows: usize, cols: usize, mut entries: Vec<FaultEntry>) -> Result<Self> {
        entries.sort_by_key(|e| (e.row, e.col));
        for w in entries.windows(2) {
            if (w[0].row, w[0].col) == (w[1].row, w[1].col) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate fault entry at ({}, {})",
                    w[0].row, w[0].col
                )));
            }
        }
        if let Some(e) = entries.iter().find(|e| e.row >= rows || e.col >= cols) {
            return Err(Error::InvalidParameter(format!(
                "fault entry ({}, {}) outside a {rows}x{cols} array",
                e.row, e.col
            )));
        }
        Ok(FaultMap {
            rows,
            cols,
            seed: 0,
            entries,
        })
    }

    /// Samples a map: each cell is faulty with probability `cfg.rate`.
    pub fn sample(
        rows: usize,
        cols: usize,
        device: &DeviceParams,
        cfg: &InjectionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        device.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = match cfg.model {
            FaultModel::SoftGaussian { sigma_rel } => Some(
                Normal::new(0.0, sigma_rel).map_err(|e| Error::InvalidParameter(e.to_string()))?,
            ),
            _ => None,
        };
        let mut entries = Vec::new();
        for row in 0..rows {
            for col in 0..cols {
                let hit = rng.random::<f64>() < cfg.rate;
                // The value draw happens whether or not the cell is hit so the
                // stream stays aligned across rates.
                let fault = match cfg.model {
                    FaultModel::Sa0 => CellFault::Sa0(device.g_off),
                    FaultModel::Sa1 => CellFault::Sa1(device.g_on),
                    FaultModel::SoftGaussian { .. } => {
                        CellFault::Gaussian(normal.as_ref().unwrap().sample(&mut rng))
                    }
                    FaultModel::SoftRedraw => {
                        CellFault::Redraw(device.g_off + device.g_range() * rng.random::<f64>())
                    }
                };
                if hit {
                    entries.push(FaultEntry { row, col, fault });
                }
            }
        }
        Ok(FaultMap {
            rows,
            cols,
            seed: cfg.seed,
            entries,
        })
    }

    pub fn entries(&self) -> &[FaultEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overwrites the crossbar's effective state: programmed values
    /// everywhere, then the faulty cells. Applying the same map twice leaves
    /// the same state.
    pub fn apply_to(&self, xbar: &mut Crossbar) -> Result<()> {
        if xbar.rows() != self.rows {
            return Err(Error::DimensionMismatch {
                what: "fault map rows",
                expected: xbar.rows(),
                actual: self.rows,
            });
        }
        if xbar.cols() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "fault map columns",
                expected: xbar.cols(),
                actual: self.cols,
            });
        }
        xbar.restore();
        let device = *xbar.device();
        for e in &self.entries {
            let g = e.fault.perturbed(xbar.nominal(e.row, e.col), &device);
            xbar.set_cell(e.row, e.col, g, e.fault.is_stuck());
        }
        Ok(())
    }

    /// Columns holding at least one fault.
    pub fn faulty_columns(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|e| e.col).collect()
    }

    /// Flat `(row, col, kind, value)` tuples for audit logs.
    pub fn to_tuples(&self) -> Vec<(usize, usize, &'static str, f64)> {
        self.entries
            .iter()
            .map(|e| {
                let (kind, value) = match e.fault {
                    CellFault::Sa0(g) => ("sa0", g),
                    CellFault::Sa1(g) => ("sa1", g),
                    CellFault::Gaussian(eps) => ("gaussian_eps", eps),
                    CellFault::Redraw(g) => ("redraw", g),
                };
                (e.row, e.col, kind, value)
            })
            .collect()
    }
}

/// Columns of `map` that hold at least one injected fault.
pub fn column_ground_truth(map: &FaultMap) -> BTreeSet<usize> {
    map.faulty_columns()
}

/// Convenience form of [`FaultMap::apply_to`].
pub fn apply_faults(xbar: &mut Crossbar, map: &FaultMap) -> Result<()> {
    map.apply_to(xbar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rate: f64, model: FaultModel, seed: u64) -> InjectionConfig {
        InjectionConfig { rate, model, seed }
    }

    fn ramp_crossbar(rows: usize, cols: usize) -> Crossbar {
        let dev = DeviceParams::default();
        let n = rows * cols;
        let g = (0..n)
            .map(|i| dev.g_off + dev.g_range() * (i as f64) / (n as f64))
            .collect();
        Crossbar::new(rows, cols, g, dev).unwrap()
    }

    #[test]
    fn zero_rate_is_empty() {
        let dev = DeviceParams::default();
        let map = FaultMap::sample(16, 16, &dev, &cfg(0.0, FaultModel::SoftRedraw, 3)).unwrap();
        assert!(map.is_empty());
    }

    #[test]
    fn full_rate_sa0_hits_every_cell() {
        let dev = DeviceParams::default();
        let map = FaultMap::sample(8, 5, &dev, &cfg(1.0, FaultModel::Sa0, 3)).unwrap();
        assert_eq!(map.len(), 40);
        assert!(map
            .entries()
            .iter()
            .all(|e| e.fault == CellFault::Sa0(dev.g_off)));
    }

    #[test]
    fn rejects_bad_config() {
        let dev = DeviceParams::default();
        assert!(FaultMap::sample(2, 2, &dev, &cfg(1.5, FaultModel::Sa0, 0)).is_err());
        assert!(FaultMap::sample(2, 2, &dev, &cfg(-0.1, FaultModel::Sa0, 0)).is_err());
        let bad = FaultModel::SoftGaussian { sigma_rel: 0.0 };
        assert!(FaultMap::sample(2, 2, &dev, &cfg(0.1, bad, 0)).is_err());
    }

    #[test]
    fn count_within_binomial_bound() {
        // Binomial(16384, 0.1): mean 1638.4, sd 38.4; +-5 sd -> [1446, 1830].
        let dev = DeviceParams::default();
        for seed in 0..10 {
            let map =
                FaultMap::sample(128, 128, &dev, &cfg(0.1, FaultModel::SoftRedraw, seed)).unwrap();
            assert!(
                (1446..=1830).contains(&map.len()),
                "seed {seed}: {}",
                map.len()
            );
        }
    }

    #[test]
    fn sampling_is_deterministic_and_nested_across_rates() {
        let dev = DeviceParams::default();
        let a = FaultMap::sample(32, 32, &dev, &cfg(0.1, FaultModel::SoftRedraw, 9)).unwrap();
        let b = FaultMap::sample(32, 32, &dev, &cfg(0.1, FaultModel::SoftRedraw, 9)).unwrap();
        assert_eq!(a, b);
        let hi = FaultMap::sample(32, 32, &dev, &cfg(0.3, FaultModel::SoftRedraw, 9)).unwrap();
        for e in a.entries() {
            assert!(hi.entries().contains(e));
        }
    }

    #[test]
    fn perturbed_values_stay_in_range() {
        let dev = DeviceParams::default();
        let mut xbar = ramp_crossbar(24, 24);
        let model = FaultModel::SoftGaussian { sigma_rel: 3.0 };
        let map = FaultMap::sample(24, 24, &dev, &cfg(0.5, model, 1)).unwrap();
        map.apply_to(&mut xbar).unwrap();
        assert!(xbar
            .effective_g()
            .iter()
            .all(|g| *g >= dev.g_off && *g <= dev.g_on));
    }

    #[test]
    fn empty_map_leaves_nominal() {
        let mut xbar = ramp_crossbar(4, 4);
        FaultMap::empty(4, 4).apply_to(&mut xbar).unwrap();
        assert!(xbar.is_pristine());
    }

    #[test]
    fn single_sa1_is_pointwise() {
        let mut xbar = ramp_crossbar(4, 4);
        let dev = *xbar.device();
        let map = FaultMap::from_entries(
            4,
            4,
            vec![FaultEntry {
                row: 0,
                col: 0,
                fault: CellFault::Sa1(dev.g_on),
            }],
        )
        .unwrap();
        apply_faults(&mut xbar, &map).unwrap();
        assert_eq!(xbar.effective(0, 0), dev.g_on);
        assert!(xbar.is_stuck(0, 0));
        for r in 0..4 {
            for c in 0..4 {
                if (r, c) != (0, 0) {
                    assert_eq!(xbar.effective(r, c), xbar.nominal(r, c));
                }
            }
        }
    }

    #[test]
    fn apply_is_idempotent_and_keeps_nominal() {
        let dev = DeviceParams::default();
        let mut xbar = ramp_crossbar(16, 16);
        let nominal = xbar.nominal_g().to_vec();
        let model = FaultModel::SoftGaussian {
            sigma_rel: DEFAULT_SIGMA_REL,
        };
        let map = FaultMap::sample(16, 16, &dev, &cfg(0.3, model, 5)).unwrap();
        map.apply_to(&mut xbar).unwrap();
        let once = xbar.effective_g().to_vec();
        map.apply_to(&mut xbar).unwrap();
        assert_eq!(once, xbar.effective_g());
        assert_eq!(nominal, xbar.nominal_g());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut xbar = ramp_crossbar(4, 4);
        assert!(FaultMap::empty(4, 5).apply_to(&mut xbar).is_err());
        assert!(FaultMap::empty(3, 4).apply_to(&mut xbar).is_err());
    }

    #[test]
    fn from_entries_validates() {
        let e = |row, col| FaultEntry {
            row,
            col,
            fault: CellFault::Redraw(1e-5),
        };
        assert!(FaultMap::from_entries(4, 4, vec![e(1, 1), e(1, 1)]).is_err());
        assert!(FaultMap::from_entries(4, 4, vec![e(4, 0)]).is_err());
        let map = FaultMap::from_entries(8, 8, vec![e(7, 5), e(3, 5)]).unwrap();
        assert_eq!(map.faulty_columns(), BTreeSet::from([5]));
        assert_eq!(map.entries()[0].row, 3);
    }

    #[test]
    fn faulty_columns_match_scan() {
        let dev = DeviceParams::default();
        for seed in 0..20 {
            let map = FaultMap::sample(16, 24, &dev, &cfg(0.02, FaultModel::Sa1, seed)).unwrap();
            let mut scan = [false; 24];
            for (_, col, _, _) in map.to_tuples() {
                scan[col] = true;
            }
            let expected: BTreeSet<usize> = (0..24).filter(|c| scan[*c]).collect();
            assert_eq!(map.faulty_columns(), expected);
        }
        assert!(FaultMap::empty(3, 3).faulty_columns().is_empty());
    }
}
