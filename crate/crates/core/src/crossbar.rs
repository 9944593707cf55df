//! 1T1R crossbar model: programmed conductances, the fault-overlaid state the
//! array actually holds, and in-array analog matrix-vector multiplication.
//!
//! Each cell conducts `I = V * G` (Ohm's law) and every bitline sums the
//! currents of its cells (Kirchhoff). The access transistor is treated as an
//! ideal switch, so there are no sneak paths, no wire resistance and no I-V
//! nonlinearity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrical parameters shared by every cell of a crossbar.
///
/// `g_off` is the high-resistance state, `g_on` the low-resistance state.
/// Weights map onto the continuous range between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// LRS conductance in siemens.
    pub g_on: f64,
    /// HRS conductance in siemens.
    pub g_off: f64,
    /// Largest voltage the input drivers may apply, in volts.
    pub v_max: f64,
}

impl Default for DeviceParams {
    /// 10 kΩ LRS, 1 MΩ HRS, 0.3 V maximum input.
    fn default() -> Self {
        DeviceParams {
            g_on: 1e-4,
            g_off: 1e-6,
            v_max: 0.3,
        }
    }
}

impl DeviceParams {
    pub fn new(g_on: f64, g_off: f64, v_max: f64) -> Result<Self> {
        let params = DeviceParams { g_on, g_off, v_max };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_off > 0.0 && self.g_on > self.g_off && self.g_on.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "device conductances must satisfy g_on > g_off > 0 (g_on={}, g_off={})",
                self.g_on, self.g_off
            )));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "v_max must be positive, got {}",
                self.v_max
            )));
        }
        Ok(())
    }

    /// Width of the programmable conductance window.
    pub fn g_range(&self) -> f64 {
        self.g_on - self.g_off
    }

    pub fn clamp(&self, g: f64) -> f64 {
        g.clamp(self.g_off, self.g_on)
    }

    fn contains(&self, g: f64) -> bool {
        g >= self.g_off && g <= self.g_on
    }
}

/// A crossbar array. Matrices are row-major, `rows` wordlines by `cols`
/// bitlines.
///
/// `nominal_g` is what the array was programmed to hold. `effective_g` is
/// what it actually holds after faults; the two are equal on a healthy
/// array. Cells pinned by a stuck-at fault are tracked so that reprogramming
/// cannot move them.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossbar {
    rows: usize,
    cols: usize,
    nominal_g: Vec<f64>,
    effective_g: Vec<f64>,
    stuck: Vec<bool>,
    device: DeviceParams,
}

impl Crossbar {
    /// Builds a healthy crossbar programmed with `nominal_g` (row-major).
    pub fn new(
        rows: usize,
        cols: usize,
        nominal_g: Vec<f64>,
        device: DeviceParams,
    ) -> Result<Self> {
        device.validate()?;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "crossbar dimensions must be non-zero, got {rows}x{cols}"
            )));
        }
        if nominal_g.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "conductance matrix length",
                expected: rows * cols,
                actual: nominal_g.len(),
            });
        }
        if let Some((idx, g)) = nominal_g
            .iter()
            .enumerate()
            .find(|(_, g)| !device.contains(**g))
        {
            return Err(Error::InvalidParameter(format!(
                "conductance {g} S at ({}, {}) outside [{}, {}] S",
                idx / cols,
                idx % cols,
                device.g_off,
                device.g_on
            )));
        }
        Ok(Crossbar {
            rows,
            cols,
            effective_g: nominal_g.clone(),
            nominal_g,
            stuck: vec![false; rows * cols],
            device,
        })
    }

    /// Every cell programmed to the same conductance.
    pub fn uniform(rows: usize, cols: usize, g: f64, device: DeviceParams) -> Result<Self> {
        Self::new(rows, cols, vec![g; rows * cols], device)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn device(&self) -> &DeviceParams {
        &self.device
    }

    pub fn nominal_g(&self) -> &[f64] {
        &self.nominal_g
    }

    pub fn effective_g(&self) -> &[f64] {
        &self.effective_g
    }

    pub fn nominal(&self, row: usize, col: usize) -> f64 {
        self.nominal_g[row * self.cols + col]
    }

    pub fn effective(&self, row: usize, col: usize) -> f64 {
        self.effective_g[row * self.cols + col]
    }

    /// Whether the cell is pinned by a stuck-at fault.
    pub fn is_stuck(&self, row: usize, col: usize) -> bool {
        self.stuck[row * self.cols + col]
    }

    /// True when the array holds exactly what was programmed.
    pub fn is_pristine(&self) -> bool {
        self.effective_g == self.nominal_g
    }

    /// Drops every fault and returns the array to its programmed state.
    pub fn restore(&mut self) {
        self.effective_g.copy_from_slice(&self.nominal_g);
        self.stuck.fill(false);
    }

    pub(crate) fn set_cell(&mut self, row: usize, col: usize, g: f64, stuck: bool) {
        let idx = row * self.cols + col;
        self.effective_g[idx] = g;
        self.stuck[idx] = stuck;
    }

    /// Rewrites column `col` to its programmed conductances. Stuck cells keep
    /// their pinned value. Returns the number of cells that could not be
    /// restored.
    pub fn reprogram_column(&mut self, col: usize) -> Result<usize> {
        if col >= self.cols {
            return Err(Error::ColumnOutOfRange {
                col,
                cols: self.cols,
            });
        }
        let mut pinned = 0;
        for row in 0..self.rows {
            let idx = row * self.cols + col;
            if self.stuck[idx] {
                pinned += 1;
            } else {
                self.effective_g[idx] = self.nominal_g[idx];
            }
        }
        Ok(pinned)
    }

    /// Checks a voltage vector against the array's rows and the driver range.
    pub fn check_voltages(&self, voltages: &[f64]) -> Result<()> {
        if voltages.len() != self.rows {
            return Err(Error::DimensionMismatch {
                what: "input voltage vector length",
                expected: self.rows,
                actual: voltages.len(),
            });
        }
        let v_max = self.device.v_max;
        if let Some((row, &value)) = voltages
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= v_max))
        {
            return Err(Error::VoltageOutOfRange { row, value, v_max });
        }
        Ok(())
    }

    /// Bitline currents for the given wordline voltages:
    /// `I[j] = sum_i V[i] * G_eff[i][j]`.
    ///
    /// Each bitline accumulates its cells in ascending row order, so the
    /// result is bitwise reproducible.
    pub fn analog_mvm(&self, voltages: &[f64]) -> Result<Vec<f64>> {
        self.check_voltages(voltages)?;
        Ok(self.mvm_unchecked(voltages))
    }

    pub(crate) fn mvm_unchecked(&self, voltages: &[f64]) -> Vec<f64> {
        column_currents(&self.effective_g, self.cols, voltages)
    }

    /// Bitline currents the array would produce in its programmed state.
    pub(crate) fn nominal_mvm_unchecked(&self, voltages: &[f64]) -> Vec<f64> {
        column_currents(&self.nominal_g, self.cols, voltages)
    }

    /// The all-`v_max` vector used to probe the array.
    pub fn test_vector(&self) -> Vec<f64> {
        vec![self.device.v_max; self.rows]
    }
}

fn column_currents(g: &[f64], cols: usize, voltages: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (v, row) in voltages.iter().zip(g.chunks_exact(cols)) {
        if *v == 0.0 {
            // v * g == +0.0 for every finite g, and acc + 0.0 == acc.
            continue;
        }
        for (acc, g) in out.iter_mut().zip(row) {
            *acc += v * g;
        }
    }
    out
}
