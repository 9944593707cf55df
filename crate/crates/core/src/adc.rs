//! Bitline readout: a uniform, clamped, round-half-up ADC.

use serde::{Deserialize, Serialize};

use crate::crossbar::{Crossbar, DeviceParams};
use crate::error::{Error, Result};

/// ADC configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcSpec {
    pub bits: u32,
    /// Current mapped to the top code, in amperes.
    pub full_scale: f64,
}

/// An ADC output code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DigitalCode(pub u32);

impl DigitalCode {
    pub fn value(self) -> u32 {
        self.0
    }

    /// The `k` least-significant bits of the code.
    pub fn lsbs(self, k: u32) -> u32 {
        if k >= 32 {
            self.0
        } else {
            self.0 & ((1u32 << k) - 1)
        }
    }
}

impl AdcSpec {
    pub fn new(bits: u32, full_scale: f64) -> Result<Self> {
        let spec = AdcSpec { bits, full_scale };
        spec.validate()?;
        Ok(spec)
    }

    /// Full scale at the largest current a `rows`-row array can produce:
    /// every cell at `g_on` and every row at `v_max`. In-range inputs can
    /// never saturate.
    pub fn physical_max(bits: u32, rows: usize, device: &DeviceParams) -> Result<Self> {
        Self::new(bits, rows as f64 * device.v_max * device.g_on)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.bits) {
            return Err(Error::InvalidParameter(format!(
                "ADC resolution must be 1..=16 bits, got {}",
                self.bits
            )));
        }
        if !(self.full_scale > 0.0 && self.full_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ADC full scale must be positive, got {}",
                self.full_scale
            )));
        }
        Ok(())
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// `clamp(round(I / full_scale * (2^n - 1)), 0, 2^n - 1)` with ties
    /// rounded up.
    pub fn quantize(&self, current: f64) -> Result<DigitalCode> {
        if current.is_nan() || current < 0.0 {
            return Err(Error::NegativeCurrent(current));
        }
        Ok(self.quantize_unchecked(current))
    }

    pub(crate) fn quantize_unchecked(&self, current: f64) -> DigitalCode {
        let max = self.max_code();
        let scaled = current / self.full_scale * max as f64;
        let code = (scaled + 0.5).floor();
        if code >= max as f64 {
            DigitalCode(max)
        } else {
            DigitalCode(code as u32)
        }
    }

    /// Current represented by `code`: `code / (2^n - 1) * full_scale`.
    pub fn dequantize(&self, code: DigitalCode) -> f64 {
        code.0 as f64 / self.max_code() as f64 * self.full_scale
    }

    /// Worst-case round-trip error for in-range currents.
    pub fn half_lsb(&self) -> f64 {
        self.full_scale / (2.0 * self.max_code() as f64)
    }
}

impl Crossbar {
    /// Analog MVM followed by per-bitline conversion.
    pub fn mvm_codes(&self, voltages: &[f64], spec: &AdcSpec) -> Result<Vec<DigitalCode>> {
        let currents = self.analog_mvm(voltages)?;
        Ok(currents
            .into_iter()
            .map(|i| spec.quantize_unchecked(i))
            .collect())
    }

    /// Codes under the all-`v_max` test vector.
    pub fn test_codes(&self, spec: &AdcSpec) -> Vec<DigitalCode> {
        self.mvm_unchecked(&self.test_vector())
            .into_iter()
            .map(|i| spec.quantize_unchecked(i))
            .collect()
    }
}
