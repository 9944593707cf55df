use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crossbar::DeviceParams;
use crate::error::{Error, Result};
use crate::fault::{FaultModel, InjectionConfig};
use crate::guard::GuardConfig;
use crate::nn::mapping::MappingConfig;

/// Test images used when no subset size is given.
pub const DEFAULT_SUBSET: usize = 1000;

/// One fault sweep. Every field has a default, so a config file only needs
/// the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Model directory (manifest plus tensor files).
    pub model: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Leading test images evaluated per trial.
    pub subset: usize,
    /// Square crossbar size.
    pub xbar_size: usize,
    pub adc_bits: u32,
    pub v_max: f64,
    pub g_on: f64,
    pub g_off: f64,
    pub fault_model: FaultModel,
    pub rates: Vec<f64>,
    pub k_values: Vec<u32>,
    pub trials: u64,
    pub seed: u64,
    pub guard: bool,
    /// Test every `check_interval`-th MVM of each crossbar; 1 tests every MVM.
    pub check_interval: u32,
    pub retry_budget: u32,
    /// Worker threads; 0 lets the thread pool choose.
    pub workers: usize,
    /// Results directory for `results.csv` and `summary.json`.
    pub output: PathBuf,
    /// Fill the `seconds` column. Off by default so the CSV is reproducible.
    pub record_timing: bool,
    /// Also write every injected fault to `faults.csv`.
    pub audit_faults: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let device = DeviceParams::default();
        CampaignConfig {
            model: PathBuf::from("models/mlp"),
            test_images: PathBuf::from("data/mnist/t10k-images-idx3-ubyte"),
            test_labels: PathBuf::from("data/mnist/t10k-labels-idx1-ubyte"),
            subset: DEFAULT_SUBSET,
            xbar_size: 128,
            adc_bits: 8,
            v_max: device.v_max,
            g_on: device.g_on,
            g_off: device.g_off,
            fault_model: FaultModel::SoftRedraw,
            rates: vec![0.0, 0.05, 0.1, 0.2],
            k_values: vec![1, 2, 3, 4],
            trials: 5,
            seed: 0,
            guard: true,
            check_interval: 1,
            retry_budget: 1,
            workers: 0,
            output: PathBuf::from("results"),
            record_timing: false,
            audit_faults: false,
        }
    }
}

impl CampaignConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn device(&self) -> DeviceParams {
        DeviceParams {
            g_on: self.g_on,
            g_off: self.g_off,
            v_max: self.v_max,
        }
    }

    pub fn mapping(&self, k: u32) -> MappingConfig {
        MappingConfig {
            device: self.device(),
            xbar_rows: self.xbar_size,
            xbar_cols: self.xbar_size,
            adc_bits: self.adc_bits,
            adc_full_scale: None,
            k,
        }
    }

    pub fn guard_config(&self, k: u32) -> GuardConfig {
        GuardConfig {
            k,
            check_every_mvm: self.check_interval <= 1,
            check_interval: self.check_interval.max(1),
            retry_budget: self.retry_budget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.device().validate()?;
        for &rate in &self.rates {
            InjectionConfig {
                rate,
                model: self.fault_model,
                seed: 0,
            }
            .validate()?;
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.subset == 0 {
            return Err(Error::InvalidParameter("subset must be at least 1".into()));
        }
        if self.check_interval == 0 {
            return Err(Error::InvalidParameter(
                "check_interval must be at least 1".into(),
            ));
        }
        if self.retry_budget == 0 {
            return Err(Error::InvalidParameter(
                "retry_budget must be at least 1".into(),
            ));
        }
        // Device and ADC checks still apply to an empty k sweep.
        self.mapping(1).validate()?;
        for &k in &self.k_values {
            self.mapping(k).validate()?;
        }
        Ok(())
    }
}
