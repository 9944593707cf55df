//! Online column checking with k-LSB test-vector signatures.
//!
//! When a crossbar is programmed, the all-`v_max` test vector is run through
//! the fault-free array and the `k` least-significant bits of every column's
//! ADC code are kept as that column's signature. Before a payload MVM the
//! test vector is applied again; a column whose low bits no longer match is
//! flagged and rewritten. A re-test then tells soft faults (cleared by the
//! rewrite) from stuck cells (still flagged, reported permanent).
//!
//! A column is flagged exactly when `(faulty_code - golden_code) mod 2^k != 0`,
//! so code changes that are multiples of `2^k` alias and go unnoticed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adc::{AdcSpec, DigitalCode};
use crate::crossbar::Crossbar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardConfig {
    /// Number of code LSBs kept per column.
    pub k: u32,
    /// Test before every MVM. When false, test every `check_interval`-th MVM.
    pub check_every_mvm: bool,
    pub check_interval: u32,
    /// Re-test rounds after reprogramming before a column is declared
    /// permanent.
    pub retry_budget: u32,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            k: 4,
            check_every_mvm: true,
            check_interval: 1,
            retry_budget: 1,
        }
    }
}

impl GuardConfig {
    pub fn with_k(k: u32) -> Self {
        GuardConfig {
            k,
            ..Default::default()
        }
    }

    pub fn validate(&self, adc: &AdcSpec) -> Result<()> {
        check_k(self.k, adc)?;
        if self.retry_budget == 0 {
            return Err(Error::InvalidParameter(
                "retry_budget must be at least 1".into(),
            ));
        }
        if !self.check_every_mvm && self.check_interval == 0 {
            return Err(Error::InvalidParameter(
                "check_interval must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Effective spacing between checks, in MVMs.
    pub fn interval(&self) -> u32 {
        if self.check_every_mvm {
            1
        } else {
            self.check_interval.max(1)
        }
    }
}

fn check_k(k: u32, adc: &AdcSpec) -> Result<()> {
    if k == 0 || k > adc.bits {
        return Err(Error::InvalidParameter(format!(
            "k must lie in 1..={} for a {}-bit ADC, got {k}",
            adc.bits, adc.bits
        )));
    }
    Ok(())
}

/// Golden per-column signatures, held in fault-free digital storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureStore {
    k: u32,
    signatures: Vec<u32>,
}

impl SignatureStore {
    /// Signatures of the crossbar's programmed state: the low `k` bits of
    /// each column's code under the test vector.
    pub fn compute(xbar: &Crossbar, adc: &AdcSpec, k: u32) -> Result<Self> {
        check_k(k, adc)?;
        let signatures = xbar
            .nominal_mvm_unchecked(&xbar.test_vector())
            .into_iter()
            .map(|i| adc.quantize_unchecked(i).lsbs(k))
            .collect();
        Ok(SignatureStore { k, signatures })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn signatures(&self) -> &[u32] {
        &self.signatures
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }
}

/// Outcome of the checks performed for one or more protected MVMs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardReport {
    pub detected_columns: BTreeSet<usize>,
    /// Columns rewritten at least once.
    pub reprogrammed_columns: BTreeSet<usize>,
    /// Columns still flagged after the retry budget was spent.
    pub permanent_columns: BTreeSet<usize>,
    pub test_cycles: u64,
    pub reprogram_events: u64,
}

impl GuardReport {
    pub fn is_clean(&self) -> bool {
        self.detected_columns.is_empty()
            && self.reprogrammed_columns.is_empty()
            && self.permanent_columns.is_empty()
            && self.reprogram_events == 0
    }

    /// Columns whose flag was cleared by reprogramming.
    pub fn corrected_columns(&self) -> BTreeSet<usize> {
        self.reprogrammed_columns
            .difference(&self.permanent_columns)
            .copied()
            .collect()
    }

    pub fn merge(&mut self, other: &GuardReport) {
        self.detected_columns.extend(&other.detected_columns);
        self.reprogrammed_columns
            .extend(&other.reprogrammed_columns);
        self.permanent_columns.extend(&other.permanent_columns);
        self.test_cycles += other.test_cycles;
        self.reprogram_events += other.reprogram_events;
    }
}

/// Columns whose test-vector code no longer matches their signature.
pub fn detect(xbar: &Crossbar, adc: &AdcSpec, store: &SignatureStore) -> Result<BTreeSet<usize>> {
    if store.len() != xbar.cols() {
        return Err(Error::DimensionMismatch {
            what: "signature count",
            expected: xbar.cols(),
            actual: store.len(),
        });
    }
    Ok(flag_columns(&xbar.test_codes(adc), store))
}

fn flag_columns(codes: &[DigitalCode], store: &SignatureStore) -> BTreeSet<usize> {
    codes
        .iter()
        .zip(&store.signatures)
        .enumerate()
        .filter(|(_, (code, sig))| code.lsbs(store.k) != **sig)
        .map(|(j, _)| j)
        .collect()
}

/// Rewrites one column to its programmed conductances; stuck cells stay put.
pub fn reprogram_column(xbar: &mut Crossbar, col: usize) -> Result<()> {
    xbar.reprogram_column(col).map(|_| ())
}

/// Test cycle, repair, then the payload MVM.
///
/// The test vector is applied and every flagged column is rewritten. The
/// test is repeated up to `retry_budget` times; columns that survive every
/// rewrite are reported permanent. The payload always runs afterwards.
pub fn protected_mvm(
    xbar: &mut Crossbar,
    voltages: &[f64],
    adc: &AdcSpec,
    store: &SignatureStore,
    cfg: &GuardConfig,
) -> Result<(Vec<DigitalCode>, GuardReport)> {
    xbar.check_voltages(voltages)?;
    cfg.validate(adc)?;
    if store.k() != cfg.k {
        return Err(Error::InvalidParameter(format!(
            "signature store holds {} LSBs but the guard expects {}",
            store.k(),
            cfg.k
        )));
    }
    let report = check_and_repair(xbar, adc, store, cfg.retry_budget)?;
    let codes = xbar.mvm_codes(voltages, adc)?;
    Ok((codes, report))
}

/// The test/reprogram/re-test sequence on its own.
pub fn check_and_repair(
    xbar: &mut Crossbar,
    adc: &AdcSpec,
    store: &SignatureStore,
    retry_budget: u32,
) -> Result<GuardReport> {
    let mut report = GuardReport {
        test_cycles: 1,
        ..Default::default()
    };
    let mut flagged = detect(xbar, adc, store)?;
    report.detected_columns.extend(&flagged);
    let mut rounds = 0;
    while !flagged.is_empty() && rounds < retry_budget {
        for &col in &flagged {
            xbar.reprogram_column(col)?;
            report.reprogram_events += 1;
            report.reprogrammed_columns.insert(col);
        }
        report.test_cycles += 1;
        rounds += 1;
        flagged = detect(xbar, adc, store)?;
    }
    report.permanent_columns = flagged;
    Ok(report)
}
