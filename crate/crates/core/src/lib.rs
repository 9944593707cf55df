//! Behavioral simulation of ReRAM crossbar matrix-vector multiplication,
//! with fault injection and online detection of faulty columns through
//! k-LSB test-vector signatures.
//!
//! The crate is layered bottom-up:
//!
//! - [`crossbar`] and [`adc`]: the array, Ohm/Kirchhoff MVM and readout.
//! - [`fault`]: stuck-at and soft fault maps.
//! - [`guard`]: signatures, detection and column reprogramming.
//! - [`nn`]: layers, weight mapping onto tiles, crossbar inference.
//! - [`io`]: MNIST IDX files and model directories.
//! - [`campaign`]: seeded sweeps and their CSV/JSON outputs.
//!
//! ```
//! use xbar_guard::{AdcSpec, Crossbar, DeviceParams};
//!
//! let dev = DeviceParams::default();
//! let xbar = Crossbar::uniform(4, 2, dev.g_on, dev).unwrap();
//! let adc = AdcSpec::physical_max(8, 4, &dev).unwrap();
//! let codes = xbar.test_codes(&adc);
//! assert!(codes.iter().all(|c| c.value() == 255));
//! ```

pub mod adc;
pub mod campaign;
pub mod crossbar;
pub mod error;
pub mod fault;
pub mod guard;
pub mod io;
pub mod nn;
pub mod seed;

pub use adc::{AdcSpec, DigitalCode};
pub use crossbar::{Crossbar, DeviceParams};
pub use error::{Error, Result};
pub use fault::{
    apply_faults, column_ground_truth, CellFault, FaultEntry, FaultMap, FaultModel, InjectionConfig,
};
pub use guard::{
    detect, protected_mvm, reprogram_column, GuardConfig, GuardReport, SignatureStore,
};
pub use seed::derive_seed;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/crossbar.md")]
    mod crossbar {}
    #[doc = include_str!("../../../book/src/faults.md")]
    mod faults {}
    #[doc = include_str!("../../../book/src/guard.md")]
    mod guard {}
    #[doc = include_str!("../../../book/src/mapping.md")]
    mod mapping {}
    #[doc = include_str!("../../../book/src/campaign.md")]
    mod campaign {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
