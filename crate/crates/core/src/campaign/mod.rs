//! Seeded fault sweeps over a mapped model and their result files.
//!
//! Every `(rate, k, trial)` item clones a freshly programmed model, injects
//! faults on every crossbar from `derive_seed(seed, [trial, tile])`, and runs
//! the evaluation subset. Because the child seeds ignore `rate` and `k`, all
//! k values of a trial see the same fault maps, and the maps at a lower rate
//! are subsets of those at a higher one. Results do not depend on the worker
//! count.

pub mod config;
pub mod emit;
pub mod histogram;
pub mod run;

pub use config::{CampaignConfig, DEFAULT_SUBSET};
pub use emit::{emit_results, results_csv, CSV_HEADER, RESULTS_FILE, SUMMARY_FILE};
pub use histogram::{adc_histogram, adc_histogram_from_dir};
pub use run::{
    run_campaign, run_campaign_with, CampaignResult, MeanStd, PointSummary, TrialRecord,
};
