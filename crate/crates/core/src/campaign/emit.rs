use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::campaign::run::CampaignResult;
use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FAULTS_FILE: &str = "faults.csv";

pub const CSV_HEADER: &str =
    "rate,k,trial,accuracy,detection_rate,false_neg_cols,reprograms,permanent_cols,overhead_ratio,seconds";

/// The per-trial CSV, header included.
pub fn results_csv(result: &CampaignResult) -> String {
    let mut out = String::with_capacity(64 * (result.records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &result.records {
        writeln!(
            out,
            "{:.6},{},{},{:.6},{:.6},{},{},{},{:.6},{:.6}",
            r.rate,
            r.k,
            r.trial,
            r.accuracy,
            r.detection_rate,
            r.false_neg_cols,
            r.reprograms,
            r.permanent_cols,
            r.overhead_ratio,
            r.seconds
        )
        .unwrap();
    }
    out
}

fn faults_csv(result: &CampaignResult) -> String {
    let mut out = String::from("rate,k,trial,layer,tile,row,col,kind,value\n");
    for f in &result.faults {
        writeln!(
            out,
            "{:.6},{},{},{},{},{},{},{},{:e}",
            f.rate, f.k, f.trial, f.layer, f.tile, f.row, f.col, f.kind, f.value
        )
        .unwrap();
    }
    out
}

/// Writes `results.csv` and `summary.json` (plus `faults.csv` when the
/// campaign audited faults) into `dir`, creating it if needed. Returns the
/// written paths.
pub fn emit_results(result: &CampaignResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        (dir.join(RESULTS_FILE), results_csv(result)),
        (
            dir.join(SUMMARY_FILE),
            serde_json::to_string_pretty(result)? + "\n",
        ),
    ];
    if result.config.audit_faults {
        files.push((dir.join(FAULTS_FILE), faults_csv(result)));
    }
    let mut written = Vec::new();
    for (path, text) in files {
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
