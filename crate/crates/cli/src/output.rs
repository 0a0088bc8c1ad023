//! CSV writers with fixed numeric formatting.
//!
//! Every float column is rendered with 9 significant digits in scientific
//! notation so repeated runs diff cleanly byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use policyopt_core::trainer::MetricsRow;

use crate::error::CliError;

/// 9 significant digits, scientific notation.
pub fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(MetricsRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.update_index,
            fmt9(r.mean_reward),
            fmt9(r.objective_value),
            fmt9(r.policy_entropy_mean),
            fmt9(r.ratio_mean),
            fmt9(r.ratio_max),
            fmt9(r.intra_seq_dispersion_mean),
            fmt9(r.soft_clipped_fraction),
            fmt9(r.grad_norm),
        );
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
