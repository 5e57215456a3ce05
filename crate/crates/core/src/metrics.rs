//! Regression error metrics and the published-table consistency audit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// MSE / MAE / RMSE over one prediction set. `rmse` is always computed as
/// `sqrt(mse)`, never estimated independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub split: String,
    pub count: usize,
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Element-wise mean over all `N x A` residuals, accumulated in f64.
pub fn compute_metrics(
    preds: &Matrix,
    targets: &Matrix,
    model: &str,
    split: &str,
) -> Result<MetricsReport> {
    if preds.rows() != targets.rows() || preds.cols() != targets.cols() {
        return Err(Error::ShapeMismatch(format!(
            "metrics over {}x{} predictions vs {}x{} targets",
            preds.rows(),
            preds.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if preds.rows() == 0 || preds.cols() == 0 {
        return Err(Error::Config("metrics need at least one residual".into()));
    }
    let mut sq = 0.0f64;
    let mut ab = 0.0f64;
    for (&p, &t) in preds.data().iter().zip(targets.data()) {
        let d = p as f64 - t as f64;
        sq += d * d;
        ab += d.abs();
    }
    let n = preds.data().len() as f64;
    let mse = sq / n;
    Ok(MetricsReport {
        model: model.to_string(),
        split: split.to_string(),
        count: preds.rows(),
        mse,
        mae: ab / n,
        rmse: mse.sqrt(),
    })
}

/// One audited (mse, rmse) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub label: String,
    pub mse: f64,
    pub rmse: f64,
    pub sqrt_mse: f64,
    /// Relative deviation `|sqrt(mse) - rmse| / max(sqrt(mse), rmse)`.
    pub deviation: f64,
    pub flagged: bool,
}

/// Default rounding tolerance for published tables.
pub const CONSISTENCY_TOLERANCE: f64 = 0.05;

/// Audit externally reported (mse, rmse) pairs: flag any pair whose RMSE
/// deviates from `sqrt(mse)` by more than `tolerance` relative.
pub fn check_table_consistency(
    pairs: &[(String, f64, f64)],
    tolerance: f64,
) -> Result<Vec<ConsistencyRow>> {
    if !(tolerance > 0.0) {
        return Err(Error::Config("consistency tolerance must be positive".into()));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (label, mse, rmse) in pairs {
        if *mse < 0.0 || *rmse < 0.0 || !mse.is_finite() || !rmse.is_finite() {
            return Err(Error::Config(format!(
                "row {:?}: mse and rmse must be non-negative reals, got ({}, {})",
                label, mse, rmse
            )));
        }
        let sqrt_mse = mse.sqrt();
        let denom = sqrt_mse.max(*rmse);
        let deviation = if denom > 0.0 {
            (sqrt_mse - rmse).abs() / denom
        } else {
            0.0
        };
        out.push(ConsistencyRow {
            label: label.clone(),
            mse: *mse,
            rmse: *rmse,
            sqrt_mse,
            deviation,
            flagged: deviation > tolerance,
        });
    }
    Ok(out)
}

/// Format with a fixed number of significant digits (plain notation).
pub fn format_sig(value: f64, digits: usize) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return format!("{value}");
    }
    let exp = value.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, value)
}
