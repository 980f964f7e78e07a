//! Evaluation metrics: absolute error in dB (mean and median; the headline
//! statistic is the median), SNR over complex CSI, and CDF export.

use crate::c64::C64;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Cap applied to infinite/huge SNR values in plots and CDF exports.
pub const SNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeStats {
    pub mean_db: f64,
    pub median_db: f64,
    pub n: usize,
}

/// Mean and median absolute error between dB-valued predictions and truth.
pub fn mae_db(pred: &[f64], truth: &[f64]) -> Result<MaeStats> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::usage(format!(
            "mae_db needs equal nonempty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut errs: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = errs.len();
    let median = if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    };
    Ok(MaeStats {
        mean_db: mean,
        median_db: median,
        n,
    })
}

/// 10 log10(sum |H|^2 / sum |H - H_hat|^2); exact prediction reports +inf.
pub fn snr_db(pred: &[C64], truth: &[C64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::usage("snr_db needs equal nonempty shapes"));
    }
    let signal: f64 = truth.iter().map(|z| z.norm_sq()).sum();
    if signal <= 0.0 {
        return Err(Error::Degenerate("snr_db: all-zero truth".into()));
    }
    let noise: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (*t - *p).norm_sq())
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Sorted (snr_db, cumulative_fraction) pairs with the +inf sentinel capped.
pub fn snr_cdf(snrs: &[f64]) -> Vec<(f64, f64)> {
    let mut vals: Vec<f64> = snrs.iter().map(|s| s.min(SNR_CAP_DB)).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len() as f64;
    vals.into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect()
}

/// One row of the metrics report JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub scene: String,
    pub freq_hz: f64,
    pub mae_mean_db: f64,
    pub mae_median_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub n: usize,
}
