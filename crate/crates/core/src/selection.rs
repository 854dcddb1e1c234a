//! Model-quality metrics and candidate ranking.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::Mode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("length mismatch: {observed} observations, {predicted} predictions")]
    LengthMismatch { observed: usize, predicted: usize },
    #[error("no observations")]
    Empty,
    #[error("observations have zero variance")]
    DegenerateVariance,
    #[error("BIC needs at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("residual sum of squares is zero (perfect fit); BIC is -inf")]
    PerfectFit,
    #[error("baseline R² must be positive, got {0}")]
    NonPositiveBaseline(f64),
}

fn check(y: &[f64], yhat: &[f64]) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch {
            observed: y.len(),
            predicted: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn rss(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Coefficient of determination `1 − RSS/TSS`. May be negative.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    let rss = rss(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if tss == 0.0 {
        return Err(MetricError::DegenerateVariance);
    }
    Ok(1.0 - rss / tss)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    Ok((rss(y, yhat)? / y.len() as f64).sqrt())
}

/// `n·ln(RSS/n) + k·ln(n)`; lower is better.
pub fn bic(y: &[f64], yhat: &[f64], k: usize) -> Result<f64, MetricError> {
    bic_from_rss(y.len(), rss(y, yhat)?, k)
}

pub fn bic_from_rss(n: usize, rss: f64, k: usize) -> Result<f64, MetricError> {
    if n < 2 {
        return Err(MetricError::TooFew(n));
    }
    if rss <= 0.0 {
        return Err(MetricError::PerfectFit);
    }
    let n_f = n as f64;
    Ok(n_f * (rss / n_f).ln() + k as f64 * n_f.ln())
}

/// Floor on the mean squared error in [`floored_bic`], so exact fits stay finite.
pub const BIC_MSE_FLOOR: f64 = 1e-24;

/// [`bic_from_rss`] with the mean squared error floored at [`BIC_MSE_FLOOR`].
pub fn floored_bic(n: usize, rss: f64, k: usize) -> Result<f64, MetricError> {
    bic_from_rss(n, rss.max(BIC_MSE_FLOOR * n as f64), k)
}

/// Free-parameter count entering the BIC penalty.
pub fn parameter_count(mode: Mode, prior_params: usize, constants: usize, count_rho: bool) -> usize {
    match mode {
        Mode::Standalone => constants,
        _ => constants + prior_params + usize::from(count_rho),
    }
}

/// `V[%] = (R²_new / R²_baseline − 1) × 100`.
pub fn improvement_percent(r2_baseline: f64, r2_new: f64) -> Result<f64, MetricError> {
    if !(r2_baseline > 0.0) {
        return Err(MetricError::NonPositiveBaseline(r2_baseline));
    }
    Ok((r2_new / r2_baseline - 1.0) * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub rmse: f64,
    pub bic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_percent: Option<f64>,
}

impl Metrics {
    pub fn compute(y: &[f64], yhat: &[f64], k: usize, r2_baseline: Option<f64>) -> Result<Metrics, MetricError> {
        let r2 = r_squared(y, yhat)?;
        Ok(Metrics {
            r2,
            rmse: rmse(y, yhat)?,
            bic: floored_bic(y.len(), rss(y, yhat)?, k)?,
            v_percent: r2_baseline.map(|b| improvement_percent(b, r2)).transpose()?,
        })
    }

    /// R² to 3 decimals.
    pub fn r2_display(&self) -> String {
        format!("{:.3}", self.r2)
    }

    /// V[%] to the nearest integer.
    pub fn v_display(&self) -> Option<String> {
        self.v_percent.map(|v| format!("{:.0}", v))
    }
}

/// Anything that can be placed in a ranked candidate table.
pub trait Rankable {
    fn bic(&self) -> f64;
    fn node_count(&self) -> usize;
    fn rendered(&self) -> &str;
}

fn rank_cmp<T: Rankable>(a: &T, b: &T) -> Ordering {
    a.bic()
        .total_cmp(&b.bic())
        .then(a.node_count().cmp(&b.node_count()))
        .then_with(|| a.rendered().cmp(b.rendered()))
}

/// Sort by BIC ascending, then node count, then rendered form.
pub fn rank<T: Rankable>(mut candidates: Vec<T>) -> Vec<T> {
    candidates.sort_by(rank_cmp);
    candidates
}
