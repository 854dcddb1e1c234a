//! Experiment proposals where the calibrated model is most uncertain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{predictive, CalibrationError, CalibrationResult, KohModel, PredictiveOptions};
use crate::dataset::{Input, HUMIDITY, TEMPERATURE};
use crate::expression::{EvalError, Expr, ParseError};

#[derive(Debug, Error)]
pub enum DoeError {
    #[error("candidate grid is empty")]
    EmptyGrid,
    #[error("asked for {k} proposals from {candidates} candidates")]
    TooMany { k: usize, candidates: usize },
    #[error("desirability {value} at candidate {index} is outside [0, 1]")]
    Desirability { index: usize, value: f64 },
    #[error("{what} has {found} entries for {expected} candidates")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("desirability expression: {0}")]
    Parse(#[from] ParseError),
    #[error("desirability expression: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentProposal {
    pub temperature: f64,
    pub humidity: f64,
    pub mu: f64,
    pub sigma: f64,
    pub score: f64,
    /// Position in the candidate grid.
    pub index: usize,
}

impl ExperimentProposal {
    pub fn input(&self) -> Input {
        Input {
            temperature: self.temperature,
            humidity: self.humidity,
        }
    }
}

pub fn acquisition(sigma: f64, desirability: f64) -> f64 {
    sigma * desirability
}

/// Weight on regions of input space, in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Desirability {
    #[default]
    Uniform,
    /// Expression in `T` and `H`.
    Expression(Expr),
}

impl Desirability {
    pub fn parse(text: &str) -> Result<Self, DoeError> {
        Ok(Desirability::Expression(Expr::parse(text, &[TEMPERATURE, HUMIDITY])?))
    }

    /// Values at every candidate; errors if any falls outside `[0, 1]`.
    pub fn values(&self, candidates: &[Input]) -> Result<Vec<f64>, DoeError> {
        let values = match self {
            Desirability::Uniform => vec![1.0; candidates.len()],
            Desirability::Expression(e) => {
                let c = e.compile(&[TEMPERATURE, HUMIDITY])?;
                let t: Vec<f64> = candidates.iter().map(|x| x.temperature).collect();
                let h: Vec<f64> = candidates.iter().map(|x| x.humidity).collect();
                c.eval_columns(&[&t, &h])
            }
        };
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(DoeError::Desirability { index, value });
        }
        Ok(values)
    }
}

/// Uniform lattice over `bounds` (`[T range, H range]`), `per_dim` points
/// per axis, `T` varying slowest.
pub fn candidate_grid(bounds: [(f64, f64); 2], per_dim: usize) -> Result<Vec<Input>, DoeError> {
    if per_dim == 0 {
        return Err(DoeError::EmptyGrid);
    }
    for (lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(DoeError::Grid(format!("bad range [{lo}, {hi}]")));
        }
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        if per_dim == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..per_dim)
            .map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64)
            .collect()
    };
    let ts = axis(bounds[0]);
    let hs = axis(bounds[1]);
    Ok(ts
        .iter()
        .flat_map(|&t| {
            hs.iter().map(move |&h| Input {
                temperature: t,
                humidity: h,
            })
        })
        .collect())
}

/// Greedy top-`k` by score with spacing: after each pick, candidates closer
/// than `spacing` to it are suppressed. Ties go to the lower index. When
/// suppression leaves fewer than `k` candidates, the remaining picks are
/// taken from the suppressed ones in score order.
pub fn select_proposals(
    candidates: &[Input],
    mu: &[f64],
    sigma: &[f64],
    desirability: &[f64],
    k: usize,
    spacing: f64,
) -> Result<Vec<ExperimentProposal>, DoeError> {
    let n = candidates.len();
    if n == 0 {
        return Err(DoeError::EmptyGrid);
    }
    if k > n {
        return Err(DoeError::TooMany { k, candidates: n });
    }
    for (what, v) in [("mu", mu), ("sigma", sigma), ("desirability", desirability)] {
        if v.len() != n {
            return Err(DoeError::LengthMismatch {
                what,
                expected: n,
                found: v.len(),
            });
        }
    }
    let scores: Vec<f64> = sigma
        .iter()
        .zip(desirability)
        .map(|(s, d)| acquisition(*s, *d))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut picked: Vec<usize> = Vec::with_capacity(k);
    let mut suppressed = vec![false; n];
    for &i in &order {
        if picked.len() == k {
            break;
        }
        if suppressed[i] {
            continue;
        }
        picked.push(i);
        let p = candidates[i];
        for (j, c) in candidates.iter().enumerate() {
            let dt = c.temperature - p.temperature;
            let dh = c.humidity - p.humidity;
            if (dt * dt + dh * dh).sqrt() < spacing {
                suppressed[j] = true;
            }
        }
    }
    for &i in &order {
        if picked.len() == k {
            break;
        }
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    Ok(picked
        .into_iter()
        .map(|i| ExperimentProposal {
            temperature: candidates[i].temperature,
            humidity: candidates[i].humidity,
            mu: mu[i],
            sigma: sigma[i],
            score: scores[i],
            index: i,
        })
        .collect())
}

/// Smaller of the two posterior-mean length scales.
pub fn min_length_scale(model: &KohModel, calib: &CalibrationResult) -> f64 {
    let h = model.hyper(&calib.posterior_mean);
    h.length_scales[0].min(h.length_scales[1])
}

/// Score every candidate by predictive σ × desirability and pick `k`.
pub fn propose(
    model: &KohModel,
    calib: &CalibrationResult,
    candidates: &[Input],
    desirability: &Desirability,
    k: usize,
    options: &PredictiveOptions,
) -> Result<Vec<ExperimentProposal>, DoeError> {
    if candidates.is_empty() {
        return Err(DoeError::EmptyGrid);
    }
    if k > candidates.len() {
        return Err(DoeError::TooMany {
            k,
            candidates: candidates.len(),
        });
    }
    let d = desirability.values(candidates)?;
    let pred = predictive(model, calib, candidates, options)?;
    select_proposals(candidates, &pred.mean, &pred.sd, &d, k, min_length_scale(model, calib))
}
