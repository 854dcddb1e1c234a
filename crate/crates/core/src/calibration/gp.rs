//! Squared-exponential Gaussian process over the model inputs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::dataset::Input;

/// First jitter added to the diagonal when factorization fails.
pub const INITIAL_JITTER: f64 = 1e-8;
/// Escalations (×10 each) after the initial jitter.
pub const JITTER_ESCALATIONS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_var: f64,
    /// Length scales for `T` and `H`.
    pub length_scales: [f64; 2],
    pub noise_var: f64,
}

/// `signal_var · exp(−Σ_d (a_d − b_d)² / (2 ls_d²))`.
pub fn se_kernel(a: &[f64], b: &[f64], signal_var: f64, length_scales: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(length_scales)
        .map(|((x, y), l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum();
    signal_var * (-0.5 * r2).exp()
}

pub(crate) fn point(x: &Input) -> [f64; 2] {
    [x.temperature, x.humidity]
}

fn kernel(a: &[f64; 2], b: &[f64; 2], h: &GpHyper) -> f64 {
    se_kernel(a, b, h.signal_var, &h.length_scales)
}

/// Cholesky factor of `K + noise_var·I` over a fixed set of inputs.
#[derive(Clone)]
pub struct GpFactor {
    chol: Cholesky<f64, Dyn>,
    points: Vec<[f64; 2]>,
    hyper: GpHyper,
    /// Diagonal jitter that was needed, 0 if none.
    pub jitter: f64,
}

impl GpFactor {
    pub fn new(inputs: &[Input], hyper: GpHyper) -> Result<Self, CalibrationError> {
        let points: Vec<[f64; 2]> = inputs.iter().map(point).collect();
        let n = points.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| kernel(&points[i], &points[j], &hyper));
        for i in 0..n {
            k[(i, i)] += hyper.noise_var;
        }
        if let Some(chol) = Cholesky::new(k.clone()) {
            return Ok(GpFactor {
                chol,
                points,
                hyper,
                jitter: 0.0,
            });
        }
        let mut jitter = INITIAL_JITTER;
        for step in 0..=JITTER_ESCALATIONS {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(kj) {
                return Ok(GpFactor {
                    chol,
                    points,
                    hyper,
                    jitter,
                });
            }
            if step < JITTER_ESCALATIONS {
                jitter *= 10.0;
            }
        }
        Err(CalibrationError::Factorization { jitter })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `log N(r | 0, K + noise_var·I)`.
    pub fn log_likelihood(&self, residuals: &[f64]) -> f64 {
        let r = DVector::from_column_slice(residuals);
        let alpha = self.chol.solve(&r);
        let n = residuals.len() as f64;
        -0.5 * r.dot(&alpha) - 0.5 * self.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and latent variance of the discrepancy at `targets`,
    /// given residuals at the factor's inputs.
    pub fn conditional(&self, residuals: &[f64], targets: &[Input]) -> (Vec<f64>, Vec<f64>) {
        let m = targets.len();
        let n = self.points.len();
        if m == 0 {
            return (Vec::new(), Vec::new());
        }
        let r = DVector::from_column_slice(residuals);
        let alpha = self.chol.solve(&r);
        let kstar = DMatrix::from_fn(n, m, |i, j| kernel(&self.points[i], &point(&targets[j]), &self.hyper));
        let mean = kstar.tr_mul(&alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a positive diagonal");
        let var = (0..m)
            .map(|j| {
                let q = v.column(j).norm_squared();
                (self.hyper.signal_var - q).max(0.0)
            })
            .collect();
        (mean.iter().copied().collect(), var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn inp(t: f64, h: f64) -> Input {
        Input {
            temperature: t,
            humidity: h,
        }
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(se_kernel(&[0.3, 0.4], &[0.3, 0.4], 2.5, &[1.0, 1.0]), 2.5);
        assert_eq!(se_kernel(&[0.0], &[1e6], 1.0, &[1.0]), 0.0);
        assert_relative_eq!(
            se_kernel(&[0.0], &[1.0], 1.0, &[1.0]),
            0.606_530_659_712_633_4,
            epsilon = 1e-15
        );
        let a = [0.1, 0.9];
        let b = [0.7, 0.2];
        assert_eq!(se_kernel(&a, &b, 1.3, &[0.5, 2.0]), se_kernel(&b, &a, 1.3, &[0.5, 2.0]));
    }

    #[test]
    fn likelihood_matches_independent_gaussians() {
        // Negligible signal variance: K + vI is effectively vI.
        let xs: Vec<Input> = (0..10).map(|i| inp(i as f64 / 9.0, 0.5)).collect();
        let v = 0.04;
        let hyper = GpHyper {
            signal_var: 1e-14,
            length_scales: [0.3, 0.3],
            noise_var: v,
        };
        let f = GpFactor::new(&xs, hyper).unwrap();
        let r: Vec<f64> = (0..10).map(|i| 0.01 * i as f64).collect();
        let expected: f64 = r
            .iter()
            .map(|x| -0.5 * (2.0 * std::f64::consts::PI * v).ln() - x * x / (2.0 * v))
            .sum();
        assert_relative_eq!(f.log_likelihood(&r), expected, epsilon = 1e-6);
        let zero = vec![0.0; 10];
        let expected0 = -5.0 * (2.0 * std::f64::consts::PI * v).ln();
        assert_relative_eq!(f.log_likelihood(&zero), expected0, epsilon = 1e-6);
    }

    #[test]
    fn jitter_rescues_duplicate_points() {
        let xs = vec![inp(0.5, 0.5); 4];
        let hyper = GpHyper {
            signal_var: 1.0,
            length_scales: [0.2, 0.2],
            noise_var: 0.0,
        };
        let f = GpFactor::new(&xs, hyper).unwrap();
        assert!(f.jitter >= INITIAL_JITTER);
    }

    #[test]
    fn interpolates_with_vanishing_noise() {
        let xs: Vec<Input> = (0..6).map(|i| inp(i as f64 / 5.0, (i * i) as f64 / 25.0)).collect();
        let hyper = GpHyper {
            signal_var: 1.0,
            length_scales: [0.3, 0.3],
            noise_var: 1e-12,
        };
        let r = [0.1, -0.2, 0.3, 0.05, -0.1, 0.2];
        let f = GpFactor::new(&xs, hyper).unwrap();
        let (mean, var) = f.conditional(&r, &xs);
        for ((m, v), y) in mean.iter().zip(&var).zip(&r) {
            assert!((m - y).abs() < 1e-6);
            assert!(*v < 1e-6);
        }
        let (mean, var) = f.conditional(&r, &[inp(50.0, 50.0)]);
        assert!(mean[0].abs() < 1e-12);
        assert_relative_eq!(var[0], 1.0);
    }
}
