//! Block random-walk Metropolis with proposal adaptation during burn-in.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalShape {
    /// Independent gaussian steps scaled by each coordinate's burn-in spread.
    Diagonal,
    /// Correlated gaussian steps shaped by the burn-in covariance.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSettings {
    pub burn_in: usize,
    /// Kept samples after burn-in.
    pub samples: usize,
    /// Iterations per kept sample.
    pub chain_thin: usize,
    pub adapt_interval: usize,
    pub shape: ProposalShape,
    /// Acceptance band targeted by scale adaptation.
    pub target_acceptance: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainRun {
    /// Kept states in sampling coordinates.
    pub samples: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    /// Accepted and proposed moves after burn-in.
    pub accepted: usize,
    pub proposed: usize,
}

impl ChainRun {
    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

struct Block {
    indices: Vec<usize>,
    lambda: f64,
    /// Lower-triangular proposal factor.
    factor: DMatrix<f64>,
    window_accepted: usize,
    window_proposed: usize,
    history: Vec<Vec<f64>>,
    /// Set once the factor comes from the empirical covariance.
    shaped: bool,
}

impl Block {
    fn new(indices: Vec<usize>, init_scales: &[f64]) -> Self {
        let d = indices.len();
        let factor = DMatrix::from_fn(d, d, |i, j| if i == j { init_scales[indices[i]] } else { 0.0 });
        Block {
            indices,
            lambda: 1.0,
            factor,
            window_accepted: 0,
            window_proposed: 0,
            history: Vec::new(),
            shaped: false,
        }
    }

    fn propose<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Vec<f64> {
        let d = self.indices.len();
        let eps = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let step = &self.factor * eps * self.lambda;
        let mut out = state.to_vec();
        for (k, &i) in self.indices.iter().enumerate() {
            out[i] += step[k];
        }
        out
    }

    fn adapt(&mut self, settings: &SamplerSettings) {
        let (lo, hi) = settings.target_acceptance;
        if self.window_proposed > 0 {
            let acc = self.window_accepted as f64 / self.window_proposed as f64;
            if acc < lo || acc > hi {
                self.lambda = (self.lambda * (2.0 * (acc - 0.5 * (lo + hi))).exp()).clamp(1e-6, 1e6);
            }
        }
        self.window_accepted = 0;
        self.window_proposed = 0;

        let d = self.indices.len();
        let n = self.history.len();
        if n < 20 * d.max(1) {
            return;
        }
        let mean: Vec<f64> = (0..d)
            .map(|k| self.history.iter().map(|h| h[k]).sum::<f64>() / n as f64)
            .collect();
        let mut cov = DMatrix::from_fn(d, d, |a, b| {
            self.history
                .iter()
                .map(|h| (h[a] - mean[a]) * (h[b] - mean[b]))
                .sum::<f64>()
                / (n - 1) as f64
        });
        if settings.shape == ProposalShape::Diagonal {
            cov = DMatrix::from_diagonal(&cov.diagonal());
        }
        if cov.diagonal().iter().any(|v| !(*v > 0.0)) {
            return;
        }
        for i in 0..d {
            cov[(i, i)] *= 1.0 + 1e-9;
        }
        let scale = 2.38 * 2.38 / d as f64;
        if let Some(ch) = (cov * scale).cholesky() {
            if !self.shaped {
                self.lambda = 1.0;
                self.shaped = true;
            }
            self.factor = ch.l();
        }
    }
}

/// Run one chain from `start`, updating each block in turn per iteration.
///
/// `target` returns the log density in sampling coordinates; `-inf` marks
/// states outside the support. Scales start at `init_scales` (one per
/// coordinate) and are adapted during burn-in only.
pub fn run_chain<F, R>(
    target: &mut F,
    start: Vec<f64>,
    blocks: &[Vec<usize>],
    init_scales: &[f64],
    settings: &SamplerSettings,
    rng: &mut R,
) -> ChainRun
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut blocks: Vec<Block> = blocks
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| Block::new(b.clone(), init_scales))
        .collect();
    let mut state = start;
    let mut lp = target(&state);
    let thin = settings.chain_thin.max(1);
    let total = settings.burn_in + settings.samples * thin;
    let adapt_from = settings.burn_in / 5;
    let mut run = ChainRun {
        samples: Vec::with_capacity(settings.samples),
        log_density: Vec::with_capacity(settings.samples),
        accepted: 0,
        proposed: 0,
    };

    for iter in 0..total {
        let burning = iter < settings.burn_in;
        for block in blocks.iter_mut() {
            let proposal = block.propose(&state, rng);
            let lp_new = target(&proposal);
            let u: f64 = rng.random();
            let accept = lp_new.is_finite() && (lp_new >= lp || u.ln() < lp_new - lp);
            if accept {
                state = proposal;
                lp = lp_new;
            }
            if burning {
                block.window_proposed += 1;
                block.window_accepted += usize::from(accept);
                if iter >= adapt_from {
                    block.history.push(block.indices.iter().map(|&i| state[i]).collect());
                }
            } else {
                run.proposed += 1;
                run.accepted += usize::from(accept);
            }
        }
        if burning && (iter + 1) % settings.adapt_interval.max(1) == 0 {
            for block in blocks.iter_mut() {
                block.adapt(settings);
            }
        }
        if iter + 1 == settings.burn_in {
            for block in blocks.iter_mut() {
                block.history = Vec::new();
            }
        }
        if !burning && (iter + 1 - settings.burn_in).is_multiple_of(thin) {
            run.samples.push(state.clone());
            run.log_density.push(lp);
        }
    }
    run
}

/// Split-chain potential scale reduction for one parameter. `None` when the
/// chains are too short or the parameter never moves.
pub fn split_r_hat(chains: &[&[f64]]) -> Option<f64> {
    let n = chains.iter().map(|c| c.len()).min()? / 2;
    if n < 2 {
        return None;
    }
    let mut seqs: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        seqs.push(&c[..n]);
        seqs.push(&c[c.len() - n..]);
    }
    let m = seqs.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return None;
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Some((var_plus / w).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn settings(burn_in: usize, samples: usize, thin: usize, shape: ProposalShape) -> SamplerSettings {
        SamplerSettings {
            burn_in,
            samples,
            chain_thin: thin,
            adapt_interval: 100,
            shape,
            target_acceptance: (0.2, 0.4),
        }
    }

    #[test]
    fn correlated_gaussian_covariance() {
        // Target covariance [[1, 0.8], [0.8, 2]].
        let (s11, s12, s22) = (1.0, 0.8, 2.0);
        let det = s11 * s22 - s12 * s12;
        let mut target = |x: &[f64]| -0.5 * (s22 * x[0] * x[0] - 2.0 * s12 * x[0] * x[1] + s11 * x[1] * x[1]) / det;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let run = run_chain(
            &mut target,
            vec![3.0, -3.0],
            &[vec![0, 1]],
            &[0.5, 0.5],
            &settings(5_000, 50_000, 5, ProposalShape::Full),
            &mut rng,
        );
        let n = run.samples.len() as f64;
        let m0 = run.samples.iter().map(|s| s[0]).sum::<f64>() / n;
        let m1 = run.samples.iter().map(|s| s[1]).sum::<f64>() / n;
        let c = |a: usize, b: usize, ma: f64, mb: f64| {
            run.samples.iter().map(|s| (s[a] - ma) * (s[b] - mb)).sum::<f64>() / (n - 1.0)
        };
        let (c11, c12, c22) = (c(0, 0, m0, m0), c(0, 1, m0, m1), c(1, 1, m1, m1));
        assert!((c11 / s11 - 1.0).abs() < 0.05, "{c11}");
        assert!((c12 / s12 - 1.0).abs() < 0.05, "{c12}");
        assert!((c22 / s22 - 1.0).abs() < 0.05, "{c22}");
        let acc = run.acceptance();
        assert!((0.1..0.6).contains(&acc), "{acc}");
    }

    #[test]
    fn support_is_respected() {
        let mut target = |x: &[f64]| {
            if (0.0..=1.0).contains(&x[0]) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let run = run_chain(
            &mut target,
            vec![0.5],
            &[vec![0]],
            &[0.3],
            &settings(1_000, 20_000, 1, ProposalShape::Diagonal),
            &mut rng,
        );
        assert!(run.samples.iter().all(|s| (0.0..=1.0).contains(&s[0])));
        let mean = run.samples.iter().map(|s| s[0]).sum::<f64>() / run.samples.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn same_seed_same_chain() {
        let mut target = |x: &[f64]| -0.5 * x[0] * x[0];
        let s = settings(200, 500, 1, ProposalShape::Diagonal);
        let a = run_chain(
            &mut target,
            vec![1.0],
            &[vec![0]],
            &[1.0],
            &s,
            &mut ChaCha8Rng::seed_from_u64(5),
        );
        let b = run_chain(
            &mut target,
            vec![1.0],
            &[vec![0]],
            &[1.0],
            &s,
            &mut ChaCha8Rng::seed_from_u64(5),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn r_hat_values() {
        let a: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let b: Vec<f64> = (0..1000).map(|i| ((i * 104729) % 1000) as f64 / 1000.0).collect();
        let r = split_r_hat(&[&a, &b]).unwrap();
        assert!(r < 1.01, "{r}");
        let shifted: Vec<f64> = b.iter().map(|v| v + 5.0).collect();
        assert!(split_r_hat(&[&a, &shifted]).unwrap() > 1.5);
        assert_eq!(split_r_hat(&[&[1.0; 10], &[1.0; 10]]), None);
        assert_eq!(split_r_hat(&[&[1.0, 2.0], &[1.0, 2.0]]), None);
    }
}
