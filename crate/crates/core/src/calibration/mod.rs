//! Bayesian calibration of `θ = {θ_p, θ_d, ρ}` under the observation model
//! `y(x) = g(x, θ) + d(x) + ε`, with `d` a zero-mean squared-exponential GP
//! and `ε` gaussian noise, followed by posterior-predictive forecasting.
//!
//! Sampled parameters are laid out as `θ` followed by the four GP
//! hyperparameters `[signal_var, length_scale_T, length_scale_H, noise_var]`.
//! Log-uniform parameters are sampled on the log scale.

pub mod gp;
pub mod mcmc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub use gp::{se_kernel, GpFactor, GpHyper};
pub use mcmc::{split_r_hat, ProposalShape};

use crate::dataset::{Dataset, Input};
use crate::error::ConfigError;
use crate::prior::{CompositeModel, Mode, ModelEvaluator, PriorError};

pub const HYPER_NAMES: [&str; 4] = ["signal_var", "length_scale_T", "length_scale_H", "noise_var"];

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("covariance factorization failed even with diagonal jitter {jitter:e}")]
    Factorization { jitter: f64 },
    #[error("parameter vector has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("no observations to calibrate against")]
    EmptyData,
    #[error("{predictions} predictions for {observations} observations")]
    LengthMismatch { predictions: usize, observations: usize },
    #[error("post-burn-in acceptance {rate:.4} is below {min}; review the proposal scales and prior ranges")]
    LowAcceptance { rate: f64, min: f64 },
    #[error("no chain start with finite posterior density was found")]
    NoValidStart,
    #[error("calibration result holds no samples")]
    NoSamples,
}

/// Independent prior on one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamPrior {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// Density proportional to `1/v` on `[lo, hi]`, `0 < lo`.
    LogUniform {
        lo: f64,
        hi: f64,
    },
    /// Held at `value`, never sampled.
    Fixed {
        value: f64,
    },
}

impl ParamPrior {
    fn validate(&self, name: &str) -> Result<(), ConfigError> {
        let ok = match *self {
            ParamPrior::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            ParamPrior::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            ParamPrior::LogUniform { lo, hi } => lo > 0.0 && hi.is_finite() && lo < hi,
            ParamPrior::Fixed { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ConfigError::invalid(
                format!("prior.{name}"),
                format!("invalid prior {self:?}"),
            ))
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, ParamPrior::Fixed { .. })
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            ParamPrior::Uniform { lo, hi } | ParamPrior::LogUniform { lo, hi } => (lo..=hi).contains(&v),
            ParamPrior::Gaussian { .. } => v.is_finite(),
            ParamPrior::Fixed { value } => v == value,
        }
    }

    /// Log density in natural coordinates; `-inf` outside the support.
    pub fn log_density(&self, v: f64) -> f64 {
        if !self.contains(v) {
            return f64::NEG_INFINITY;
        }
        match *self {
            ParamPrior::Uniform { lo, hi } => -(hi - lo).ln(),
            ParamPrior::Gaussian { mean, sd } => {
                let z = (v - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            ParamPrior::LogUniform { lo, hi } => -v.ln() - (hi / lo).ln().ln(),
            ParamPrior::Fixed { .. } => 0.0,
        }
    }

    fn is_log(&self) -> bool {
        matches!(self, ParamPrior::LogUniform { .. })
    }

    fn to_sampling(&self, v: f64) -> f64 {
        if self.is_log() {
            v.ln()
        } else {
            v
        }
    }

    fn from_sampling(&self, u: f64) -> f64 {
        if self.is_log() {
            u.exp()
        } else {
            u
        }
    }

    /// `log |dv/du|` of the sampling transform.
    fn log_jacobian(&self, u: f64) -> f64 {
        if self.is_log() {
            u
        } else {
            0.0
        }
    }

    fn initial_step(&self) -> f64 {
        match *self {
            ParamPrior::Uniform { lo, hi } => 0.01 * (hi - lo),
            ParamPrior::Gaussian { sd, .. } => 0.1 * sd,
            ParamPrior::LogUniform { .. } => 0.1,
            ParamPrior::Fixed { .. } => 0.0,
        }
    }

    fn clamp(&self, v: f64) -> f64 {
        match *self {
            ParamPrior::Uniform { lo, hi } | ParamPrior::LogUniform { lo, hi } => v.clamp(lo, hi),
            ParamPrior::Fixed { value } => value,
            ParamPrior::Gaussian { .. } => v,
        }
    }
}

/// Ranges for the default priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    /// `θ_p` is uniform on `θ̂ ± scale·|θ̂|`.
    pub theta_p_scale: f64,
    pub theta_p_min_half_width: f64,
    /// Widened to contain each discovered value ± 1.
    pub theta_d_bounds: (f64, f64),
    pub rho_bounds: (f64, f64),
    pub variance_bounds: (f64, f64),
    pub length_scale_bounds: (f64, f64),
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            theta_p_scale: 3.0,
            theta_p_min_half_width: 1.0,
            theta_d_bounds: (-5.0, 5.0),
            rho_bounds: (0.0, 3.0),
            variance_bounds: (1e-4, 10.0),
            length_scale_bounds: (0.01, 10.0),
        }
    }
}

/// Observations the discrepancy GP is conditioned on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpData {
    pub inputs: Vec<Input>,
    pub targets: Vec<f64>,
}

impl GpData {
    pub fn new(inputs: Vec<Input>, targets: Vec<f64>) -> Result<Self, CalibrationError> {
        if inputs.len() != targets.len() {
            return Err(CalibrationError::LengthMismatch {
                predictions: inputs.len(),
                observations: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(CalibrationError::EmptyData);
        }
        Ok(GpData { inputs, targets })
    }

    pub fn from_dataset(d: &Dataset) -> Result<Self, CalibrationError> {
        GpData::new(d.inputs(), d.targets())
    }

    /// At most `max_points` records, evenly strided in time, always
    /// including the first and last.
    pub fn subsample(d: &Dataset, max_points: usize) -> Result<Self, CalibrationError> {
        let n = d.len();
        if n <= max_points || max_points < 2 {
            return GpData::from_dataset(d);
        }
        let records = d.records();
        let picked: Vec<_> = (0..max_points)
            .map(|i| &records[(i * (n - 1) + (max_points - 1) / 2) / (max_points - 1)])
            .collect();
        GpData::new(
            picked.iter().map(|r| r.input()).collect(),
            picked.iter().map(|r| r.current).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Composite model plus discrepancy GP and parameter priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KohModel {
    pub model: CompositeModel,
    pub theta_priors: Vec<ParamPrior>,
    /// Priors for `[signal_var, length_scale_T, length_scale_H, noise_var]`.
    pub hyper_priors: [ParamPrior; 4],
}

impl KohModel {
    pub fn new(
        model: CompositeModel,
        theta_priors: Vec<ParamPrior>,
        hyper_priors: [ParamPrior; 4],
    ) -> Result<Self, CalibrationError> {
        let names = model.parameter_names();
        if names.len() != theta_priors.len() {
            return Err(CalibrationError::Dimension {
                expected: names.len(),
                found: theta_priors.len(),
            });
        }
        for (p, n) in theta_priors.iter().zip(&names) {
            p.validate(n)?;
        }
        for (p, n) in hyper_priors.iter().zip(HYPER_NAMES) {
            p.validate(n)?;
            let positive = match *p {
                ParamPrior::Uniform { lo, .. } => lo > 0.0,
                ParamPrior::Fixed { value } => value > 0.0,
                ParamPrior::Gaussian { .. } => false,
                ParamPrior::LogUniform { .. } => true,
            };
            if !positive {
                return Err(ConfigError::invalid(
                    format!("prior.{n}"),
                    "GP hyperparameters need a strictly positive support",
                )
                .into());
            }
        }
        Ok(KohModel {
            model,
            theta_priors,
            hyper_priors,
        })
    }

    /// Priors centred on the model's current parameters.
    pub fn with_default_priors(model: CompositeModel, s: &PriorSettings) -> Result<Self, CalibrationError> {
        let mut theta = Vec::new();
        if let Some(p) = &model.prior {
            for (k, v) in p.params.iter().enumerate() {
                if p.is_fixed(k) {
                    theta.push(ParamPrior::Fixed { value: *v });
                } else {
                    let half = (s.theta_p_scale * v.abs()).max(s.theta_p_min_half_width);
                    theta.push(ParamPrior::Uniform {
                        lo: v - half,
                        hi: v + half,
                    });
                }
            }
        }
        let (dlo, dhi) = s.theta_d_bounds;
        for v in model.theta_d() {
            theta.push(ParamPrior::Uniform {
                lo: dlo.min(v - 1.0),
                hi: dhi.max(v + 1.0),
            });
        }
        if model.mode != Mode::Standalone {
            let (lo, hi) = s.rho_bounds;
            theta.push(ParamPrior::Uniform { lo, hi });
        }
        let var = ParamPrior::LogUniform {
            lo: s.variance_bounds.0,
            hi: s.variance_bounds.1,
        };
        let ls = ParamPrior::LogUniform {
            lo: s.length_scale_bounds.0,
            hi: s.length_scale_bounds.1,
        };
        KohModel::new(model, theta, [var, ls, ls, var])
    }

    pub fn theta_len(&self) -> usize {
        self.theta_priors.len()
    }

    pub fn dimension(&self) -> usize {
        self.theta_priors.len() + 4
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.model.parameter_names();
        names.extend(HYPER_NAMES.iter().map(|s| s.to_string()));
        names
    }

    fn priors(&self) -> impl Iterator<Item = &ParamPrior> {
        self.theta_priors.iter().chain(self.hyper_priors.iter())
    }

    pub fn log_prior(&self, params: &[f64]) -> f64 {
        self.priors().zip(params).map(|(p, v)| p.log_density(*v)).sum()
    }

    pub fn hyper(&self, params: &[f64]) -> GpHyper {
        let h = &params[self.theta_len()..];
        GpHyper {
            signal_var: h[0],
            length_scales: [h[1], h[2]],
            noise_var: h[3],
        }
    }

    fn check_dimension(&self, params: &[f64]) -> Result<(), CalibrationError> {
        if params.len() != self.dimension() {
            return Err(CalibrationError::Dimension {
                expected: self.dimension(),
                found: params.len(),
            });
        }
        Ok(())
    }

    /// The composite model at the `θ` part of `params`.
    pub fn model_at(&self, params: &[f64]) -> CompositeModel {
        self.model.with_parameters(&params[..self.theta_len()])
    }
}

/// GP marginal log likelihood of the residuals `y − g(x, θ)`.
pub fn log_likelihood(model: &KohModel, params: &[f64], data: &GpData) -> Result<f64, CalibrationError> {
    model.check_dimension(params)?;
    let mut ev = ModelEvaluator::new(&model.model, &data.inputs)?;
    let g = ev.predict(&params[..model.theta_len()])?;
    let r: Vec<f64> = data.targets.iter().zip(&g).map(|(y, g)| y - g).collect();
    let factor = GpFactor::new(&data.inputs, model.hyper(params))?;
    Ok(factor.log_likelihood(&r))
}

/// Log likelihood plus log prior; `-inf` outside the prior support.
pub fn log_posterior(model: &KohModel, params: &[f64], data: &GpData) -> Result<f64, CalibrationError> {
    model.check_dimension(params)?;
    let lp = model.log_prior(params);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + log_likelihood(model, params, data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub burn_in: usize,
    /// Kept samples per chain.
    pub samples: usize,
    /// Iterations per kept sample.
    pub chain_thin: usize,
    /// Thinning of kept samples for prediction.
    pub thin: usize,
    pub adapt_interval: usize,
    pub proposal: ProposalShape,
    pub target_acceptance: (f64, f64),
    /// Below this post-burn-in acceptance the run fails.
    pub min_acceptance: f64,
    /// Training records the GP is conditioned on, evenly strided in time.
    pub max_gp_points: usize,
    /// Start perturbation in units of the initial proposal step.
    pub start_dispersion: f64,
    pub parallel: bool,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 2,
            burn_in: 10_000,
            samples: 10_000,
            chain_thin: 1,
            thin: 10,
            adapt_interval: 100,
            proposal: ProposalShape::Full,
            target_acceptance: (0.2, 0.4),
            min_acceptance: 0.01,
            max_gp_points: 100,
            start_dispersion: 5.0,
            parallel: true,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chains < 2 {
            return Err(ConfigError::invalid("mcmc.chains", "at least 2 chains are required"));
        }
        if self.samples * self.chain_thin.max(1) < self.burn_in {
            return Err(ConfigError::invalid(
                "mcmc.samples",
                "chain length must be at least twice the burn-in",
            ));
        }
        if self.samples * self.chains < 1000 {
            return Err(ConfigError::invalid(
                "mcmc.samples",
                "at least 1000 post-burn-in samples are required",
            ));
        }
        if self.thin == 0 || self.chain_thin == 0 || self.adapt_interval == 0 {
            return Err(ConfigError::invalid(
                "mcmc.thin",
                "thinning and adapt intervals must be positive",
            ));
        }
        let (lo, hi) = self.target_acceptance;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(ConfigError::invalid("mcmc.target_acceptance", "need 0 < lo < hi < 1"));
        }
        if self.max_gp_points < 2 {
            return Err(ConfigError::invalid("mcmc.max_gp_points", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    /// Kept samples in natural coordinates, laid out as the parameter names.
    pub samples: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub acceptance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub parameter_names: Vec<String>,
    pub chains: Vec<Chain>,
    pub burn_in: usize,
    pub chain_thin: usize,
    pub thin: usize,
    pub acceptance_rate: f64,
    /// Split-chain R̂ per parameter; `None` for fixed parameters.
    pub r_hat: Vec<Option<f64>>,
    pub posterior_mean: Vec<f64>,
    pub conditioning: GpData,
}

impl CalibrationResult {
    pub fn sample_count(&self) -> usize {
        self.chains.iter().map(|c| c.samples.len()).sum()
    }

    /// Every `thin`-th sample of each chain, chains in order.
    pub fn thinned(&self, thin: usize) -> Vec<&[f64]> {
        self.chains
            .iter()
            .flat_map(|c| c.samples.iter().step_by(thin.max(1)).map(Vec::as_slice))
            .collect()
    }

    pub fn max_r_hat(&self) -> Option<f64> {
        self.r_hat.iter().flatten().copied().reduce(f64::max)
    }

    /// Parameters within their prior support at every stored sample.
    pub fn within_support(&self, model: &KohModel) -> bool {
        self.chains.iter().all(|c| {
            c.samples
                .iter()
                .all(|s| model.priors().zip(s).all(|(p, v)| p.contains(*v)))
        })
    }
}

/// Posterior in sampling coordinates, with a small factorization cache.
struct Target<'a> {
    model: &'a KohModel,
    evaluator: ModelEvaluator,
    data: &'a GpData,
    cache: Vec<(GpHyper, GpFactor)>,
}

impl<'a> Target<'a> {
    fn new(model: &'a KohModel, data: &'a GpData) -> Result<Self, CalibrationError> {
        Ok(Target {
            model,
            evaluator: ModelEvaluator::new(&model.model, &data.inputs)?,
            data,
            cache: Vec::with_capacity(2),
        })
    }

    fn natural(&self, u: &[f64]) -> Vec<f64> {
        self.model.priors().zip(u).map(|(p, u)| p.from_sampling(*u)).collect()
    }

    fn factor(&mut self, hyper: GpHyper) -> Option<&GpFactor> {
        if let Some(k) = self.cache.iter().position(|(h, _)| *h == hyper) {
            return Some(&self.cache[k].1);
        }
        let f = GpFactor::new(&self.data.inputs, hyper).ok()?;
        if self.cache.len() == 2 {
            self.cache.remove(0);
        }
        self.cache.push((hyper, f));
        self.cache.last().map(|(_, f)| f)
    }

    fn log_density(&mut self, u: &[f64]) -> f64 {
        let v = self.natural(u);
        let lp = self.model.log_prior(&v);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let jac: f64 = self.model.priors().zip(u).map(|(p, u)| p.log_jacobian(*u)).sum();
        let Ok(g) = self.evaluator.predict(&v[..self.model.theta_len()]) else {
            return f64::NEG_INFINITY;
        };
        let r: Vec<f64> = self.data.targets.iter().zip(&g).map(|(y, g)| y - g).collect();
        let hyper = self.model.hyper(&v);
        let Some(factor) = self.factor(hyper) else {
            return f64::NEG_INFINITY;
        };
        let ll = factor.log_likelihood(&r);
        if ll.is_finite() {
            lp + jac + ll
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Natural-scale centre: current model parameters plus hyperparameters
/// guessed from the residual spread.
fn centre(model: &KohModel, data: &GpData) -> Result<Vec<f64>, CalibrationError> {
    let mut theta = model.model.parameters();
    for (v, p) in theta.iter_mut().zip(&model.theta_priors) {
        *v = p.clamp(*v);
    }
    let g = model.model.with_parameters(&theta).predict(&data.inputs)?;
    let r: Vec<f64> = data.targets.iter().zip(&g).map(|(y, g)| y - g).collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let var = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64).max(1e-6);
    let spread = |f: fn(&Input) -> f64| {
        let (lo, hi) = data
            .inputs
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        (0.3 * (hi - lo)).max(1e-3)
    };
    let guess = [var, spread(|x| x.temperature), spread(|x| x.humidity), 0.1 * var];
    theta.extend(model.hyper_priors.iter().zip(guess).map(|(p, g)| match *p {
        ParamPrior::LogUniform { lo, hi } => g.clamp(lo, hi),
        _ => p.clamp(g),
    }));
    Ok(theta)
}

fn run_one_chain(
    model: &KohModel,
    data: &GpData,
    config: &McmcConfig,
    centre_u: &[f64],
    chain: usize,
) -> Result<mcmc::ChainRun, CalibrationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64 + 1);
    let mut target = Target::new(model, data)?;
    let steps: Vec<f64> = model.priors().map(ParamPrior::initial_step).collect();

    let mut start = None;
    for _ in 0..100 {
        let u: Vec<f64> = centre_u
            .iter()
            .zip(&steps)
            .map(|(c, s)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + config.start_dispersion * s * z
            })
            .collect();
        if target.log_density(&u).is_finite() {
            start = Some(u);
            break;
        }
    }
    let start = match start {
        Some(u) => u,
        None if target.log_density(centre_u).is_finite() => centre_u.to_vec(),
        None => return Err(CalibrationError::NoValidStart),
    };

    let theta_block: Vec<usize> = (0..model.theta_len())
        .filter(|&i| !model.theta_priors[i].is_fixed())
        .collect();
    let hyper_block: Vec<usize> = (0..4)
        .filter(|&k| !model.hyper_priors[k].is_fixed())
        .map(|k| model.theta_len() + k)
        .collect();
    let settings = mcmc::SamplerSettings {
        burn_in: config.burn_in,
        samples: config.samples,
        chain_thin: config.chain_thin,
        adapt_interval: config.adapt_interval,
        shape: config.proposal,
        target_acceptance: config.target_acceptance,
    };
    let mut f = |u: &[f64]| target.log_density(u);
    Ok(mcmc::run_chain(
        &mut f,
        start,
        &[theta_block, hyper_block],
        &steps,
        &settings,
        &mut rng,
    ))
}

/// Adaptive random-walk Metropolis over `θ` and the GP hyperparameters.
pub fn run_mcmc(model: &KohModel, train: &Dataset, config: &McmcConfig) -> Result<CalibrationResult, CalibrationError> {
    config.validate()?;
    let data = GpData::subsample(train, config.max_gp_points)?;
    run_mcmc_on(model, data, config)
}

/// [`run_mcmc`] on an explicit conditioning set.
pub fn run_mcmc_on(model: &KohModel, data: GpData, config: &McmcConfig) -> Result<CalibrationResult, CalibrationError> {
    config.validate()?;
    let centre_nat = centre(model, &data)?;
    let centre_u: Vec<f64> = model
        .priors()
        .zip(&centre_nat)
        .map(|(p, v)| p.to_sampling(*v))
        .collect();

    let run = |c: usize| run_one_chain(model, &data, config, &centre_u, c);
    let runs: Vec<mcmc::ChainRun> = if config.parallel {
        (0..config.chains).into_par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        (0..config.chains).map(run).collect::<Result<_, _>>()?
    };

    let accepted: usize = runs.iter().map(|r| r.accepted).sum();
    let proposed: usize = runs.iter().map(|r| r.proposed).sum();
    let acceptance_rate = if proposed == 0 {
        0.0
    } else {
        accepted as f64 / proposed as f64
    };
    if proposed > 0 && acceptance_rate < config.min_acceptance {
        return Err(CalibrationError::LowAcceptance {
            rate: acceptance_rate,
            min: config.min_acceptance,
        });
    }

    let priors: Vec<ParamPrior> = model.priors().copied().collect();
    let chains: Vec<Chain> = runs
        .iter()
        .map(|r| Chain {
            samples: r
                .samples
                .iter()
                .map(|u| priors.iter().zip(u).map(|(p, u)| p.from_sampling(*u)).collect())
                .collect(),
            log_posterior: r.log_density.clone(),
            acceptance: r.acceptance(),
        })
        .collect();

    let dim = model.dimension();
    let r_hat = (0..dim)
        .map(|k| {
            if priors[k].is_fixed() {
                return None;
            }
            let cols: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.samples.iter().map(|s| s[k]).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            split_r_hat(&refs)
        })
        .collect();
    let total: usize = chains.iter().map(|c| c.samples.len()).sum();
    let posterior_mean = (0..dim)
        .map(|k| {
            chains
                .iter()
                .flat_map(|c| c.samples.iter().map(move |s| s[k]))
                .sum::<f64>()
                / total.max(1) as f64
        })
        .collect();

    Ok(CalibrationResult {
        parameter_names: model.parameter_names(),
        chains,
        burn_in: config.burn_in,
        chain_thin: config.chain_thin,
        thin: config.thin,
        acceptance_rate,
        r_hat,
        posterior_mean,
        conditioning: data,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictiveOptions {
    /// Overrides the thinning stored in the calibration result.
    pub thin: Option<usize>,
    /// Evenly strided cap on the posterior samples used.
    pub max_samples: Option<usize>,
    /// Add the noise variance to every sample's variance.
    pub include_noise: bool,
    pub parallel: bool,
}

impl Default for PredictiveOptions {
    fn default() -> Self {
        PredictiveOptions {
            thin: None,
            max_samples: Some(200),
            include_noise: true,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Posterior samples pooled.
    pub samples: usize,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Posterior predictive at `inputs`, pooled over samples by the law of
/// total variance.
pub fn predictive(
    model: &KohModel,
    result: &CalibrationResult,
    inputs: &[Input],
    options: &PredictiveOptions,
) -> Result<PredictiveDistribution, CalibrationError> {
    let mut picked = result.thinned(options.thin.unwrap_or(result.thin));
    if let Some(cap) = options.max_samples {
        if cap > 0 && picked.len() > cap {
            let n = picked.len();
            picked = (0..cap).map(|i| picked[i * n / cap]).collect();
        }
    }
    if picked.is_empty() {
        return Err(CalibrationError::NoSamples);
    }
    let cond = &result.conditioning;
    let cond_eval = ModelEvaluator::new(&model.model, &cond.inputs)?;
    let target_eval = ModelEvaluator::new(&model.model, inputs)?;
    let n_theta = model.theta_len();

    let per_sample = |evals: &mut (ModelEvaluator, ModelEvaluator), s: &&[f64]| {
        let theta = &s[..n_theta];
        let g_c = evals.0.predict(theta)?;
        let r: Vec<f64> = cond.targets.iter().zip(&g_c).map(|(y, g)| y - g).collect();
        let hyper = model.hyper(s);
        let factor = GpFactor::new(&cond.inputs, hyper)?;
        let (dm, dv) = factor.conditional(&r, inputs);
        let g = evals.1.predict(theta)?;
        let noise = if options.include_noise { hyper.noise_var } else { 0.0 };
        let mean: Vec<f64> = g.iter().zip(&dm).map(|(g, d)| g + d).collect();
        let var: Vec<f64> = dv.iter().map(|v| v + noise).collect();
        Ok::<_, CalibrationError>((mean, var))
    };
    let init = || (cond_eval.clone(), target_eval.clone());
    let draws: Vec<(Vec<f64>, Vec<f64>)> = if options.parallel {
        picked.par_iter().map_init(init, per_sample).collect::<Result<_, _>>()?
    } else {
        let mut e = init();
        picked.iter().map(|s| per_sample(&mut e, s)).collect::<Result<_, _>>()?
    };

    let s = draws.len() as f64;
    let m = inputs.len();
    let mut mean = vec![0.0; m];
    let mut sd = vec![0.0; m];
    for j in 0..m {
        let mu = draws.iter().map(|(a, _)| a[j]).sum::<f64>() / s;
        let within = draws.iter().map(|(_, v)| v[j]).sum::<f64>() / s;
        let between = draws.iter().map(|(a, _)| (a[j] - mu).powi(2)).sum::<f64>() / s;
        mean[j] = mu;
        sd[j] = (within + between).max(0.0).sqrt();
    }
    Ok(PredictiveDistribution {
        mean,
        sd,
        samples: draws.len(),
    })
}

/// Two-sided standard normal quantile for a central interval of `level`.
pub fn z_value(level: f64) -> Result<f64, ConfigError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ConfigError::invalid(
            "level",
            format!("must lie in (0, 1), got {level}"),
        ));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 + 0.5 * level))
}

/// Fraction of observations inside `μ ± z(level)·σ`.
pub fn coverage_check(pred: &PredictiveDistribution, observed: &[f64], level: f64) -> Result<f64, CalibrationError> {
    if pred.len() != observed.len() {
        return Err(CalibrationError::LengthMismatch {
            predictions: pred.len(),
            observations: observed.len(),
        });
    }
    if observed.is_empty() {
        return Err(CalibrationError::EmptyData);
    }
    let z = z_value(level)?;
    let inside = pred
        .mean
        .iter()
        .zip(&pred.sd)
        .zip(observed)
        .filter(|((mu, sd), y)| (*y - *mu).abs() <= z * *sd)
        .count();
    Ok(inside as f64 / observed.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Record;
    use crate::expression::Expr;
    use crate::prior::{compose, PriorModel};
    use approx::assert_relative_eq;

    fn constant_model(c: f64) -> CompositeModel {
        compose(None, Expr::Const(c), Mode::Standalone, 1.0).unwrap()
    }

    fn pinned_hyper(noise_var: f64) -> [ParamPrior; 4] {
        [
            ParamPrior::Fixed { value: 1e-12 },
            ParamPrior::Fixed { value: 0.5 },
            ParamPrior::Fixed { value: 0.5 },
            ParamPrior::Fixed { value: noise_var },
        ]
    }

    fn grid_data(n: usize, y: impl Fn(usize) -> f64) -> GpData {
        let inputs: Vec<Input> = (0..n)
            .map(|i| Input {
                temperature: (i % 7) as f64 / 7.0,
                humidity: i as f64 / n as f64,
            })
            .collect();
        GpData::new(inputs, (0..n).map(y).collect()).unwrap()
    }

    #[test]
    fn prior_densities() {
        let u = ParamPrior::Uniform { lo: -1.0, hi: 3.0 };
        assert_relative_eq!(u.log_density(0.0), -(4f64.ln()));
        assert_eq!(u.log_density(4.0), f64::NEG_INFINITY);
        let l = ParamPrior::LogUniform { lo: 1e-4, hi: 10.0 };
        assert_eq!(l.log_density(0.0), f64::NEG_INFINITY);
        assert!(l.log_density(1.0).is_finite());
        let g = ParamPrior::Gaussian { mean: 1.0, sd: 2.0 };
        assert_relative_eq!(
            g.log_density(1.0),
            -(2f64.ln()) - 0.5 * (2.0 * std::f64::consts::PI).ln()
        );
    }

    #[test]
    fn out_of_support_is_neg_infinity() {
        let m = KohModel::new(
            constant_model(1.0),
            vec![ParamPrior::Uniform { lo: 0.0, hi: 2.0 }],
            pinned_hyper(0.01),
        )
        .unwrap();
        let d = grid_data(10, |_| 1.0);
        let lp = log_posterior(&m, &[5.0, 1e-12, 0.5, 0.5, 0.01], &d).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
        assert!(log_posterior(&m, &[1.0, 1e-12, 0.5, 0.5, 0.01], &d)
            .unwrap()
            .is_finite());
        assert!(matches!(
            log_posterior(&m, &[1.0], &d),
            Err(CalibrationError::Dimension { .. })
        ));
    }

    #[test]
    fn exact_fit_likelihood_is_gaussian_closed_form() {
        let m = KohModel::new(
            constant_model(0.7),
            vec![ParamPrior::Uniform { lo: 0.0, hi: 2.0 }],
            pinned_hyper(0.02),
        )
        .unwrap();
        let d = grid_data(25, |_| 0.7);
        let ll = log_likelihood(&m, &[0.7, 1e-12, 0.5, 0.5, 0.02], &d).unwrap();
        let expected = 25.0 * -0.5 * (2.0 * std::f64::consts::PI * 0.02).ln();
        assert_relative_eq!(ll, expected, epsilon = 1e-6);
    }

    #[test]
    fn more_noise_helps_large_residuals() {
        let m = KohModel::new(
            constant_model(0.0),
            vec![ParamPrior::Uniform { lo: -1.0, hi: 1.0 }],
            pinned_hyper(0.01),
        )
        .unwrap();
        let d = grid_data(20, |i| if i % 2 == 0 { 3.0 } else { -3.0 });
        let a = log_likelihood(&m, &[0.0, 1e-12, 0.5, 0.5, 0.01], &d).unwrap();
        let b = log_likelihood(&m, &[0.0, 1e-12, 0.5, 0.5, 0.02], &d).unwrap();
        assert!(b > a);
    }

    #[test]
    fn default_priors_cover_the_model() {
        let prior = PriorModel::butler_volmer([0.5, 0.3, 0.2, -0.4]);
        let corr = Expr::parse("7.5*H - 0.7", &["H"]).unwrap();
        let model = compose(Some(prior), corr, Mode::Multiplicative, 1.0).unwrap();
        let koh = KohModel::with_default_priors(model.clone(), &PriorSettings::default()).unwrap();
        assert_eq!(koh.dimension(), 4 + 2 + 1 + 4);
        assert_eq!(koh.theta_priors[0], ParamPrior::Uniform { lo: -1.0, hi: 2.0 });
        assert_eq!(koh.theta_priors[4], ParamPrior::Uniform { lo: -5.0, hi: 8.5 });
        assert_eq!(koh.theta_priors[6], ParamPrior::Uniform { lo: 0.0, hi: 3.0 });
        assert!(koh
            .theta_priors
            .iter()
            .zip(model.parameters())
            .all(|(p, v)| p.contains(v)));
        let names = koh.parameter_names();
        assert_eq!(names[4], "theta_d0");
        assert_eq!(names[6], "rho");
        assert_eq!(names[10], "noise_var");
    }

    #[test]
    fn subsample_is_even_and_bounded() {
        let records = (0..1000).map(|i| Record::new(i as f64, 0.0, 0.0, i as f64)).collect();
        let d = Dataset::from_records(records).unwrap();
        let s = GpData::subsample(&d, 100).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.targets[0], 0.0);
        assert_eq!(s.targets[99], 999.0);
        assert!(s.targets.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(GpData::subsample(&d, 5000).unwrap().len(), 1000);
    }

    #[test]
    fn z_values() {
        assert_relative_eq!(z_value(0.95).unwrap(), 1.959_963_984_540_054, epsilon = 1e-9);
        assert!(z_value(1.0).is_err());
    }

    #[test]
    fn coverage_extremes() {
        let wide = PredictiveDistribution {
            mean: vec![0.0; 3],
            sd: vec![1e300; 3],
            samples: 1,
        };
        assert_eq!(coverage_check(&wide, &[1.0, -5.0, 100.0], 0.95).unwrap(), 1.0);
        let tight = PredictiveDistribution {
            mean: vec![0.0; 3],
            sd: vec![0.0; 3],
            samples: 1,
        };
        assert_eq!(coverage_check(&tight, &[1.0, -5.0, 100.0], 0.95).unwrap(), 0.0);
        assert!(matches!(
            coverage_check(&tight, &[1.0], 0.95),
            Err(CalibrationError::LengthMismatch { .. })
        ));
    }

    fn quick_config(seed: u64) -> McmcConfig {
        McmcConfig {
            burn_in: 500,
            samples: 1000,
            parallel: false,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn mcmc_is_deterministic_and_in_support() {
        let m = KohModel::new(
            constant_model(0.0),
            vec![ParamPrior::Uniform { lo: -2.0, hi: 2.0 }],
            [
                ParamPrior::LogUniform { lo: 1e-4, hi: 1.0 },
                ParamPrior::Fixed { value: 0.3 },
                ParamPrior::Fixed { value: 0.3 },
                ParamPrior::LogUniform { lo: 1e-4, hi: 1.0 },
            ],
        )
        .unwrap();
        let d = grid_data(30, |i| 0.5 + 0.05 * ((i * 37) % 11) as f64 / 11.0);
        let a = run_mcmc_on(&m, d.clone(), &quick_config(3)).unwrap();
        let b = run_mcmc_on(&m, d.clone(), &quick_config(3)).unwrap();
        assert_eq!(a, b);
        let par = McmcConfig {
            parallel: true,
            ..quick_config(3)
        };
        assert_eq!(a, run_mcmc_on(&m, d, &par).unwrap());
        assert!(a.within_support(&m));
        assert_eq!(a.sample_count(), 2000);
        assert_eq!(a.r_hat[2], None);
        assert!(a.r_hat[0].is_some());
    }

    #[test]
    fn flat_likelihood_samples_the_prior() {
        // Vanishing residual information: the chain should return the prior.
        let m = KohModel::new(
            constant_model(0.0),
            vec![ParamPrior::Uniform { lo: 1.0, hi: 3.0 }],
            pinned_hyper(1e8),
        )
        .unwrap();
        let d = grid_data(5, |_| 0.0);
        let cfg = McmcConfig {
            burn_in: 2000,
            samples: 10_000,
            ..quick_config(8)
        };
        let r = run_mcmc_on(&m, d, &cfg).unwrap();
        let mean = r.posterior_mean[0];
        assert!((mean - 2.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn single_sample_pooling_is_exact() {
        let m = KohModel::new(
            constant_model(0.2),
            vec![ParamPrior::Uniform { lo: -1.0, hi: 1.0 }],
            [
                ParamPrior::Fixed { value: 0.5 },
                ParamPrior::Fixed { value: 0.3 },
                ParamPrior::Fixed { value: 0.3 },
                ParamPrior::Fixed { value: 0.01 },
            ],
        )
        .unwrap();
        let d = grid_data(15, |i| (i as f64 / 5.0).sin());
        let sample = vec![0.2, 0.5, 0.3, 0.3, 0.01];
        let result = CalibrationResult {
            parameter_names: m.parameter_names(),
            chains: vec![Chain {
                samples: vec![sample.clone()],
                log_posterior: vec![0.0],
                acceptance: 1.0,
            }],
            burn_in: 0,
            chain_thin: 1,
            thin: 1,
            acceptance_rate: 1.0,
            r_hat: vec![None; 5],
            posterior_mean: sample.clone(),
            conditioning: d.clone(),
        };
        let targets = vec![
            Input {
                temperature: 0.33,
                humidity: 0.61,
            },
            Input {
                temperature: 40.0,
                humidity: 40.0,
            },
        ];
        let pred = predictive(&m, &result, &targets, &PredictiveOptions::default()).unwrap();
        let r: Vec<f64> = d.targets.iter().map(|y| y - 0.2).collect();
        let factor = GpFactor::new(&d.inputs, m.hyper(&sample)).unwrap();
        let (dm, dv) = factor.conditional(&r, &targets);
        assert_eq!(pred.mean[0], 0.2 + dm[0]);
        assert_eq!(pred.sd[0], (dv[0] + 0.01).sqrt());
        // Far from the data the prior variance returns.
        assert_relative_eq!(pred.sd[1] * pred.sd[1], 0.51, epsilon = 1e-12);
        assert_relative_eq!(pred.mean[1], 0.2, epsilon = 1e-12);
    }
}
