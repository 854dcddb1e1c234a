//! Parametric prior models, maximum-likelihood fitting, and composition with
//! a discovered correction term into `g(x, θ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Input, HUMIDITY, INPUT_VARIABLES, TEMPERATURE};
use crate::expression::{guarded_exp, saturate, CompiledExpr, EvalError, Expr, ParseError};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Floor applied to temperature before evaluating `θ/T`.
pub const TEMPERATURE_FLOOR: f64 = 1e-3;
pub const DEFAULT_PARAM_BOUNDS: (f64, f64) = (-5.0, 5.0);
/// Extra variable available to constraint expressions: the model output.
pub const MODEL_OUTPUT: &str = "g";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriorError {
    #[error("temperature {0} is outside the evaluable domain")]
    Domain(f64),
    #[error("prior expects {expected} parameters, found {found}")]
    ParameterCount { expected: usize, found: usize },
    #[error("parameter {index}: bounds [{lo}, {hi}] are not ordered")]
    Bounds { index: usize, lo: f64, hi: f64 },
    #[error("{0}")]
    Mode(String),
    #[error("correction uses `{0}`, which is not a model input")]
    UndeclaredVariable(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training data is empty")]
    EmptyTrain,
    #[error("objective is non-finite at every restart")]
    NoFiniteStart,
}

/// `θ₀·exp(θ₁/T) + θ₂·exp(θ₃/T)` with `T` floored at [`TEMPERATURE_FLOOR`].
pub fn butler_volmer(temperature: f64, theta: &[f64; 4]) -> Result<f64, PriorError> {
    if !temperature.is_finite() {
        return Err(PriorError::Domain(temperature));
    }
    let t = temperature.max(TEMPERATURE_FLOOR);
    let a = saturate(theta[0] * guarded_exp(theta[1] / t));
    let b = saturate(theta[2] * guarded_exp(theta[3] / t));
    Ok(saturate(a + b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PriorForm {
    ButlerVolmer,
    /// User expression over `T`, `H` and the named parameters.
    Expression {
        expression: Expr,
        parameters: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub form: PriorForm,
    pub params: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    /// Parameters held at their current value during fitting.
    #[serde(default)]
    pub fixed: Vec<bool>,
}

impl PriorModel {
    pub fn butler_volmer(params: [f64; 4]) -> Self {
        PriorModel {
            form: PriorForm::ButlerVolmer,
            params: params.to_vec(),
            bounds: vec![DEFAULT_PARAM_BOUNDS; 4],
            fixed: vec![false; 4],
        }
    }

    /// Custom prior such as `a*exp(b/T)` with parameters `["a", "b"]`.
    pub fn expression(
        text: &str,
        parameters: &[&str],
        initial: &[f64],
        bounds: Option<Vec<(f64, f64)>>,
    ) -> Result<Self, PriorError> {
        let mut vars: Vec<&str> = INPUT_VARIABLES.to_vec();
        vars.extend_from_slice(parameters);
        let expression = Expr::parse(text, &vars)?;
        let model = PriorModel {
            form: PriorForm::Expression {
                expression,
                parameters: parameters.iter().map(|s| s.to_string()).collect(),
            },
            params: initial.to_vec(),
            bounds: bounds.unwrap_or_else(|| vec![DEFAULT_PARAM_BOUNDS; parameters.len()]),
            fixed: vec![false; parameters.len()],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn parameter_count(&self) -> usize {
        match &self.form {
            PriorForm::ButlerVolmer => 4,
            PriorForm::Expression { parameters, .. } => parameters.len(),
        }
    }

    pub fn free_parameter_count(&self) -> usize {
        (0..self.params.len()).filter(|k| !self.is_fixed(*k)).count()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        match &self.form {
            PriorForm::ButlerVolmer => (0..4).map(|k| format!("theta_p{k}")).collect(),
            PriorForm::Expression { parameters, .. } => parameters.clone(),
        }
    }

    pub fn is_fixed(&self, index: usize) -> bool {
        self.fixed.get(index).copied().unwrap_or(false)
    }

    pub fn fix(mut self, index: usize) -> Self {
        if self.fixed.len() < self.params.len() {
            self.fixed.resize(self.params.len(), false);
        }
        self.fixed[index] = true;
        self
    }

    pub fn with_params(&self, params: &[f64]) -> Self {
        PriorModel {
            params: params.to_vec(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let expected = self.parameter_count();
        for found in [self.params.len(), self.bounds.len()] {
            if found != expected {
                return Err(PriorError::ParameterCount { expected, found });
            }
        }
        for (index, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(PriorError::Bounds {
                    index,
                    lo: *lo,
                    hi: *hi,
                });
            }
        }
        Ok(())
    }

    /// Evaluate the prior with an explicit parameter vector.
    pub fn evaluate_with(&self, params: &[f64], inputs: &[Input]) -> Result<Vec<f64>, PriorError> {
        match &self.form {
            PriorForm::ButlerVolmer => {
                let theta: [f64; 4] = params.try_into().map_err(|_| PriorError::ParameterCount {
                    expected: 4,
                    found: params.len(),
                })?;
                inputs.iter().map(|x| butler_volmer(x.temperature, &theta)).collect()
            }
            PriorForm::Expression { expression, parameters } => {
                let mut vars: Vec<&str> = INPUT_VARIABLES.to_vec();
                vars.extend(parameters.iter().map(String::as_str));
                let program = expression.compile(&vars)?;
                let mut row = vec![0.0; vars.len()];
                row[2..].copy_from_slice(params);
                Ok(inputs
                    .iter()
                    .map(|x| {
                        row[0] = x.temperature;
                        row[1] = x.humidity;
                        program.eval(&row)
                    })
                    .collect())
            }
        }
    }

    pub fn evaluate(&self, inputs: &[Input]) -> Result<Vec<f64>, PriorError> {
        self.evaluate_with(&self.params, inputs)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MleOptions {
    pub restarts: usize,
    pub seed: u64,
    pub parallel: bool,
    #[serde(skip)]
    pub nelder_mead: NelderMeadOptions,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            restarts: 20,
            seed: 0,
            parallel: true,
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub prior: PriorModel,
    pub sse: f64,
    /// Final SSE of each restart, in restart order.
    pub restart_sse: Vec<f64>,
}

fn sse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, y)| (p - y) * (p - y)).sum()
}

/// Restart `r` starts from the model's current parameters when `r == 0` and
/// from a uniform draw inside the bounds otherwise. Each restart has its own
/// RNG stream, so a run with more restarts extends the same sequence.
fn restart_start(prior: &PriorModel, seed: u64, r: usize) -> Vec<f64> {
    if r == 0 {
        return prior.params.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    prior
        .params
        .iter()
        .zip(&prior.bounds)
        .enumerate()
        .map(|(k, (v, (lo, hi)))| {
            if prior.is_fixed(k) {
                *v
            } else {
                rng.random_range(*lo..*hi)
            }
        })
        .collect()
}

/// Least-squares (gaussian maximum-likelihood) fit of the free prior
/// parameters with multi-start Nelder–Mead.
pub fn fit_mle(prior: &PriorModel, train: &Dataset, opts: &MleOptions) -> Result<MleFit, PriorError> {
    prior.validate()?;
    if train.is_empty() {
        return Err(PriorError::EmptyTrain);
    }
    let inputs = train.inputs();
    let y = train.targets();
    let free: Vec<usize> = (0..prior.params.len()).filter(|k| !prior.is_fixed(*k)).collect();
    let bounds: Vec<(f64, f64)> = free.iter().map(|k| prior.bounds[*k]).collect();

    let run = |r: usize| -> (Vec<f64>, f64) {
        let start = restart_start(prior, opts.seed, r);
        let full = |z: &[f64]| {
            let mut p = start.clone();
            for (k, v) in free.iter().zip(z) {
                p[*k] = *v;
            }
            p
        };
        let objective = |z: &[f64]| match prior.evaluate_with(&full(z), &inputs) {
            Ok(pred) => sse(&pred, &y),
            Err(_) => f64::NAN,
        };
        let z0: Vec<f64> = free.iter().map(|k| start[*k]).collect();
        let m = nelder_mead(objective, &z0, &bounds, &opts.nelder_mead);
        (full(&m.x), m.f)
    };

    let n = opts.restarts.max(1);
    let results: Vec<(Vec<f64>, f64)> = if opts.parallel {
        (0..n).into_par_iter().map(run).collect()
    } else {
        (0..n).map(run).collect()
    };

    let restart_sse: Vec<f64> = results.iter().map(|r| r.1).collect();
    let (best_params, best_sse) = results
        .into_iter()
        .filter(|(_, f)| *f < f64::MAX)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(PriorError::NoFiniteStart)?;
    Ok(MleFit {
        prior: prior.with_params(&best_params),
        sse: best_sse,
        restart_sse,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Additive,
    Multiplicative,
    Standalone,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "additive" => Ok(Mode::Additive),
            "multiplicative" => Ok(Mode::Multiplicative),
            "standalone" => Ok(Mode::Standalone),
            other => Err(format!(
                "unknown mode `{other}` (expected additive, multiplicative or standalone)"
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Additive => "additive",
            Mode::Multiplicative => "multiplicative",
            Mode::Standalone => "standalone",
        })
    }
}

/// Combine prior output, weight and correction output for one point.
#[inline]
pub fn combine(mode: Mode, prior: f64, rho: f64, correction: f64) -> f64 {
    match mode {
        Mode::Additive => saturate(prior + saturate(rho * correction)),
        Mode::Multiplicative => saturate(saturate(prior * rho) * correction),
        Mode::Standalone => correction,
    }
}

/// The full model `g(x, θ)` with `θ = {θ_p, θ_d, ρ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeModel {
    pub mode: Mode,
    pub prior: Option<PriorModel>,
    pub correction: Expr,
    pub rho: f64,
}

pub fn compose(
    prior: Option<PriorModel>,
    correction: Expr,
    mode: Mode,
    rho: f64,
) -> Result<CompositeModel, PriorError> {
    match (mode, &prior) {
        (Mode::Standalone, Some(_)) => return Err(PriorError::Mode("standalone mode takes no prior model".into())),
        (Mode::Additive | Mode::Multiplicative, None) => {
            return Err(PriorError::Mode(format!("{mode} mode requires a prior model")))
        }
        _ => {}
    }
    if let Some(p) = &prior {
        p.validate()?;
    }
    for v in correction.variables() {
        if !INPUT_VARIABLES.contains(&v.as_str()) {
            return Err(PriorError::UndeclaredVariable(v));
        }
    }
    Ok(CompositeModel {
        mode,
        prior,
        correction,
        rho,
    })
}

impl CompositeModel {
    /// Correction constants `θ_d` in pre-order.
    pub fn theta_d(&self) -> Vec<f64> {
        self.correction.constants()
    }

    /// `[θ_p..., θ_d..., ρ]`, or just `θ_d` in standalone mode.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(p) = &self.prior {
            out.extend_from_slice(&p.params);
        }
        out.extend(self.theta_d());
        if self.mode != Mode::Standalone {
            out.push(self.rho);
        }
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = &self.prior {
            out.extend(p.parameter_names());
        }
        out.extend((0..self.correction.constant_count()).map(|k| format!("theta_d{k}")));
        if self.mode != Mode::Standalone {
            out.push("rho".to_string());
        }
        out
    }

    pub fn with_parameters(&self, params: &[f64]) -> CompositeModel {
        let n_p = self.prior.as_ref().map_or(0, |p| p.params.len());
        let n_d = self.correction.constant_count();
        let prior = self.prior.as_ref().map(|p| p.with_params(&params[..n_p]));
        let correction = self.correction.with_constants(&params[n_p..n_p + n_d]);
        let rho = if self.mode == Mode::Standalone {
            self.rho
        } else {
            params[n_p + n_d]
        };
        CompositeModel {
            mode: self.mode,
            prior,
            correction,
            rho,
        }
    }

    pub fn predict(&self, inputs: &[Input]) -> Result<Vec<f64>, PriorError> {
        let mut ev = ModelEvaluator::new(self, inputs)?;
        ev.predict(&self.parameters())
    }

    pub fn evaluator(&self, inputs: &[Input]) -> Result<ModelEvaluator, PriorError> {
        ModelEvaluator::new(self, inputs)
    }
}

/// Repeated evaluation of one model structure on fixed inputs under varying
/// parameter vectors.
#[derive(Clone, Debug)]
pub struct ModelEvaluator {
    mode: Mode,
    prior: Option<PriorModel>,
    correction: CompiledExpr,
    temperature: Vec<f64>,
    humidity: Vec<f64>,
    inputs: Vec<Input>,
    n_prior: usize,
    n_const: usize,
}

impl ModelEvaluator {
    pub fn new(model: &CompositeModel, inputs: &[Input]) -> Result<Self, PriorError> {
        let correction = model.correction.compile(&[TEMPERATURE, HUMIDITY])?;
        Ok(ModelEvaluator {
            mode: model.mode,
            prior: model.prior.clone(),
            n_prior: model.prior.as_ref().map_or(0, |p| p.params.len()),
            n_const: correction.constant_count(),
            correction,
            temperature: inputs.iter().map(|x| x.temperature).collect(),
            humidity: inputs.iter().map(|x| x.humidity).collect(),
            inputs: inputs.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Predictions for a full parameter vector laid out as
    /// [`CompositeModel::parameters`].
    pub fn predict(&mut self, params: &[f64]) -> Result<Vec<f64>, PriorError> {
        let (p, rest) = params.split_at(self.n_prior.min(params.len()));
        let (d, tail) = rest.split_at(self.n_const.min(rest.len()));
        self.correction.set_constants(d);
        let delta = if self.inputs.is_empty() {
            Vec::new()
        } else {
            self.correction.eval_columns(&[&self.temperature, &self.humidity])
        };
        match (&self.prior, self.mode) {
            (None, _) | (_, Mode::Standalone) => Ok(delta),
            (Some(prior), mode) => {
                let rho = tail.first().copied().unwrap_or(1.0);
                let f = prior.evaluate_with(p, &self.inputs)?;
                Ok(f.iter().zip(&delta).map(|(f, d)| combine(mode, *f, rho, *d)).collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Enforcement {
    /// Candidates violating the constraint anywhere are discarded.
    Reject,
    /// Fitness grows by `weight × violation`.
    Penalty { weight: f64 },
}

/// `h(x) ≥ 0` over the inputs `T`, `H` and optionally the model output `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub expression: Expr,
    pub enforcement: Enforcement,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub satisfied: bool,
    pub violation: f64,
}

impl ConstraintCheck {
    pub const SATISFIED: ConstraintCheck = ConstraintCheck {
        satisfied: true,
        violation: 0.0,
    };
}

impl Constraint {
    pub fn parse(text: &str, enforcement: Enforcement) -> Result<Self, PriorError> {
        let expression = Expr::parse(text, &[TEMPERATURE, HUMIDITY, MODEL_OUTPUT])?;
        Ok(Constraint {
            expression,
            enforcement,
        })
    }

    pub fn uses_model_output(&self) -> bool {
        self.expression.variables().iter().any(|v| v == MODEL_OUTPUT)
    }

    pub fn compile(&self) -> Result<CompiledExpr, EvalError> {
        self.expression.compile(&[TEMPERATURE, HUMIDITY, MODEL_OUTPUT])
    }

    /// Check `h` given inputs and the model's predictions at those inputs.
    pub fn check_values(&self, inputs: &[Input], predictions: &[f64]) -> Result<ConstraintCheck, EvalError> {
        let program = self.compile()?;
        let t: Vec<f64> = inputs.iter().map(|x| x.temperature).collect();
        let h: Vec<f64> = inputs.iter().map(|x| x.humidity).collect();
        Ok(check_program(&program, &t, &h, predictions))
    }
}

pub(crate) fn check_program(program: &CompiledExpr, t: &[f64], h: &[f64], g: &[f64]) -> ConstraintCheck {
    if t.is_empty() {
        return ConstraintCheck::SATISFIED;
    }
    let values = program.eval_columns(&[t, h, g]);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    ConstraintCheck {
        satisfied: min >= 0.0,
        violation: (-min).max(0.0),
    }
}

/// Constraint check for a model over inputs; no constraint is trivially
/// satisfied.
pub fn check_constraint(
    constraint: Option<&Constraint>,
    model: &CompositeModel,
    inputs: &[Input],
) -> Result<ConstraintCheck, PriorError> {
    let Some(c) = constraint else {
        return Ok(ConstraintCheck::SATISFIED);
    };
    let predictions = if c.uses_model_output() {
        model.predict(inputs)?
    } else {
        vec![0.0; inputs.len()]
    };
    Ok(c.check_values(inputs, &predictions)?)
}
