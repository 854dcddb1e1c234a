//! Genetic-programming search for a correction term `δ(x, θ_d)` (or a
//! standalone model), with `ρ = 1` and the prior fixed at its MLE.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, HUMIDITY, TEMPERATURE};
use crate::error::ConfigError;
use crate::expression::{crossover, mutate, random_tree, CompiledExpr, Complexity, Expr, ExprConfig};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::prior::{check_program, combine, Constraint, Enforcement, Mode, PriorError, PriorModel};
use crate::selection::{self, parameter_count, MetricError, Rankable};

/// Fitness assigned to rejected or unevaluable candidates.
pub const REJECTED: f64 = f64::MAX;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("no admissible candidate survived (population collapse or every candidate rejected by the constraint)")]
    NoCandidates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    /// `h` over `T`, `H` and the model output `g`; satisfied when `h ≥ 0`.
    pub expression: String,
    #[serde(default = "default_enforcement")]
    pub enforcement: Enforcement,
}

fn default_enforcement() -> Enforcement {
    Enforcement::Reject
}

impl ConstraintSpec {
    pub fn build(&self) -> Result<Constraint, PriorError> {
        Constraint::parse(&self.expression, self.enforcement)
    }
}

/// Constant refinement applied to the best individuals of every generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolishConfig {
    /// Individuals polished per generation; 0 disables.
    pub top: usize,
    pub max_evals: usize,
    /// Trees with more constants are left alone.
    pub max_constants: usize,
}

impl Default for PolishConfig {
    fn default() -> Self {
        PolishConfig {
            top: 10,
            max_evals: 200,
            max_constants: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover: f64,
    pub mutation: f64,
    pub reproduction: f64,
    /// Fitness penalty per node.
    pub parsimony: f64,
    pub elitism: usize,
    pub expr: ExprConfig,
    pub constraint: Option<ConstraintSpec>,
    pub polish: PolishConfig,
    /// Evaluate fitness on the rayon pool. Results are identical either way.
    pub parallel: bool,
    pub top_k: usize,
    /// Count `ρ` as a free parameter in BIC for composed modes.
    pub bic_counts_rho: bool,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population: 500,
            generations: 50,
            tournament_size: 3,
            crossover: 0.8,
            mutation: 0.15,
            reproduction: 0.05,
            parsimony: 1e-4,
            elitism: 5,
            expr: ExprConfig::default(),
            constraint: None,
            polish: PolishConfig::default(),
            parallel: true,
            top_k: 5,
            bic_counts_rho: true,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population < 2 {
            return Err(ConfigError::invalid("population", "must be at least 2"));
        }
        if self.generations < 1 {
            return Err(ConfigError::invalid("generations", "must be at least 1"));
        }
        if self.tournament_size < 1 {
            return Err(ConfigError::invalid("tournament_size", "must be at least 1"));
        }
        let p = [self.crossover, self.mutation, self.reproduction];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || p.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(ConfigError::invalid(
                "crossover/mutation/reproduction",
                "probabilities must lie in [0, 1] and sum to at most 1",
            ));
        }
        if !(self.parsimony >= 0.0 && self.parsimony.is_finite()) {
            return Err(ConfigError::invalid("parsimony", "must be finite and >= 0"));
        }
        if self.elitism > self.population {
            return Err(ConfigError::invalid("elitism", "exceeds population"));
        }
        if self.top_k < 1 {
            return Err(ConfigError::invalid("top_k", "must be at least 1"));
        }
        for v in &self.expr.variables {
            if v != TEMPERATURE && v != HUMIDITY {
                return Err(ConfigError::invalid(
                    "expr.variables",
                    format!("`{v}` is not a model input (expected T or H)"),
                ));
            }
        }
        if let Some(c) = &self.constraint {
            c.build()
                .map_err(|e| ConfigError::invalid("constraint.expression", e.to_string()))?;
            if let Enforcement::Penalty { weight } = c.enforcement {
                if !(weight >= 0.0 && weight.is_finite()) {
                    return Err(ConfigError::invalid(
                        "constraint.enforcement.weight",
                        "must be finite and >= 0",
                    ));
                }
            }
        }
        self.expr.validate()
    }
}

/// Everything needed to score candidates on one training set.
pub struct FitnessContext {
    mode: Mode,
    prior_values: Option<Vec<f64>>,
    temperature: Vec<f64>,
    humidity: Vec<f64>,
    targets: Vec<f64>,
    parsimony: f64,
    constraint: Option<(CompiledExpr, Enforcement)>,
}

impl FitnessContext {
    pub fn new(
        train: &Dataset,
        prior: Option<&PriorModel>,
        mode: Mode,
        parsimony: f64,
        constraint: Option<&Constraint>,
    ) -> Result<Self, DiscoveryError> {
        if train.is_empty() {
            return Err(DiscoveryError::EmptyTrain);
        }
        let inputs = train.inputs();
        let prior_values = match (mode, prior) {
            (Mode::Standalone, Some(_)) => {
                return Err(PriorError::Mode("standalone mode takes no prior model".into()).into())
            }
            (Mode::Standalone, None) => None,
            (_, None) => return Err(PriorError::Mode(format!("{mode} mode requires a prior model")).into()),
            (_, Some(p)) => Some(p.evaluate(&inputs)?),
        };
        let constraint = match constraint {
            Some(c) => Some((c.compile().map_err(PriorError::from)?, c.enforcement)),
            None => None,
        };
        Ok(FitnessContext {
            mode,
            prior_values,
            temperature: inputs.iter().map(|x| x.temperature).collect(),
            humidity: inputs.iter().map(|x| x.humidity).collect(),
            targets: train.targets(),
            parsimony,
            constraint,
        })
    }

    fn predictions(&self, program: &CompiledExpr) -> Vec<f64> {
        let delta = program.eval_columns(&[&self.temperature, &self.humidity]);
        match &self.prior_values {
            None => delta,
            Some(f) => f
                .iter()
                .zip(&delta)
                .map(|(f, d)| combine(self.mode, *f, 1.0, *d))
                .collect(),
        }
    }

    fn rmse_of(&self, predictions: &[f64]) -> f64 {
        let sse: f64 = predictions
            .iter()
            .zip(&self.targets)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        (sse / self.targets.len() as f64).sqrt()
    }

    fn score(&self, program: &CompiledExpr, nodes: usize) -> f64 {
        let pred = self.predictions(program);
        let mut f = self.rmse_of(&pred) + self.parsimony * nodes as f64;
        if let Some((h, enforcement)) = &self.constraint {
            let check = check_program(h, &self.temperature, &self.humidity, &pred);
            match enforcement {
                Enforcement::Reject if !check.satisfied => return REJECTED,
                Enforcement::Penalty { weight } => f += weight * check.violation,
                _ => {}
            }
        }
        if f.is_finite() {
            f
        } else {
            REJECTED
        }
    }

    /// RMSE + parsimony × nodes + constraint penalty; [`REJECTED`] when the
    /// candidate is discarded or cannot be evaluated.
    pub fn fitness(&self, candidate: &Expr) -> f64 {
        match candidate.compile(&[TEMPERATURE, HUMIDITY]) {
            Ok(program) => self.score(&program, candidate.node_count()),
            Err(_) => REJECTED,
        }
    }

    /// Training RMSE of the composed model, without penalties.
    pub fn train_rmse(&self, candidate: &Expr) -> Option<f64> {
        let program = candidate.compile(&[TEMPERATURE, HUMIDITY]).ok()?;
        Some(self.rmse_of(&self.predictions(&program)))
    }

    /// Refine the constants of `candidate` by simplex search on fitness.
    /// Returns the candidate unchanged when no improvement is found.
    pub fn polish(&self, candidate: &Expr, fitness: f64, config: &PolishConfig) -> (Expr, f64) {
        let start = candidate.constants();
        if start.is_empty() || start.len() > config.max_constants || fitness == REJECTED {
            return (candidate.clone(), fitness);
        }
        let Ok(program) = candidate.compile(&[TEMPERATURE, HUMIDITY]) else {
            return (candidate.clone(), fitness);
        };
        let nodes = candidate.node_count();
        let bounds: Vec<(f64, f64)> = start.iter().map(|c| (c - c.abs() - 1.0, c + c.abs() + 1.0)).collect();
        let opts = NelderMeadOptions {
            max_evals: config.max_evals,
            initial_step: 0.02,
            rebuilds: 1,
            ..Default::default()
        };
        let objective = |c: &[f64]| {
            let mut p = program.clone();
            p.set_constants(c);
            self.score(&p, nodes)
        };
        let m = nelder_mead(objective, &start, &bounds, &opts);
        if m.f < fitness {
            (candidate.with_constants(&m.x), m.f)
        } else {
            (candidate.clone(), fitness)
        }
    }
}

/// Fitness of one candidate; see [`FitnessContext::fitness`].
pub fn fitness(
    candidate: &Expr,
    train: &Dataset,
    prior: Option<&PriorModel>,
    mode: Mode,
    config: &GpConfig,
) -> Result<f64, DiscoveryError> {
    let constraint = config.constraint.as_ref().map(|c| c.build()).transpose()?;
    let ctx = FitnessContext::new(train, prior, mode, config.parsimony, constraint.as_ref())?;
    Ok(ctx.fitness(candidate))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub expr: Expr,
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    /// Final population in fitness order (stable by position).
    pub population: Vec<Individual>,
    /// Best fitness of the initial population and after each generation.
    pub history: Vec<f64>,
}

fn evaluate(ctx: &FitnessContext, exprs: Vec<Expr>, parallel: bool) -> Vec<Individual> {
    let score = |expr: Expr| {
        let fitness = ctx.fitness(&expr);
        Individual { expr, fitness }
    };
    if parallel {
        exprs.into_par_iter().map(score).collect()
    } else {
        exprs.into_iter().map(score).collect()
    }
}

fn sort_population(pop: &mut [Individual]) {
    pop.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
}

fn tournament<'a, R: Rng>(pop: &'a [Individual], size: usize, rng: &mut R) -> &'a Individual {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..size {
        let k = rng.random_range(0..pop.len());
        if pop[k].fitness < pop[best].fitness || (pop[k].fitness == pop[best].fitness && k < best) {
            best = k;
        }
    }
    &pop[best]
}

fn polish_top(ctx: &FitnessContext, pop: &mut [Individual], config: &GpConfig) {
    let n = config.polish.top.min(pop.len());
    if n == 0 {
        return;
    }
    let polish = |ind: &Individual| {
        let (expr, fitness) = ctx.polish(&ind.expr, ind.fitness, &config.polish);
        Individual { expr, fitness }
    };
    let polished: Vec<Individual> = if config.parallel {
        pop[..n].par_iter().map(polish).collect()
    } else {
        pop[..n].iter().map(polish).collect()
    };
    pop[..n].clone_from_slice(&polished);
    sort_population(pop);
}

/// Generational GP loop: elitism, tournament selection, crossover, mutation
/// and reproduction, with constant polishing of the leaders.
pub fn evolve_with(ctx: &FitnessContext, config: &GpConfig) -> Result<Evolution, DiscoveryError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let exprs: Vec<Expr> = (0..config.population)
        .map(|_| random_tree(&config.expr, &mut rng))
        .collect();
    let mut pop = evaluate(ctx, exprs, config.parallel);
    sort_population(&mut pop);
    polish_top(ctx, &mut pop, config);
    let mut history = vec![pop[0].fitness];
    let max_depth = config.expr.max_depth;

    for _ in 0..config.generations {
        let elites: Vec<Individual> = pop[..config.elitism].to_vec();
        let mut offspring: Vec<Expr> = Vec::with_capacity(config.population - elites.len());
        while offspring.len() < config.population - elites.len() {
            let r: f64 = rng.random();
            if r < config.crossover {
                let a = tournament(&pop, config.tournament_size, &mut rng);
                let b = tournament(&pop, config.tournament_size, &mut rng);
                let (c1, c2) = crossover(&a.expr, &b.expr, max_depth, &mut rng);
                offspring.push(c1);
                if offspring.len() < config.population - elites.len() {
                    offspring.push(c2);
                }
            } else if r < config.crossover + config.mutation {
                let a = tournament(&pop, config.tournament_size, &mut rng);
                offspring.push(mutate(&a.expr, &config.expr, &mut rng));
            } else {
                let a = tournament(&pop, config.tournament_size, &mut rng);
                offspring.push(a.expr.clone());
            }
        }
        let mut next = elites;
        next.extend(evaluate(ctx, offspring, config.parallel));
        sort_population(&mut next);
        polish_top(ctx, &mut next, config);
        pop = next;
        history.push(pop[0].fitness);
    }
    Ok(Evolution {
        population: pop,
        history,
    })
}

pub fn evolve(
    train: &Dataset,
    prior: Option<&PriorModel>,
    mode: Mode,
    config: &GpConfig,
) -> Result<Evolution, DiscoveryError> {
    config.validate()?;
    let constraint = config.constraint.as_ref().map(|c| c.build()).transpose()?;
    let ctx = FitnessContext::new(train, prior, mode, config.parsimony, constraint.as_ref())?;
    evolve_with(&ctx, config)
}

/// One row of the ranked candidate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub expression: Expr,
    /// Full-precision rendering.
    pub rendered: String,
    /// Three-significant-digit rendering, also the deduplication key.
    pub display: String,
    pub fitness: f64,
    pub train_rmse: f64,
    /// BIC on the training data.
    pub bic: f64,
    pub test_r2: f64,
    pub test_rmse: f64,
    /// Improvement over the baseline test R², when a positive baseline exists.
    pub v_percent: Option<f64>,
    pub complexity: Complexity,
}

impl Rankable for CandidateReport {
    fn bic(&self) -> f64 {
        self.bic
    }
    fn node_count(&self) -> usize {
        self.complexity.nodes
    }
    fn rendered(&self) -> &str {
        &self.rendered
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub candidates: Vec<CandidateReport>,
    pub history: Vec<f64>,
}

/// Evolve, deduplicate the final population by the three-digit rendering of
/// the simplified tree, score
/// every survivor on train and test, and return the `top_k` by BIC.
pub fn discover(
    train: &Dataset,
    test: &Dataset,
    prior: Option<&PriorModel>,
    mode: Mode,
    config: &GpConfig,
    baseline_r2: Option<f64>,
) -> Result<Discovery, DiscoveryError> {
    config.validate()?;
    let constraint = config.constraint.as_ref().map(|c| c.build()).transpose()?;
    let ctx = FitnessContext::new(train, prior, mode, config.parsimony, constraint.as_ref())?;
    let evolution = evolve_with(&ctx, config)?;

    let mut seen = HashSet::new();
    let mut survivors = Vec::new();
    for ind in &evolution.population {
        if ind.fitness == REJECTED {
            continue;
        }
        let expr = ind.expr.simplify();
        if seen.insert(expr.render_short()) {
            let rendered = expr.render();
            survivors.push((expr, rendered, ind.fitness));
        }
    }

    let n_prior = prior.map_or(0, |p| p.free_parameter_count());
    let test_inputs = test.inputs();
    let test_y = test.targets();
    let prior_test = match prior {
        Some(p) if mode != Mode::Standalone => Some(p.evaluate(&test_inputs)?),
        _ => None,
    };
    let n_train = train.len();
    let baseline = baseline_r2.filter(|b| *b > 0.0);

    let mut reports = Vec::with_capacity(survivors.len());
    for (expr, rendered, fit) in survivors {
        let Some(train_rmse) = ctx.train_rmse(&expr) else {
            continue;
        };
        let k = parameter_count(mode, n_prior, expr.constant_count(), config.bic_counts_rho);
        let bic = selection::floored_bic(n_train, train_rmse * train_rmse * n_train as f64, k)?;
        let program = expr.compile(&[TEMPERATURE, HUMIDITY]).map_err(PriorError::from)?;
        let t: Vec<f64> = test_inputs.iter().map(|x| x.temperature).collect();
        let h: Vec<f64> = test_inputs.iter().map(|x| x.humidity).collect();
        let delta = program.eval_columns(&[&t, &h]);
        let pred: Vec<f64> = match &prior_test {
            Some(f) => f.iter().zip(&delta).map(|(f, d)| combine(mode, *f, 1.0, *d)).collect(),
            None => delta,
        };
        let test_r2 = selection::r_squared(&test_y, &pred)?;
        let test_rmse = selection::rmse(&test_y, &pred)?;
        if !(train_rmse.is_finite() && bic.is_finite() && test_r2.is_finite() && test_rmse.is_finite()) {
            continue;
        }
        let v_percent = baseline
            .map(|b| selection::improvement_percent(b, test_r2))
            .transpose()?;
        reports.push(CandidateReport {
            display: expr.render_short(),
            complexity: expr.complexity(),
            expression: expr,
            rendered,
            fitness: fit,
            train_rmse,
            bic,
            test_r2,
            test_rmse,
            v_percent,
        });
    }
    if reports.is_empty() {
        return Err(DiscoveryError::NoCandidates);
    }
    let mut candidates = selection::rank(reports);
    candidates.truncate(config.top_k);
    Ok(Discovery {
        candidates,
        history: evolution.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    fn small_config(seed: u64) -> GpConfig {
        GpConfig {
            population: 60,
            generations: 10,
            polish: PolishConfig {
                top: 3,
                ..Default::default()
            },
            parallel: false,
            seed,
            ..Default::default()
        }
    }

    fn prior_only_data() -> (Dataset, PriorModel) {
        let spec = SyntheticSpec {
            noise_sd: 0.0,
            correction: "1".into(),
            records: 200,
            ..Default::default()
        };
        let d = generate_synthetic(&spec, 1).unwrap();
        (d, PriorModel::butler_volmer(spec.prior))
    }

    fn canonical(noise_sd: f64) -> (Dataset, PriorModel) {
        let spec = SyntheticSpec {
            noise_sd,
            records: 300,
            ..Default::default()
        };
        (
            generate_synthetic(&spec, 2).unwrap(),
            PriorModel::butler_volmer(spec.prior),
        )
    }

    fn parse(s: &str) -> Expr {
        Expr::parse(s, &["T", "H"]).unwrap()
    }

    #[test]
    fn identity_correction_costs_only_parsimony() {
        let (d, prior) = prior_only_data();
        let cfg = GpConfig::default();
        let f = fitness(&parse("1"), &d, Some(&prior), Mode::Multiplicative, &cfg).unwrap();
        assert!((f - cfg.parsimony).abs() < 1e-15, "{f}");
    }

    #[test]
    fn zero_correction_costs_rms_of_targets() {
        let (d, prior) = prior_only_data();
        let cfg = GpConfig::default();
        let f = fitness(&parse("0"), &d, Some(&prior), Mode::Multiplicative, &cfg).unwrap();
        let y = d.targets();
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
        assert!((f - (rms + cfg.parsimony)).abs() < 1e-12);
    }

    #[test]
    fn true_correction_has_tiny_residual() {
        let (d, prior) = canonical(0.0);
        let ctx = FitnessContext::new(&d, Some(&prior), Mode::Multiplicative, 0.0, None).unwrap();
        assert!(ctx.train_rmse(&parse("2*H - 0.7")).unwrap() < 1e-10);
    }

    #[test]
    fn mode_mismatch_is_an_error() {
        let (d, prior) = canonical(0.0);
        let cfg = GpConfig::default();
        assert!(fitness(&parse("H"), &d, Some(&prior), Mode::Standalone, &cfg).is_err());
        assert!(fitness(&parse("H"), &d, None, Mode::Additive, &cfg).is_err());
    }

    #[test]
    fn reject_constraint_discards() {
        let (d, prior) = canonical(0.0);
        let cfg = GpConfig {
            constraint: Some(ConstraintSpec {
                expression: "g".into(),
                enforcement: Enforcement::Reject,
            }),
            ..Default::default()
        };
        let f = fitness(&parse("0 - 1"), &d, Some(&prior), Mode::Multiplicative, &cfg).unwrap();
        assert_eq!(f, REJECTED);
        let penalized = GpConfig {
            constraint: Some(ConstraintSpec {
                expression: "H - 2".into(),
                enforcement: Enforcement::Penalty { weight: 1.0 },
            }),
            ..Default::default()
        };
        let plain = fitness(
            &parse("H"),
            &d,
            Some(&prior),
            Mode::Multiplicative,
            &GpConfig::default(),
        )
        .unwrap();
        let f = fitness(&parse("H"), &d, Some(&prior), Mode::Multiplicative, &penalized).unwrap();
        let min_h = d.records().iter().map(|r| r.humidity).fold(f64::INFINITY, f64::min);
        assert!((f - plain - (2.0 - min_h)).abs() < 1e-12);
    }

    #[test]
    fn pure_elitism_keeps_population() {
        let (d, prior) = canonical(0.005);
        let cfg = GpConfig {
            generations: 1,
            elitism: 60,
            polish: PolishConfig {
                top: 0,
                ..Default::default()
            },
            ..small_config(3)
        };
        let a = evolve(&d, Some(&prior), Mode::Multiplicative, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut first: Vec<Expr> = (0..60).map(|_| random_tree(&cfg.expr, &mut rng)).collect();
        let mut last: Vec<Expr> = a.population.iter().map(|i| i.expr.clone()).collect();
        first.sort_by_key(|e| e.render());
        last.sort_by_key(|e| e.render());
        assert_eq!(first, last);
        assert_eq!(a.history[0], a.history[1]);
    }

    #[test]
    fn history_is_monotone_and_run_is_deterministic() {
        let (d, prior) = canonical(0.005);
        let cfg = small_config(9);
        let a = evolve(&d, Some(&prior), Mode::Multiplicative, &cfg).unwrap();
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", a.history);
        let b = evolve(&d, Some(&prior), Mode::Multiplicative, &cfg).unwrap();
        assert_eq!(a, b);
        let par = GpConfig { parallel: true, ..cfg };
        let c = evolve(&d, Some(&prior), Mode::Multiplicative, &par).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn closure_under_depth_cap() {
        let (d, prior) = canonical(0.005);
        let cfg = GpConfig {
            expr: ExprConfig {
                max_depth: 5,
                init_depth: (2, 4),
                variables: vec!["T".into(), "H".into()],
                ..Default::default()
            },
            ..small_config(4)
        };
        let a = evolve(&d, Some(&prior), Mode::Multiplicative, &cfg).unwrap();
        for ind in &a.population {
            ind.expr.validate(&["T", "H"], 5).unwrap();
        }
    }

    #[test]
    fn polish_improves_constants() {
        let (d, prior) = canonical(0.0);
        let ctx = FitnessContext::new(&d, Some(&prior), Mode::Multiplicative, 0.0, None).unwrap();
        let rough = parse("1.9*H - 0.6");
        let f0 = ctx.fitness(&rough);
        let (better, f1) = ctx.polish(
            &rough,
            f0,
            &PolishConfig {
                max_evals: 400,
                ..Default::default()
            },
        );
        assert!(f1 < 1e-6, "{f1} from {f0}");
        let c = better.constants();
        assert!((c[0] - 2.0).abs() < 1e-4 && (c[1] - 0.7).abs() < 1e-4, "{c:?}");
    }

    #[test]
    fn discover_returns_ranked_unique_rows() {
        let (d, prior) = canonical(0.005);
        let (train, test) = d.split_by_time(0.5).unwrap();
        let cfg = small_config(5);
        let out = discover(&train, &test, Some(&prior), Mode::Multiplicative, &cfg, Some(0.5)).unwrap();
        assert!(!out.candidates.is_empty() && out.candidates.len() <= cfg.top_k);
        assert!(out.candidates.windows(2).all(|w| w[0].bic <= w[1].bic));
        let keys: HashSet<&str> = out.candidates.iter().map(|c| c.display.as_str()).collect();
        assert_eq!(keys.len(), out.candidates.len());
        for c in &out.candidates {
            assert!(c.v_percent.is_some());
            assert_eq!(c.rendered, c.expression.render());
        }
    }

    #[test]
    fn config_validation() {
        let bad = GpConfig {
            crossover: 0.9,
            mutation: 0.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = GpConfig {
            population: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = GpConfig {
            generations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(GpConfig::default().validate().is_ok());
    }
}
