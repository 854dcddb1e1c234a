//! End-to-end workflow: load, normalize, split, fit the prior, discover a
//! correction, calibrate, forecast, and propose experiments.
//!
//! Each stage is a function over serializable inputs so the CLI can run
//! stages separately from intermediate JSON files.

mod config;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{CalibrationConfig, DataSource, DoeConfig, PriorConfig, PriorForm, RunConfig};
pub use report::{
    emit_report, read_json, write_candidates_csv, write_chains_csv, write_forecast_csv, write_json, write_parity_csv,
    write_proposals_csv, CALIBRATION_FILE, CANDIDATES_FILE, PRIOR_FILE, REPORT_FILE,
};

use crate::calibration::{
    coverage_check, predictive, run_mcmc, CalibrationError, CalibrationResult, Chain, KohModel, ParamPrior,
};
use crate::dataset::{generate_synthetic, Dataset, DatasetError, Normalization, Provenance};
use crate::discovery::{discover, CandidateReport, DiscoveryError};
use crate::doe::{candidate_grid, propose, Desirability, DoeError, ExperimentProposal};
use crate::error::ConfigError;
use crate::prior::{compose, fit_mle, CompositeModel, MleFit, MleOptions, Mode, PriorError};
use crate::selection::{parameter_count, MetricError, Metrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Load,
    Normalize,
    Split,
    Prior,
    Discover,
    Select,
    Calibrate,
    Forecast,
    Propose,
    Emit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Normalize => "normalize",
            Stage::Split => "split",
            Stage::Prior => "prior",
            Stage::Discover => "discover",
            Stage::Select => "select",
            Stage::Calibrate => "calibrate",
            Stage::Forecast => "forecast",
            Stage::Propose => "propose",
            Stage::Emit => "emit",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Doe(#[from] DoeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Missing(String),
}

/// A stage failure, tagged with the stage that raised it.
#[derive(Debug, Error)]
#[error("[{stage}] {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<StageError>) -> Self {
        PipelineError {
            stage,
            source: source.into(),
        }
    }
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

/// Working data after load, normalization and split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: Dataset,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(config: &RunConfig) -> Result<Dataset, PipelineError> {
    match &config.data {
        DataSource::File { path } => Dataset::load_csv(path).map_err(at(Stage::Load)),
        DataSource::Synthetic(spec) => generate_synthetic(spec, config.seed).map_err(at(Stage::Load)),
    }
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, PipelineError> {
    config.validate().map_err(at(Stage::Config))?;
    let raw = load_data(config)?;
    let data = if config.normalize {
        raw.normalize(Some(config.split)).map_err(at(Stage::Normalize))?
    } else {
        raw
    };
    let (train, test) = data.split_by_time(config.split).map_err(at(Stage::Split))?;
    Ok(Prepared { data, train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorStage {
    pub fit: MleFit,
    pub parameter_names: Vec<String>,
    /// Prior-only model on the test records.
    pub baseline: Metrics,
    pub baseline_train_r2: f64,
}

/// Least-squares prior fit and its test metrics; `None` in standalone mode.
pub fn stage_prior(config: &RunConfig, prep: &Prepared) -> Result<Option<PriorStage>, PipelineError> {
    if config.mode == Mode::Standalone {
        return Ok(None);
    }
    let err = at::<StageError>(Stage::Prior);
    let prior = config.prior.build().map_err(|e| PipelineError::new(Stage::Prior, e))?;
    let opts = MleOptions {
        restarts: config.prior.restarts,
        seed: config.seed,
        parallel: config.parallel,
        ..Default::default()
    };
    let fit = fit_mle(&prior, &prep.train, &opts).map_err(|e| PipelineError::new(Stage::Prior, e))?;
    let metrics = || -> Result<(Metrics, f64), StageError> {
        let k = fit.prior.free_parameter_count();
        let test_pred = fit.prior.evaluate(&prep.test.inputs())?;
        let baseline = Metrics::compute(&prep.test.targets(), &test_pred, k, None)?;
        let train_pred = fit.prior.evaluate(&prep.train.inputs())?;
        let train_r2 = crate::selection::r_squared(&prep.train.targets(), &train_pred)?;
        Ok((baseline, train_r2))
    };
    let (baseline, baseline_train_r2) = metrics().map_err(err)?;
    Ok(Some(PriorStage {
        parameter_names: fit.prior.parameter_names(),
        fit,
        baseline,
        baseline_train_r2,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryStage {
    pub candidates: Vec<CandidateReport>,
    /// Best fitness per generation.
    pub history: Vec<f64>,
    /// Index into `candidates` of the chosen model.
    pub chosen: usize,
    pub pinned: bool,
    /// Chosen correction composed with the fitted prior, `ρ = 1`.
    pub model: CompositeModel,
    pub rendered: String,
    /// Chosen model on the test records, before calibration.
    pub test: Metrics,
}

/// Free parameters of `model` entering BIC.
fn model_parameter_count(config: &RunConfig, model: &CompositeModel) -> usize {
    parameter_count(
        model.mode,
        model.prior.as_ref().map_or(0, |p| p.free_parameter_count()),
        model.correction.constant_count(),
        config.discovery.bic_counts_rho,
    )
}

fn baseline_r2(prior: Option<&PriorStage>) -> Option<f64> {
    prior.map(|p| p.baseline.r2).filter(|r| *r > 0.0)
}

pub fn stage_discover(
    config: &RunConfig,
    prep: &Prepared,
    prior: Option<&PriorStage>,
) -> Result<DiscoveryStage, PipelineError> {
    if config.mode != Mode::Standalone && prior.is_none() {
        return Err(PipelineError::new(
            Stage::Discover,
            StageError::Missing(format!("{} mode needs a fitted prior", config.mode)),
        ));
    }
    let prior_model = prior.map(|p| &p.fit.prior);
    let found = discover(
        &prep.train,
        &prep.test,
        prior_model,
        config.mode,
        &config.discovery,
        baseline_r2(prior),
    )
    .map_err(at(Stage::Discover))?;
    select(config, prep, prior, found.candidates, found.history)
}

/// Pick the rank-1 (or pinned) candidate and score it on the test records.
pub fn select(
    config: &RunConfig,
    prep: &Prepared,
    prior: Option<&PriorStage>,
    candidates: Vec<CandidateReport>,
    history: Vec<f64>,
) -> Result<DiscoveryStage, PipelineError> {
    let err = at::<StageError>(Stage::Select);
    let chosen = config.pin_candidate.unwrap_or(0);
    let Some(c) = candidates.get(chosen) else {
        return Err(PipelineError::new(
            Stage::Select,
            ConfigError::invalid(
                "pin_candidate",
                format!("index {chosen} but only {} candidates", candidates.len()),
            ),
        ));
    };
    let prior_model = prior.map(|p| p.fit.prior.clone());
    let model = compose(prior_model, c.expression.clone(), config.mode, 1.0).map_err(at(Stage::Select))?;
    let score = || -> Result<Metrics, StageError> {
        let pred = model.predict(&prep.test.inputs())?;
        Ok(Metrics::compute(
            &prep.test.targets(),
            &pred,
            model_parameter_count(config, &model),
            baseline_r2(prior),
        )?)
    };
    let test = score().map_err(err)?;
    Ok(DiscoveryStage {
        rendered: c.rendered.clone(),
        candidates,
        history,
        chosen,
        pinned: config.pin_candidate.is_some(),
        model,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStage {
    pub model: KohModel,
    pub result: CalibrationResult,
}

/// Default priors around `model`, then the config's fixed names and overrides.
pub fn build_koh(config: &CalibrationConfig, model: CompositeModel) -> Result<KohModel, StageError> {
    let koh = KohModel::with_default_priors(model, &config.priors)?;
    let names = koh.parameter_names();
    let point = koh.model.parameters();
    let mut priors: Vec<ParamPrior> = koh.theta_priors.iter().chain(&koh.hyper_priors).copied().collect();
    let index = |name: &str| {
        names.iter().position(|n| n == name).ok_or_else(|| {
            ConfigError::invalid(
                "calibration",
                format!("unknown parameter `{name}`; known: {}", names.join(", ")),
            )
        })
    };
    for name in &config.fixed {
        let k = index(name)?;
        if k >= point.len() {
            return Err(ConfigError::invalid(
                "calibration.fixed",
                format!("`{name}` has no point estimate; pin it with an override of kind \"fixed\""),
            )
            .into());
        }
        priors[k] = ParamPrior::Fixed { value: point[k] };
    }
    for (name, prior) in &config.overrides {
        priors[index(name)?] = *prior;
    }
    let n = koh.theta_len();
    let hyper: [ParamPrior; 4] = priors[n..].try_into().expect("four hyperparameters");
    Ok(KohModel::new(koh.model, priors[..n].to_vec(), hyper)?)
}

pub fn stage_calibrate(
    config: &RunConfig,
    prep: &Prepared,
    discovery: &DiscoveryStage,
) -> Result<CalibrationStage, PipelineError> {
    let err = at::<StageError>(Stage::Calibrate);
    let model = build_koh(&config.calibration, discovery.model.clone()).map_err(err)?;
    let result = run_mcmc(&model, &prep.train, &config.calibration.mcmc).map_err(at(Stage::Calibrate))?;
    Ok(CalibrationStage { model, result })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub t: f64,
    pub y: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastStage {
    /// Posterior-predictive mean on the test records.
    pub test: Metrics,
    pub level: f64,
    pub coverage: f64,
    /// Posterior samples pooled per prediction.
    pub samples: usize,
    pub series: Vec<ForecastRow>,
    pub parity: Vec<ParityRow>,
}

pub fn stage_forecast(
    config: &RunConfig,
    prep: &Prepared,
    prior: Option<&PriorStage>,
    cal: &CalibrationStage,
) -> Result<ForecastStage, PipelineError> {
    let run = || -> Result<ForecastStage, StageError> {
        let pred = predictive(
            &cal.model,
            &cal.result,
            &prep.test.inputs(),
            &config.calibration.predictive,
        )?;
        let y = prep.test.targets();
        let level = config.calibration.level;
        let coverage = coverage_check(&pred, &y, level)?;
        let test = Metrics::compute(
            &y,
            &pred.mean,
            model_parameter_count(config, &cal.model.model),
            baseline_r2(prior),
        )?;
        let series = prep
            .test
            .records()
            .iter()
            .zip(pred.mean.iter().zip(&pred.sd))
            .map(|(r, (mu, sd))| ForecastRow {
                t: r.time,
                y: r.current,
                mu: *mu,
                sigma: *sd,
                lo: mu - sd,
                hi: mu + sd,
            })
            .collect();
        let parity = y
            .iter()
            .zip(&pred.mean)
            .map(|(o, p)| ParityRow {
                observed: *o,
                predicted: *p,
            })
            .collect();
        Ok(ForecastStage {
            test,
            level,
            coverage,
            samples: pred.samples,
            series,
            parity,
        })
    };
    run().map_err(at(Stage::Forecast))
}

/// Input box for the proposal grid.
pub fn doe_bounds(config: &RunConfig, data: &Dataset) -> [(f64, f64); 2] {
    if let Some(b) = config.doe.bounds {
        return b;
    }
    if config.normalize {
        return [(0.0, 1.0), (0.0, 1.0)];
    }
    let range = |f: fn(&crate::dataset::Record) -> f64| {
        data.records()
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    [range(|r| r.temperature), range(|r| r.humidity)]
}

pub fn stage_propose(
    config: &RunConfig,
    prep: &Prepared,
    cal: &CalibrationStage,
) -> Result<Vec<ExperimentProposal>, PipelineError> {
    let run = || -> Result<Vec<ExperimentProposal>, StageError> {
        let grid = candidate_grid(doe_bounds(config, &prep.data), config.doe.grid)?;
        let desirability = match &config.doe.desirability {
            Some(text) => Desirability::parse(text)?,
            None => Desirability::Uniform,
        };
        Ok(propose(
            &cal.model,
            &cal.result,
            &grid,
            &desirability,
            config.doe.k.min(grid.len()),
            &config.calibration.predictive,
        )?)
    };
    run().map_err(at(Stage::Propose))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub provenance: Provenance,
    pub records: usize,
    pub train: usize,
    pub test: usize,
    /// Test records with a normalized value outside `[0, 1]`.
    pub test_out_of_range: usize,
    pub normalization: Option<Normalization>,
}

impl DataSummary {
    fn new(prep: &Prepared) -> Self {
        DataSummary {
            provenance: prep.data.provenance().clone(),
            records: prep.data.len(),
            train: prep.train.len(),
            test: prep.test.len(),
            test_out_of_range: prep.test.records().iter().filter(|r| r.out_of_range).count(),
            normalization: prep.data.normalization().cloned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub model: KohModel,
    pub parameter_names: Vec<String>,
    pub acceptance_rate: f64,
    pub chain_acceptance: Vec<f64>,
    pub burn_in: usize,
    pub samples_per_chain: usize,
    pub chain_thin: usize,
    pub thin: usize,
    pub r_hat: Vec<Option<f64>>,
    pub max_r_hat: Option<f64>,
    pub posterior_mean: Vec<f64>,
    pub posterior_sd: Vec<f64>,
    pub gp_points: usize,
}

impl CalibrationSummary {
    pub fn new(cal: &CalibrationStage) -> Self {
        let r = &cal.result;
        let n = r.sample_count().max(1) as f64;
        let posterior_sd = r
            .posterior_mean
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let ss: f64 = r
                    .chains
                    .iter()
                    .flat_map(|c| c.samples.iter().map(move |s| (s[k] - m).powi(2)))
                    .sum();
                (ss / n).sqrt()
            })
            .collect();
        CalibrationSummary {
            model: cal.model.clone(),
            parameter_names: r.parameter_names.clone(),
            acceptance_rate: r.acceptance_rate,
            chain_acceptance: r.chains.iter().map(|c| c.acceptance).collect(),
            burn_in: r.burn_in,
            samples_per_chain: r.chains.first().map_or(0, |c| c.samples.len()),
            chain_thin: r.chain_thin,
            thin: r.thin,
            r_hat: r.r_hat.clone(),
            max_r_hat: r.max_r_hat(),
            posterior_mean: r.posterior_mean.clone(),
            posterior_sd,
            gp_points: r.conditioning.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub mode: Mode,
    pub split: f64,
    pub normalize: bool,
    pub data: Option<DataSummary>,
    pub prior: Option<PriorStage>,
    pub discovery: Option<DiscoveryStage>,
    pub calibration: Option<CalibrationSummary>,
    pub forecast: Option<ForecastStage>,
    pub proposals: Option<Vec<ExperimentProposal>>,
    pub failure: Option<StageFailure>,
    /// Posterior samples; written to `chains.csv`, not to `report.json`.
    #[serde(skip)]
    pub chains: Option<Vec<Chain>>,
}

impl RunReport {
    fn empty(config: &RunConfig) -> Self {
        RunReport {
            seed: config.seed,
            mode: config.mode,
            split: config.split,
            normalize: config.normalize,
            data: None,
            prior: None,
            discovery: None,
            calibration: None,
            forecast: None,
            proposals: None,
            failure: None,
            chains: None,
        }
    }
}

/// A failed run: the error plus everything computed before it.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct PipelineFailure {
    #[source]
    pub error: PipelineError,
    pub partial: Box<RunReport>,
}

/// Stage outputs kept alongside the report for re-running later stages.
#[derive(Clone, Debug, Default)]
pub struct RunState {
    pub prior: Option<PriorStage>,
    pub discovery: Option<DiscoveryStage>,
    pub calibration: Option<CalibrationStage>,
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunReport, PipelineFailure> {
    run_pipeline_with_state(config).map(|(r, _)| r).map_err(|(f, _)| f)
}

pub fn run_pipeline_with_state(config: &RunConfig) -> Result<(RunReport, RunState), (PipelineFailure, RunState)> {
    let mut report = RunReport::empty(config);
    let mut state = RunState::default();
    match run_stages(config, &mut report, &mut state) {
        Ok(()) => Ok((report, state)),
        Err(error) => {
            report.failure = Some(StageFailure {
                stage: error.stage,
                message: error.source.to_string(),
            });
            Err((
                PipelineFailure {
                    error,
                    partial: Box::new(report),
                },
                state,
            ))
        }
    }
}

fn run_stages(config: &RunConfig, report: &mut RunReport, state: &mut RunState) -> Result<(), PipelineError> {
    let prep = prepare(config)?;
    report.data = Some(DataSummary::new(&prep));

    state.prior = stage_prior(config, &prep)?;
    report.prior = state.prior.clone();

    let discovery = stage_discover(config, &prep, state.prior.as_ref())?;
    report.discovery = Some(discovery.clone());
    state.discovery = Some(discovery);

    if !config.calibration.enabled {
        return Ok(());
    }
    let cal = stage_calibrate(config, &prep, state.discovery.as_ref().expect("set above"))?;
    report.calibration = Some(CalibrationSummary::new(&cal));
    report.chains = Some(cal.result.chains.clone());

    let forecast = stage_forecast(config, &prep, state.prior.as_ref(), &cal)?;
    let wants_doe = config.doe.enabled && (config.doe.always || forecast.coverage < forecast.level);
    report.forecast = Some(forecast);
    state.calibration = Some(cal);

    if wants_doe {
        let cal = state.calibration.as_ref().expect("set above");
        report.proposals = Some(stage_propose(config, &prep, cal)?);
    }
    Ok(())
}

/// Write intermediate state files for the stages that ran.
pub fn emit_state(state: &RunState, dir: &Path) -> Result<(), PipelineError> {
    let err = at::<StageError>(Stage::Emit);
    if let Some(p) = &state.prior {
        write_json(&dir.join(PRIOR_FILE), p).map_err(err)?;
    }
    if let Some(d) = &state.discovery {
        write_json(&dir.join(CANDIDATES_FILE), d).map_err(at::<StageError>(Stage::Emit))?;
    }
    if let Some(c) = &state.calibration {
        write_json(&dir.join(CALIBRATION_FILE), c).map_err(at::<StageError>(Stage::Emit))?;
    }
    Ok(())
}

/// Run the pipeline and write the report, state files and CSVs to `dir`,
/// including the partial results of a failed run.
pub fn run_and_emit(config: &RunConfig, dir: &Path) -> Result<RunReport, PipelineFailure> {
    let (outcome, state) = match run_pipeline_with_state(config) {
        Ok((r, s)) => (Ok(r), s),
        Err((f, s)) => (Err(f), s),
    };
    let report = match &outcome {
        Ok(r) => r,
        Err(f) => &f.partial,
    };
    let written = emit_report(report, dir)
        .map_err(at(Stage::Emit))
        .and_then(|()| emit_state(&state, dir));
    match (outcome, written) {
        (Ok(r), Ok(())) => Ok(r),
        (Ok(r), Err(error)) => Err(PipelineFailure {
            error,
            partial: Box::new(r),
        }),
        (Err(f), _) => Err(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quick_config(seed: u64) -> RunConfig {
        let mut cfg = RunConfig::from_toml(&format!(
            "seed = {seed}\nnormalize = false\n[data]\nsource = \"synthetic\"\nrecords = 300\n"
        ))
        .unwrap();
        cfg.discovery.population = 60;
        cfg.discovery.generations = 5;
        cfg.calibration.mcmc.burn_in = 500;
        cfg.calibration.mcmc.samples = 500;
        cfg.calibration.predictive.max_samples = Some(20);
        cfg.doe.grid = 8;
        cfg.doe.always = true;
        cfg
    }

    #[test]
    fn split_errors_are_tagged() {
        let mut cfg = quick_config(1);
        cfg.split = 1.0;
        let f = run_pipeline(&cfg).unwrap_err();
        assert_eq!(f.error.stage, Stage::Split);
        assert!(f.to_string().starts_with("[split]"), "{f}");
        assert!(f.partial.data.is_none());
        assert_eq!(f.partial.failure.as_ref().unwrap().stage, Stage::Split);
    }

    #[test]
    fn pinned_candidate_out_of_range() {
        let mut cfg = quick_config(2);
        cfg.pin_candidate = Some(99);
        let f = run_pipeline(&cfg).unwrap_err();
        assert_eq!(f.error.stage, Stage::Select);
        assert!(f.partial.prior.is_some());
        assert!(f.partial.discovery.is_none());
    }

    #[test]
    fn full_run_has_every_section() {
        let r = run_pipeline(&quick_config(3)).unwrap();
        assert!(r.prior.is_some());
        let d = r.discovery.as_ref().unwrap();
        assert_eq!(d.chosen, 0);
        assert!(r.calibration.is_some());
        let f = r.forecast.as_ref().unwrap();
        assert_eq!(f.series.len(), r.data.as_ref().unwrap().test);
        for row in &f.series {
            assert!(((row.hi - row.lo) - 2.0 * row.sigma).abs() <= 1e-12);
        }
        assert_eq!(r.proposals.as_ref().unwrap().len(), 5);
        assert!(r.failure.is_none());
    }

    #[test]
    fn stage_isolation() {
        let full = run_pipeline(&quick_config(4)).unwrap();
        let mut cfg = quick_config(4);
        cfg.doe.enabled = false;
        let no_doe = run_pipeline(&cfg).unwrap();
        assert!(no_doe.proposals.is_none());
        assert_eq!(no_doe.forecast, full.forecast);
        assert_eq!(no_doe.calibration, full.calibration);
        cfg.calibration.enabled = false;
        let no_cal = run_pipeline(&cfg).unwrap();
        assert!(no_cal.calibration.is_none() && no_cal.forecast.is_none() && no_cal.chains.is_none());
        assert_eq!(no_cal.discovery, full.discovery);
        assert_eq!(no_cal.prior, full.prior);
        assert_eq!(no_cal.data, full.data);
    }

    #[test]
    fn fixed_and_override_priors() {
        let r = run_pipeline(&quick_config(5)).unwrap();
        let model = r.discovery.unwrap().model;
        let mut cc = CalibrationConfig::default();
        cc.fixed = vec!["rho".into(), "theta_p0".into()];
        cc.overrides
            .insert("noise_var".into(), ParamPrior::Fixed { value: 1e-4 });
        let koh = build_koh(&cc, model.clone()).unwrap();
        let names = koh.parameter_names();
        let rho = names.iter().position(|n| n == "rho").unwrap();
        assert_eq!(koh.theta_priors[rho], ParamPrior::Fixed { value: 1.0 });
        assert!(koh.theta_priors[0].is_fixed());
        assert_eq!(koh.hyper_priors[3], ParamPrior::Fixed { value: 1e-4 });
        cc.fixed = vec!["signal_var".into()];
        assert!(build_koh(&cc, model.clone()).is_err());
        cc.fixed = vec!["nope".into()];
        assert!(build_koh(&cc, model).is_err());
    }
}
