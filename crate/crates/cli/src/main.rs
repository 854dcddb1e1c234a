use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dpd_core::pipeline::{
    self, read_json, write_candidates_csv, write_chains_csv, write_forecast_csv, write_json, write_parity_csv,
    write_proposals_csv, CalibrationStage, DataSource, DiscoveryStage, PipelineError, PriorStage, RunConfig, RunReport,
    Stage, StageError, CALIBRATION_FILE, CANDIDATES_FILE, PRIOR_FILE,
};
use dpd_core::prior::Mode;

#[derive(Parser)]
#[command(
    name = "dpd",
    version,
    about = "Discover, calibrate and validate corrections to physical models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Training fraction of the normalized time axis.
    #[arg(long, global = true)]
    split: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by the config as CSV.
    Synth,
    /// Fit the prior model by least squares.
    FitPrior,
    /// Evolve correction candidates and rank them.
    Discover,
    /// Sample the calibration posterior of the chosen model.
    Calibrate,
    /// Posterior-predictive forecast and coverage on the test records.
    Forecast,
    /// Propose new experiments where the model is most uncertain.
    Propose,
    /// The full pipeline.
    Run,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let Some(path) = &cli.config else {
        bail!("--config is required");
    };
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(split) = cli.split {
        cfg.split = split;
    }
    cfg.sync();
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn emit<T>(r: Result<T, StageError>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::new(Stage::Emit, e))
}

fn load_prior(cfg: &RunConfig, dir: &Path) -> Result<Option<PriorStage>> {
    if cfg.mode == Mode::Standalone {
        return Ok(None);
    }
    let path = dir.join(PRIOR_FILE);
    if !path.exists() {
        bail!("{} not found; run `dpd fit-prior` first", path.display());
    }
    Ok(Some(read_json(&path).map_err(|e| PipelineError::new(Stage::Load, e))?))
}

fn load_stage<T: serde::de::DeserializeOwned>(dir: &Path, file: &str, producer: &str) -> Result<T> {
    let path = dir.join(file);
    if !path.exists() {
        bail!("{} not found; run `dpd {producer}` first", path.display());
    }
    Ok(read_json(&path).map_err(|e| PipelineError::new(Stage::Load, e))?)
}

fn print_report(r: &RunReport) {
    if let Some(p) = &r.prior {
        println!("baseline test R² {:.4}", p.baseline.r2);
    }
    if let Some(d) = &r.discovery {
        println!(
            "chosen [{}] {}  test R² {:.4}",
            d.chosen, d.candidates[d.chosen].display, d.test.r2
        );
    }
    if let Some(c) = &r.calibration {
        let rhat = c.max_r_hat.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        println!("acceptance {:.3}  max R̂ {rhat}", c.acceptance_rate);
    }
    if let Some(f) = &r.forecast {
        println!(
            "calibrated test R² {:.4}  coverage {:.3} at {}",
            f.test.r2, f.coverage, f.level
        );
    }
    if let Some(p) = &r.proposals {
        println!("{} experiment proposals", p.len());
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let dir = out_dir(cli, &cfg);
    match cli.command {
        Command::Synth => {
            if !matches!(cfg.data, DataSource::Synthetic(_)) {
                bail!("`synth` needs a synthetic data source in the config");
            }
            let data = pipeline::load_data(&cfg)?;
            let path = dir.join("data.csv");
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            data.write_csv(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("{} records -> {}", data.len(), path.display());
        }
        Command::FitPrior => {
            let prep = pipeline::prepare(&cfg)?;
            let Some(stage) = pipeline::stage_prior(&cfg, &prep)? else {
                bail!("standalone mode has no prior to fit");
            };
            emit(write_json(&dir.join(PRIOR_FILE), &stage))?;
            println!("θ̂ = {:?}", stage.fit.prior.params);
            println!("baseline test R² {:.4}", stage.baseline.r2);
        }
        Command::Discover => {
            let prep = pipeline::prepare(&cfg)?;
            let prior = load_prior(&cfg, &dir)?;
            let stage = pipeline::stage_discover(&cfg, &prep, prior.as_ref())?;
            emit(write_json(&dir.join(CANDIDATES_FILE), &stage))?;
            emit(write_candidates_csv(&dir.join("candidates.csv"), &stage.candidates))?;
            for (i, c) in stage.candidates.iter().enumerate() {
                println!("{i}  bic {:.1}  R² {:.4}  {}", c.bic, c.test_r2, c.display);
            }
        }
        Command::Calibrate => {
            let prep = pipeline::prepare(&cfg)?;
            let discovery: DiscoveryStage = load_stage(&dir, CANDIDATES_FILE, "discover")?;
            let stage = pipeline::stage_calibrate(&cfg, &prep, &discovery)?;
            emit(write_json(&dir.join(CALIBRATION_FILE), &stage))?;
            emit(write_chains_csv(
                &dir.join("chains.csv"),
                &stage.result.parameter_names,
                &stage.result.chains,
            ))?;
            let rhat = stage
                .result
                .max_r_hat()
                .map_or("n/a".to_string(), |v| format!("{v:.3}"));
            println!("acceptance {:.3}  max R̂ {rhat}", stage.result.acceptance_rate);
        }
        Command::Forecast => {
            let prep = pipeline::prepare(&cfg)?;
            let prior = load_prior(&cfg, &dir)?;
            let cal: CalibrationStage = load_stage(&dir, CALIBRATION_FILE, "calibrate")?;
            let f = pipeline::stage_forecast(&cfg, &prep, prior.as_ref(), &cal)?;
            emit(write_forecast_csv(&dir.join("forecast.csv"), &f.series))?;
            emit(write_parity_csv(&dir.join("parity.csv"), &f.parity))?;
            println!(
                "calibrated test R² {:.4}  coverage {:.3} at {}",
                f.test.r2, f.coverage, f.level
            );
        }
        Command::Propose => {
            let prep = pipeline::prepare(&cfg)?;
            let cal: CalibrationStage = load_stage(&dir, CALIBRATION_FILE, "calibrate")?;
            let proposals = pipeline::stage_propose(&cfg, &prep, &cal)?;
            emit(write_proposals_csv(&dir.join("proposals.csv"), &proposals))?;
            for p in &proposals {
                println!(
                    "T {:.4}  H {:.4}  σ {:.4}  score {:.4}",
                    p.temperature, p.humidity, p.sigma, p.score
                );
            }
        }
        Command::Run => match pipeline::run_and_emit(&cfg, &dir) {
            Ok(report) => {
                print_report(&report);
                println!("report -> {}", dir.display());
            }
            Err(failure) => {
                print_report(&failure.partial);
                return Err(failure.error.into());
            }
        },
    }
    Ok(())
}

/// The error and its causes, skipping causes already quoted by the message.
fn render_error(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}
