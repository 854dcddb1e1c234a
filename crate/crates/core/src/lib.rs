//! Data-based physics discovery: correct a mechanistic prior model with a
//! symbolic term found by genetic programming, calibrate the result against
//! data with a Gaussian-process discrepancy, and propose new experiments
//! where the calibrated model is least certain.
//!
//! The modules follow the pipeline order. [`pipeline`] wires them together
//! behind a TOML [`RunConfig`].

pub mod calibration;
pub mod dataset;
pub mod discovery;
pub mod doe;
pub mod error;
pub mod expression;
pub mod optim;
pub mod pipeline;
pub mod prior;
pub mod selection;

pub use calibration::{CalibrationResult, KohModel, McmcConfig, ParamPrior, PredictiveDistribution};
pub use dataset::{generate_synthetic, Dataset, Input, Record, SyntheticSpec};
pub use discovery::{CandidateReport, Discovery, GpConfig};
pub use doe::{Desirability, ExperimentProposal};
pub use error::ConfigError;
pub use expression::Expr;
pub use pipeline::{PipelineError, RunConfig, RunReport, Stage};
pub use prior::{CompositeModel, Mode, PriorModel};
pub use selection::Metrics;
