//! Time-indexed observations: CSV ingestion, min–max normalization with
//! training-only statistics, temporal splitting, and a synthetic generator.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expression::Expr;
use crate::prior::{compose, Mode, PriorModel};

pub const TEMPERATURE: &str = "T";
pub const HUMIDITY: &str = "H";
/// Model input variables, in column order.
pub const INPUT_VARIABLES: [&str; 2] = [TEMPERATURE, HUMIDITY];

pub const CSV_HEADER: [&str; 4] = ["time", "temperature", "relative_humidity", "corrosion_current"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("duplicate timestamp {0}")]
    DuplicateTime(f64),
    #[error("dataset is empty")]
    Empty,
    #[error("column `{0}` is constant and cannot be normalized")]
    DegenerateColumn(String),
    #[error("dataset is already normalized")]
    AlreadyNormalized,
    #[error("dataset is not normalized")]
    NotNormalized,
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("split at {fraction} leaves the {side} portion empty")]
    EmptySplit { side: &'static str, fraction: f64 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// Model input `x = (T, H)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub temperature: f64,
    pub humidity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub time: f64,
    pub temperature: f64,
    pub humidity: f64,
    /// Observed corrosion current `y`.
    pub current: f64,
    /// Set when a normalized value falls outside `[0, 1]` (test rows only).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub out_of_range: bool,
}

impl Record {
    pub fn new(time: f64, temperature: f64, humidity: f64, current: f64) -> Self {
        Record {
            time,
            temperature,
            humidity,
            current,
            out_of_range: false,
        }
    }

    pub fn input(&self) -> Input {
        Input {
            temperature: self.temperature,
            humidity: self.humidity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
}

impl ColumnStats {
    fn from_values(name: &str, values: impl Iterator<Item = f64>) -> Result<Self, DatasetError> {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(max > min) {
            return Err(DatasetError::DegenerateColumn(name.to_string()));
        }
        Ok(ColumnStats { min, max })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub time: ColumnStats,
    pub temperature: ColumnStats,
    pub humidity: ColumnStats,
    pub current: ColumnStats,
    /// Fraction whose rows supplied the statistics, if restricted.
    pub train_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    File { path: String },
    Synthetic { seed: u64, spec: Box<SyntheticSpec> },
    InMemory,
}

/// Ordered observations with optional normalization state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<Record>,
    normalization: Option<Normalization>,
    provenance: Provenance,
}

impl Dataset {
    /// Sort by time and reject empty input or duplicate timestamps.
    pub fn new(mut records: Vec<Record>, provenance: Provenance) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        records.sort_by(|a, b| a.time.total_cmp(&b.time));
        if let Some(w) = records.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(DatasetError::DuplicateTime(w[0].time));
        }
        Ok(Dataset {
            records,
            normalization: None,
            provenance,
        })
    }

    pub fn from_records(records: Vec<Record>) -> Result<Self, DatasetError> {
        Dataset::new(records, Provenance::InMemory)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn inputs(&self) -> Vec<Input> {
        self.records.iter().map(Record::input).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.current).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    /// Load `time,temperature,relative_humidity,corrosion_current`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut ds = Dataset::parse_csv(&text)?;
        ds.provenance = Provenance::File {
            path: path.display().to_string(),
        };
        Ok(ds)
    }

    pub fn parse_csv(text: &str) -> Result<Self, DatasetError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| DatasetError::Csv(e.to_string()))?.clone();
        let mut idx = [0usize; 4];
        for (slot, name) in idx.iter_mut().zip(CSV_HEADER) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
        }
        let mut records = Vec::new();
        for (k, row) in reader.records().enumerate() {
            let row = row.map_err(|e| DatasetError::Csv(e.to_string()))?;
            // Header is line 1.
            let line = k + 2;
            let mut vals = [0.0; 4];
            for ((v, i), name) in vals.iter_mut().zip(idx).zip(CSV_HEADER) {
                let cell = row.get(i).unwrap_or("");
                *v = cell
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DatasetError::NonNumeric {
                        row: line,
                        column: name.to_string(),
                        value: cell.to_string(),
                    })?;
            }
            records.push(Record::new(vals[0], vals[1], vals[2], vals[3]));
        }
        Dataset::new(records, Provenance::InMemory)
    }

    /// CSV text in the ingestion schema, values at round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.time, r.temperature, r.humidity, r.current);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Min–max normalize every column.
    ///
    /// Time always uses the full range, since the split is defined on
    /// normalized time. With `train_fraction`, the other columns use only
    /// rows with normalized time `<= train_fraction`; later rows may then
    /// fall outside `[0, 1]` and are flagged, never clamped.
    pub fn normalize(&self, train_fraction: Option<f64>) -> Result<Dataset, DatasetError> {
        if self.normalization.is_some() {
            return Err(DatasetError::AlreadyNormalized);
        }
        let time = ColumnStats::from_values("time", self.records.iter().map(|r| r.time))?;
        let in_train = |r: &Record| train_fraction.is_none_or(|f| time.apply(r.time) <= f);
        let train: Vec<&Record> = self.records.iter().filter(|r| in_train(r)).collect();
        if train.is_empty() {
            return Err(DatasetError::EmptySplit {
                side: "train",
                fraction: train_fraction.unwrap_or(1.0),
            });
        }
        let stats = Normalization {
            time,
            temperature: ColumnStats::from_values("temperature", train.iter().map(|r| r.temperature))?,
            humidity: ColumnStats::from_values("relative_humidity", train.iter().map(|r| r.humidity))?,
            current: ColumnStats::from_values("corrosion_current", train.iter().map(|r| r.current))?,
            train_fraction,
        };
        let records = self
            .records
            .iter()
            .map(|r| {
                let n = Record::new(
                    stats.time.apply(r.time),
                    stats.temperature.apply(r.temperature),
                    stats.humidity.apply(r.humidity),
                    stats.current.apply(r.current),
                );
                let out = [n.temperature, n.humidity, n.current]
                    .iter()
                    .any(|v| !(0.0..=1.0).contains(v));
                Record { out_of_range: out, ..n }
            })
            .collect();
        Ok(Dataset {
            records,
            normalization: Some(stats),
            provenance: self.provenance.clone(),
        })
    }

    /// Map normalized values back to raw units.
    pub fn denormalize(&self) -> Result<Dataset, DatasetError> {
        let stats = self.normalization.ok_or(DatasetError::NotNormalized)?;
        let records = self
            .records
            .iter()
            .map(|r| {
                Record::new(
                    stats.time.invert(r.time),
                    stats.temperature.invert(r.temperature),
                    stats.humidity.invert(r.humidity),
                    stats.current.invert(r.current),
                )
            })
            .collect();
        Ok(Dataset {
            records,
            normalization: None,
            provenance: self.provenance.clone(),
        })
    }

    /// `train` holds records with `t <= fraction`, `test` the rest.
    pub fn split_by_time(&self, fraction: f64) -> Result<(Dataset, Dataset), DatasetError> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(DatasetError::InvalidFraction(fraction));
        }
        let (train, test): (Vec<Record>, Vec<Record>) = self.records.iter().partition(|r| r.time <= fraction);
        if train.is_empty() {
            return Err(DatasetError::EmptySplit {
                side: "train",
                fraction,
            });
        }
        if test.is_empty() {
            return Err(DatasetError::EmptySplit { side: "test", fraction });
        }
        let part = |records| Dataset {
            records,
            normalization: self.normalization,
            provenance: self.provenance.clone(),
        };
        Ok((part(train), part(test)))
    }
}

/// Periodic input signal: `base + amplitude·sin(2π·t/period + phase) +
/// drift·t + U(-jitter, jitter)` over `t ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signal {
    pub base: f64,
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
    pub drift: f64,
    pub jitter: f64,
}

impl Default for Signal {
    fn default() -> Self {
        Signal {
            base: 0.5,
            amplitude: 0.25,
            period: 0.2,
            phase: 0.0,
            drift: 0.0,
            jitter: 0.02,
        }
    }
}

impl Signal {
    fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        let jitter = if self.jitter > 0.0 {
            rng.random_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        self.base
            + self.amplitude * (std::f64::consts::TAU * t / self.period + self.phase).sin()
            + self.drift * t
            + jitter
    }
}

/// Ground truth for a synthetic corrosion-like dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Butler–Volmer parameters `θ*`.
    pub prior: [f64; 4],
    /// Correction expression over `T` and `H`.
    pub correction: String,
    pub mode: Mode,
    pub noise_sd: f64,
    pub records: usize,
    pub temperature: Signal,
    pub humidity: Signal,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            prior: [0.5, 0.3, 0.2, -0.4],
            correction: "2*H - 0.7".to_string(),
            mode: Mode::Multiplicative,
            noise_sd: 0.005,
            records: 1000,
            temperature: Signal {
                base: 0.6,
                amplitude: 0.25,
                period: 0.13,
                phase: 0.0,
                drift: 0.0,
                jitter: 0.03,
            },
            humidity: Signal {
                base: 0.7,
                amplitude: 0.22,
                period: 0.047,
                phase: 1.0,
                drift: 0.0,
                jitter: 0.03,
            },
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(DatasetError::InvalidSpec(format!(
                "noise_sd must be a finite value >= 0, got {}",
                self.noise_sd
            )));
        }
        if self.records < 10 {
            return Err(DatasetError::InvalidSpec(format!(
                "records must be at least 10, got {}",
                self.records
            )));
        }
        for (name, s) in [("temperature", &self.temperature), ("humidity", &self.humidity)] {
            if !(s.period > 0.0) || s.jitter < 0.0 {
                return Err(DatasetError::InvalidSpec(format!(
                    "{name} signal needs period > 0 and jitter >= 0"
                )));
            }
        }
        Ok(())
    }

    /// Noise-free model output at the given inputs.
    pub fn ground_truth(&self, inputs: &[Input]) -> Result<Vec<f64>, DatasetError> {
        let invalid = |e: String| DatasetError::InvalidSpec(e);
        let correction = Expr::parse(&self.correction, &INPUT_VARIABLES).map_err(|e| invalid(e.to_string()))?;
        let prior = match self.mode {
            Mode::Standalone => None,
            _ => Some(PriorModel::butler_volmer(self.prior)),
        };
        let model = compose(prior, correction, self.mode, 1.0).map_err(|e| invalid(e.to_string()))?;
        model.predict(inputs).map_err(|e| invalid(e.to_string()))
    }
}

/// Draw a dataset from `spec`. The RNG is consumed in record order, jitter
/// for `T`, then jitter for `H`, then observation noise.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.records;
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
    let mut times = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    let mut noises = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let temperature = spec.temperature.sample(t, &mut rng);
        let humidity = spec.humidity.sample(t, &mut rng);
        let e = if spec.noise_sd > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        times.push(t);
        inputs.push(Input { temperature, humidity });
        noises.push(e);
    }
    let truth = spec.ground_truth(&inputs)?;
    let records = times
        .iter()
        .zip(&inputs)
        .zip(truth.iter().zip(&noises))
        .map(|((t, x), (g, e))| Record::new(*t, x.temperature, x.humidity, g + e))
        .collect();
    Dataset::new(
        records,
        Provenance::Synthetic {
            seed,
            spec: Box::new(spec.clone()),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(times: &[f64]) -> Dataset {
        let records = times
            .iter()
            .enumerate()
            .map(|(i, t)| Record::new(*t, 10.0 + i as f64, 20.0 + (i * i) as f64, i as f64))
            .collect();
        Dataset::from_records(records).unwrap()
    }

    #[test]
    fn csv_loading_sorts() {
        let text = "time,temperature,relative_humidity,corrosion_current\n3,1,2,3\n1,4,5,6\n2,7,8,9\n";
        let d = Dataset::parse_csv(text).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.times(), vec![1.0, 2.0, 3.0]);
        assert_eq!(d.records()[0].temperature, 4.0);
    }

    #[test]
    fn csv_column_order_is_free() {
        let text = "corrosion_current,time,relative_humidity,temperature\n3,1,2,4\n";
        let d = Dataset::parse_csv(text).unwrap();
        assert_eq!(d.records()[0], Record::new(1.0, 4.0, 2.0, 3.0));
    }

    #[test]
    fn csv_errors() {
        let header = "time,temperature,relative_humidity,corrosion_current\n";
        assert_eq!(Dataset::parse_csv(header), Err(DatasetError::Empty));
        assert_eq!(
            Dataset::parse_csv("time,temperature,corrosion_current\n1,2,3\n"),
            Err(DatasetError::MissingColumn("relative_humidity".into()))
        );
        assert_eq!(
            Dataset::parse_csv(&format!("{header}1,2,3,4\n2,x,3,4\n")),
            Err(DatasetError::NonNumeric {
                row: 3,
                column: "temperature".into(),
                value: "x".into()
            })
        );
        assert_eq!(
            Dataset::parse_csv(&format!("{header}1,2,3,4\n1,2,3,4\n")),
            Err(DatasetError::DuplicateTime(1.0))
        );
        assert_eq!(Dataset::parse_csv(""), Err(DatasetError::MissingColumn("time".into())));
    }

    #[test]
    fn load_csv_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(
            &path,
            "time,temperature,relative_humidity,corrosion_current\n0,1,2,3\n5,2,3,4\n",
        )
        .unwrap();
        let d = Dataset::load_csv(&path).unwrap();
        assert_eq!(d.len(), 2);
        assert!(matches!(d.provenance(), Provenance::File { .. }));
        assert!(matches!(
            Dataset::load_csv(dir.path().join("missing.csv")),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn normalize_endpoints() {
        let records = [10.0, 20.0, 30.0]
            .iter()
            .enumerate()
            .map(|(i, v)| Record::new(i as f64, *v, *v, *v))
            .collect();
        let d = Dataset::from_records(records).unwrap().normalize(None).unwrap();
        let t: Vec<f64> = d.records().iter().map(|r| r.temperature).collect();
        assert_eq!(t, vec![0.0, 0.5, 1.0]);
        assert_eq!(d.times(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_rejects_constant_column() {
        let records = (0..3).map(|i| Record::new(i as f64, 5.0, i as f64, i as f64)).collect();
        let err = Dataset::from_records(records).unwrap().normalize(None).unwrap_err();
        assert_eq!(err, DatasetError::DegenerateColumn("temperature".into()));
    }

    #[test]
    fn train_statistics_apply_to_test_rows() {
        // Time 0..10, temperature equal to time: train (t <= 0.5) spans 0..5.
        let records = (0..=10)
            .map(|i| Record::new(i as f64, i as f64, i as f64, i as f64))
            .collect();
        let d = Dataset::from_records(records).unwrap().normalize(Some(0.5)).unwrap();
        let last = d.records()[10];
        assert_eq!(last.temperature, 2.0);
        assert!(last.out_of_range);
        assert!(!d.records()[5].out_of_range);
        let stats = d.normalization().unwrap();
        assert_eq!(stats.temperature, ColumnStats { min: 0.0, max: 5.0 });
        // Value 12 under train stats (0, 10) maps to 1.2.
        let s = ColumnStats { min: 0.0, max: 10.0 };
        assert!((s.apply(12.0) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn split_examples() {
        let d = ds(&[0.1, 0.4, 0.6, 0.9]);
        let (train, test) = d.split_by_time(0.5).unwrap();
        assert_eq!(train.times(), vec![0.1, 0.4]);
        assert_eq!(test.times(), vec![0.6, 0.9]);

        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let (train, test) = ds(&grid).split_by_time(0.08).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 92);

        let d = ds(&[0.5, 0.999]);
        assert!(matches!(
            d.split_by_time(0.999),
            Err(DatasetError::EmptySplit { side: "test", .. })
        ));
        assert!(matches!(
            d.split_by_time(0.1),
            Err(DatasetError::EmptySplit { side: "train", .. })
        ));
        assert_eq!(d.split_by_time(1.0), Err(DatasetError::InvalidFraction(1.0)));
        assert_eq!(d.split_by_time(0.0), Err(DatasetError::InvalidFraction(0.0)));
    }

    #[test]
    fn synthetic_identity_correction_equals_prior() {
        let spec = SyntheticSpec {
            noise_sd: 0.0,
            correction: "1".into(),
            mode: Mode::Multiplicative,
            records: 50,
            ..Default::default()
        };
        let d = generate_synthetic(&spec, 4).unwrap();
        let prior = PriorModel::butler_volmer(spec.prior).evaluate(&d.inputs()).unwrap();
        assert_eq!(d.targets(), prior);
    }

    #[test]
    fn synthetic_is_reproducible() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec, 17).unwrap().to_csv();
        let b = generate_synthetic(&spec, 17).unwrap().to_csv();
        assert_eq!(a.as_bytes(), b.as_bytes());
        let c = generate_synthetic(&spec, 18).unwrap().to_csv();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_noise_level() {
        let spec = SyntheticSpec {
            noise_sd: 0.01,
            records: 1000,
            ..Default::default()
        };
        let d = generate_synthetic(&spec, 5).unwrap();
        let truth = spec.ground_truth(&d.inputs()).unwrap();
        let r: Vec<f64> = d.targets().iter().zip(&truth).map(|(y, g)| y - g).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        assert!((0.008..=0.012).contains(&sd), "{sd}");
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        proptest::collection::btree_map(-100_000i32..100_000, (-50f64..50.0, 0f64..100.0, -5f64..5.0), 3..40)
            .prop_filter_map("distinct", |m| {
                let records = m
                    .iter()
                    .map(|(t, (a, b, c))| Record::new(*t as f64 / 100.0, *a, *b, *c))
                    .collect();
                Dataset::from_records(records).ok()
            })
    }

    proptest! {
        #[test]
        fn split_partitions(d in arb_dataset(), f in 0.01f64..0.99) {
            let n = d.normalize(None).unwrap();
            match n.split_by_time(f) {
                Ok((train, test)) => {
                    prop_assert!(train.records().iter().all(|r| r.time <= f));
                    prop_assert!(test.records().iter().all(|r| r.time > f));
                    let mut joined = train.records().to_vec();
                    joined.extend_from_slice(test.records());
                    prop_assert_eq!(joined, n.records().to_vec());
                }
                Err(DatasetError::EmptySplit { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn normalization_inverts(d in arb_dataset()) {
            let back = d.normalize(None).unwrap().denormalize().unwrap();
            for (a, b) in d.records().iter().zip(back.records()) {
                for (x, y) in [(a.time, b.time), (a.temperature, b.temperature), (a.humidity, b.humidity), (a.current, b.current)] {
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
                }
            }
        }

        #[test]
        fn test_rows_do_not_leak(d in arb_dataset(), bump in -100f64..100.0) {
            let Ok(a) = d.normalize(Some(0.5)) else { return Ok(()) };
            let cutoff = a.records().iter().filter(|r| r.time <= 0.5).count();
            let mut perturbed = d.records().to_vec();
            for r in &mut perturbed[cutoff..] {
                r.temperature += bump;
                r.humidity += bump;
                r.current += bump;
            }
            let b = Dataset::from_records(perturbed).unwrap().normalize(Some(0.5)).unwrap();
            let (sa, sb) = (a.normalization().unwrap(), b.normalization().unwrap());
            prop_assert_eq!(sa, sb);
            prop_assert_eq!(&a.records()[..cutoff], &b.records()[..cutoff]);
        }
    }

    #[test]
    fn synthetic_spec_validation() {
        let bad = SyntheticSpec {
            records: 5,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = SyntheticSpec {
            noise_sd: -1.0,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
    }
}
