//! Report and CSV emission. Numbers are written with the shortest
//! round-trip formatting so identical reports give identical bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{ForecastRow, ParityRow, RunReport, StageError};
use crate::calibration::Chain;
use crate::discovery::CandidateReport;
use crate::doe::ExperimentProposal;

pub const REPORT_FILE: &str = "report.json";
pub const PRIOR_FILE: &str = "prior.json";
pub const CANDIDATES_FILE: &str = "candidates.json";
pub const CALIBRATION_FILE: &str = "calibration.json";

fn create_dir(dir: &Path) -> Result<(), StageError> {
    fs::create_dir_all(dir).map_err(|source| StageError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageError> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| StageError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StageError> {
    let text = fs::read_to_string(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| StageError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), StageError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let csv_err = |source| StageError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_candidates_csv(path: &Path, candidates: &[CandidateReport]) -> Result<(), StageError> {
    write_rows(
        path,
        &["bic", "r2", "expression", "v_percent"],
        candidates.iter().map(|c| {
            [
                num(c.bic),
                num(c.test_r2),
                c.display.clone(),
                c.v_percent.map(num).unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_forecast_csv(path: &Path, rows: &[ForecastRow]) -> Result<(), StageError> {
    write_rows(
        path,
        &["t", "y", "mu", "lo", "hi"],
        rows.iter()
            .map(|r| [num(r.t), num(r.y), num(r.mu), num(r.lo), num(r.hi)]),
    )
}

pub fn write_parity_csv(path: &Path, rows: &[ParityRow]) -> Result<(), StageError> {
    write_rows(
        path,
        &["observed", "predicted"],
        rows.iter().map(|r| [num(r.observed), num(r.predicted)]),
    )
}

/// One row per kept sample, led by the chain index.
pub fn write_chains_csv(path: &Path, names: &[String], chains: &[Chain]) -> Result<(), StageError> {
    let mut header = vec!["chain"];
    header.extend(names.iter().map(String::as_str));
    write_rows(
        path,
        &header,
        chains.iter().enumerate().flat_map(|(c, chain)| {
            chain
                .samples
                .iter()
                .map(move |s| std::iter::once(c.to_string()).chain(s.iter().map(|v| num(*v))))
        }),
    )
}

pub fn write_proposals_csv(path: &Path, proposals: &[ExperimentProposal]) -> Result<(), StageError> {
    write_rows(
        path,
        &["T", "H", "mu", "sigma", "score"],
        proposals.iter().map(|p| {
            [
                num(p.temperature),
                num(p.humidity),
                num(p.mu),
                num(p.sigma),
                num(p.score),
            ]
        }),
    )
}

/// `report.json` plus one CSV per section present in the report.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(), StageError> {
    create_dir(dir)?;
    write_json(&dir.join(REPORT_FILE), report)?;
    if let Some(d) = &report.discovery {
        write_candidates_csv(&dir.join("candidates.csv"), &d.candidates)?;
    }
    if let Some(f) = &report.forecast {
        write_forecast_csv(&dir.join("forecast.csv"), &f.series)?;
        write_parity_csv(&dir.join("parity.csv"), &f.parity)?;
    }
    if let (Some(c), Some(chains)) = (&report.calibration, &report.chains) {
        write_chains_csv(&dir.join("chains.csv"), &c.parameter_names, chains)?;
    }
    if let Some(p) = &report.proposals {
        write_proposals_csv(&dir.join("proposals.csv"), p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::run_pipeline;
    use crate::pipeline::tests::quick_config;

    fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    }

    #[test]
    fn emit_is_byte_deterministic() {
        let report = run_pipeline(&quick_config(6)).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        emit_report(&report, a.path()).unwrap();
        emit_report(&report, b.path()).unwrap();
        let fa = read_dir(a.path());
        assert_eq!(fa, read_dir(b.path()));
        let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "candidates.csv",
                "chains.csv",
                "forecast.csv",
                "parity.csv",
                "proposals.csv",
                "report.json"
            ]
        );
        let back: RunReport = read_json(&a.path().join(REPORT_FILE)).unwrap();
        assert_eq!(back.discovery, report.discovery);
    }

    #[test]
    fn candidates_csv_rows() {
        let report = run_pipeline(&quick_config(7)).unwrap();
        let mut cands = report.discovery.unwrap().candidates;
        cands.truncate(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_candidates_csv(&path, &cands).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "bic,r2,expression,v_percent");
    }

    #[test]
    fn forecast_band_width() {
        let report = run_pipeline(&quick_config(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_forecast_csv(&path, &report.forecast.as_ref().unwrap().series).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        for (row, f) in r.records().zip(&report.forecast.unwrap().series) {
            let row = row.unwrap();
            let lo: f64 = row[3].parse().unwrap();
            let hi: f64 = row[4].parse().unwrap();
            assert!((hi - lo - 2.0 * f.sigma).abs() <= 1e-12);
        }
    }

    #[test]
    fn unwritable_directory_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let report = run_pipeline(&quick_config(9)).unwrap();
        let err = emit_report(&report, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
