use std::fs;

use dpd_core::pipeline::{emit_report, run_pipeline, DataSource, REPORT_FILE};
use dpd_core::{generate_synthetic, RunConfig};

fn small(seed: u64, extra: &str) -> RunConfig {
    let mut cfg = RunConfig::from_toml(&format!(
        "seed = {seed}\nnormalize = false\n[data]\nsource = \"synthetic\"\nrecords = 400\n{extra}"
    ))
    .unwrap();
    cfg.discovery.population = 120;
    cfg.discovery.generations = 15;
    cfg.calibration.mcmc.burn_in = 2000;
    cfg.calibration.mcmc.samples = 2000;
    cfg.doe.grid = 10;
    cfg
}

fn report_bytes(cfg: &RunConfig) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&run_pipeline(cfg).unwrap(), dir.path()).unwrap();
    fs::read(dir.path().join(REPORT_FILE)).unwrap()
}

#[test]
fn identical_config_gives_identical_report() {
    let mut cfg = small(21, "");
    cfg.parallel = false;
    cfg.doe.always = true;
    cfg.sync();
    let a = report_bytes(&cfg);
    assert_eq!(a, report_bytes(&cfg));
    cfg.parallel = true;
    cfg.sync();
    assert_eq!(a, report_bytes(&cfg), "thread pool changed the report");
}

#[test]
fn noise_free_data_is_recovered_and_covered() {
    let cfg = small(22, "noise_sd = 0.0\n");
    let r = run_pipeline(&cfg).unwrap();
    let f = r.forecast.unwrap();
    assert!(f.test.r2 >= 0.99, "{}", f.test.r2);
    assert!(f.coverage >= 0.95, "{}", f.coverage);
}

#[test]
fn file_source_matches_synthetic_source() {
    let cfg = small(23, "");
    let DataSource::Synthetic(spec) = &cfg.data else {
        unreachable!()
    };
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(spec, cfg.seed)
        .unwrap()
        .write_csv(dir.path().join("data.csv"))
        .unwrap();
    let mut text = cfg.to_toml();
    let start = text.find("[data]").unwrap();
    let end = text[start..].find("[prior]").unwrap() + start;
    text.replace_range(start..end, "[data]\nsource = \"file\"\npath = \"data.csv\"\n\n");
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, text).unwrap();
    let from_file = RunConfig::from_file(&cfg_path).unwrap();

    let mut a = run_pipeline(&cfg).unwrap();
    let mut b = run_pipeline(&from_file).unwrap();
    assert!(a.data.take().is_some() && b.data.take().is_some());
    assert_eq!(a.discovery, b.discovery);
    assert_eq!(a.forecast, b.forecast);
}

#[test]
fn standalone_square_is_found_exactly() {
    let mut cfg = RunConfig::from_toml(
        "seed = 24\nmode = \"standalone\"\nnormalize = false\n\
         [data]\nsource = \"synthetic\"\nmode = \"standalone\"\ncorrection = \"H^2\"\nnoise_sd = 0.0\nrecords = 500\n\
         [discovery.expr]\nvariables = [\"T\", \"H\"]\n",
    )
    .unwrap();
    cfg.calibration.enabled = false;
    cfg.doe.enabled = false;
    let r = run_pipeline(&cfg).unwrap();
    assert!(r.prior.is_none());
    let d = r.discovery.unwrap();
    assert_eq!(d.test.r2, 1.0, "{}", d.rendered);
    assert!(r.calibration.is_none() && r.forecast.is_none());
}
