use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};

use dpd_core::calibration::{log_posterior, GpData, GpFactor, GpHyper, McmcConfig, PriorSettings};
use dpd_core::discovery::{evolve, GpConfig};
use dpd_core::doe::select_proposals;
use dpd_core::prior::compose;
use dpd_core::{generate_synthetic, Dataset, Expr, Input, KohModel, Mode, PriorModel, SyntheticSpec};

fn data(records: usize) -> Dataset {
    let spec = SyntheticSpec {
        records,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, 1).unwrap()
}

fn koh() -> KohModel {
    let prior = PriorModel::butler_volmer([0.5, 0.3, 0.2, -0.4]);
    let corr = Expr::parse("2*H - 0.7", &["H"]).unwrap();
    let model = compose(Some(prior), corr, Mode::Multiplicative, 1.0).unwrap();
    KohModel::with_default_priors(model, &PriorSettings::default()).unwrap()
}

fn expression(c: &mut Criterion) {
    let text = "0.5*exp(0.3/T) + 0.2*exp(-0.4/T) * (2*H - 0.7) / (1 + exp(-H))";
    let expr = Expr::parse(text, &["T", "H"]).unwrap();
    let compiled = expr.compile(&["T", "H"]).unwrap();
    let d = data(1000);
    let t: Vec<f64> = d.records().iter().map(|r| r.temperature).collect();
    let h: Vec<f64> = d.records().iter().map(|r| r.humidity).collect();
    c.bench_function("expr/parse", |b| {
        b.iter(|| Expr::parse(black_box(text), &["T", "H"]).unwrap())
    });
    c.bench_function("expr/eval_columns_1000", |b| {
        b.iter(|| compiled.eval_columns(black_box(&[&t, &h])))
    });
}

fn gp(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp_factor");
    let hyper = GpHyper {
        signal_var: 0.1,
        length_scales: [0.3, 0.3],
        noise_var: 1e-3,
    };
    for n in [50, 100, 200] {
        let inputs: Vec<Input> = data(n).inputs();
        group.bench_with_input(BenchmarkId::from_parameter(n), &inputs, |b, inputs| {
            b.iter(|| GpFactor::new(black_box(inputs), hyper).unwrap())
        });
    }
    group.finish();

    let model = koh();
    let gp = GpData::from_dataset(&data(100)).unwrap();
    let mut params = vec![0.5, 0.3, 0.2, -0.4, 2.0, -0.7, 1.0];
    params.extend([0.01, 0.5, 0.5, 1e-4]);
    c.bench_function("koh/log_posterior_100", |b| {
        b.iter(|| log_posterior(&model, black_box(&params), &gp).unwrap())
    });
}

fn mcmc(c: &mut Criterion) {
    let model = koh();
    let train = data(200);
    let cfg = McmcConfig {
        burn_in: 500,
        samples: 500,
        max_gp_points: 50,
        parallel: false,
        ..McmcConfig::default()
    };
    let mut group = c.benchmark_group("mcmc");
    group.sample_size(10);
    group.bench_function("two_chains_1000_steps", |b| {
        b.iter(|| dpd_core::calibration::run_mcmc(&model, &train, &cfg).unwrap())
    });
    group.finish();
}

fn discovery(c: &mut Criterion) {
    let train = data(500);
    let prior = PriorModel::butler_volmer([0.5, 0.3, 0.2, -0.4]);
    let cfg = GpConfig {
        population: 200,
        generations: 1,
        parallel: false,
        ..GpConfig::default()
    };
    let mut group = c.benchmark_group("discovery");
    group.sample_size(10);
    group.bench_function("one_generation_200", |b| {
        b.iter(|| evolve(&train, Some(&prior), Mode::Multiplicative, &cfg).unwrap())
    });
    group.finish();
}

fn doe(c: &mut Criterion) {
    let n = 2500;
    let candidates: Vec<Input> = (0..n)
        .map(|i| Input {
            temperature: (i / 50) as f64 / 49.0,
            humidity: (i % 50) as f64 / 49.0,
        })
        .collect();
    let mu = vec![0.0; n];
    let sigma: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let d = vec![1.0; n];
    c.bench_function("doe/select_5_of_2500", |b| {
        b.iter_batched(
            || sigma.clone(),
            |s| select_proposals(&candidates, &mu, &s, &d, 5, 0.1).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, expression, gp, mcmc, discovery, doe);
criterion_main!(benches);
