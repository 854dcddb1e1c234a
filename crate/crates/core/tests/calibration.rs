use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dpd_core::calibration::{
    log_posterior, predictive, run_mcmc_on, CalibrationResult, Chain, GpData, PredictiveOptions, PriorSettings,
};
use dpd_core::prior::compose;
use dpd_core::{generate_synthetic, Expr, Input, KohModel, McmcConfig, Mode, PriorModel, SyntheticSpec};

fn setup() -> (KohModel, GpData) {
    let spec = SyntheticSpec {
        records: 60,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, 3).unwrap();
    let prior = PriorModel::butler_volmer(spec.prior);
    let corr = Expr::parse("2*H - 0.7", &["H"]).unwrap();
    let model = compose(Some(prior), corr, Mode::Multiplicative, 1.0).unwrap();
    let koh = KohModel::with_default_priors(model, &PriorSettings::default()).unwrap();
    (koh, GpData::from_dataset(&data).unwrap())
}

fn centre(koh: &KohModel) -> Vec<f64> {
    let mut p = koh.model.parameters();
    p.extend([0.01, 0.5, 0.5, 1e-3]);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_posterior_ignores_record_order(seed in any::<u64>(), shift in -0.05f64..0.05) {
        let (koh, data) = setup();
        let mut params = centre(&koh);
        params[0] += shift;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted = GpData::new(
            order.iter().map(|&i| data.inputs[i]).collect(),
            order.iter().map(|&i| data.targets[i]).collect(),
        )
        .unwrap();
        let a = log_posterior(&koh, &params, &data).unwrap();
        let b = log_posterior(&koh, &params, &permuted).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{} vs {}", a, b);
    }
}

#[test]
fn predictive_variance_is_positive_for_every_subset() {
    let (koh, data) = setup();
    let cfg = McmcConfig {
        burn_in: 500,
        samples: 500,
        parallel: false,
        seed: 4,
        ..McmcConfig::default()
    };
    let full = run_mcmc_on(&koh, data, &cfg).unwrap();
    let inputs: Vec<Input> = (0..=10)
        .flat_map(|i| {
            (0..=10).map(move |j| Input {
                temperature: 0.2 + i as f64 * 0.1,
                humidity: -0.5 + j as f64 * 0.25,
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for size in [1, 2, 7, 50] {
        let mut pool: Vec<Vec<f64>> = full.chains.iter().flat_map(|c| c.samples.clone()).collect();
        pool.shuffle(&mut rng);
        pool.truncate(size);
        let subset = CalibrationResult {
            chains: vec![Chain {
                log_posterior: vec![0.0; pool.len()],
                samples: pool,
                acceptance: 1.0,
            }],
            ..full.clone()
        };
        let opts = PredictiveOptions {
            thin: Some(1),
            max_samples: None,
            ..PredictiveOptions::default()
        };
        let pred = predictive(&koh, &subset, &inputs, &opts).unwrap();
        for (k, s) in pred.sd.iter().enumerate() {
            assert!(s.is_finite() && *s >= 0.0, "subset {size}, input {k}: σ = {s}");
        }
    }
}
