mod common;

use glyphotrace::calibration::{
    fit_ols, rank_channels, CalibrationError, CalibrationModel, CalibrationSample,
};
use glyphotrace::device::{Device, DeviceConfig, LinkConfig, SensorModel, SimTime};
use glyphotrace::record::{EnvReading, TestRequest, WaterSource};
use glyphotrace::reference::calibration_samples;
use glyphotrace::spectrum::{Spectrum, WAVELENGTHS};
use glyphotrace::traffic_light::TrafficLightPolicy;
use proptest::prelude::*;

use common::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn samples_at(channel: u16, pairs: &[(f64, f64)]) -> Vec<CalibrationSample> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let s = Spectrum::zeros().with_channel(channel, x).unwrap();
            CalibrationSample::new(format!("R{i}"), y, s).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn ols_matches_normal_equations(
        slope in -20.0f64..20.0,
        intercept in -2000.0f64..2000.0,
        xs in prop::collection::vec(20.0f64..400.0, 3..40),
        noise in prop::collection::vec(-50.0f64..50.0, 40),
    ) {
        let pairs: Vec<(f64, f64)> = xs
            .iter()
            .zip(&noise)
            .map(|(&x, &e)| (x, (intercept + slope * x + e).max(0.0)))
            .collect();
        let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let ys_constant = pairs.iter().all(|p| p.1 == pairs[0].1);
        prop_assume!(spread > 1.0 && !ys_constant);
        let samples = samples_at(585, &pairs);
        let m = fit_ols(&samples, 585, "bench").unwrap();
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (s, i, r) = oracle_ols(&xs, &ys);
        prop_assert!(close(m.slope, s, 1e-9), "slope {} vs {}", m.slope, s);
        prop_assert!(close(m.intercept, i, 1e-9), "intercept {} vs {}", m.intercept, i);
        prop_assert!(close(m.r_squared.unwrap(), r * r, 1e-9));
        prop_assert_eq!(m.n_samples, pairs.len());
    }

    #[test]
    fn ranking_matches_pearson_by_brute_force(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<CalibrationSample> = (0..8)
            .map(|i| {
                let mut v = [0.0; 17];
                for x in v.iter_mut() {
                    *x = rng.random_range(0.0..300.0);
                }
                CalibrationSample::new(format!("{i}"), rng.random_range(0.0..1500.0), Spectrum::from_values(v).unwrap())
                    .unwrap()
            })
            .collect();
        let ranking = rank_channels(&samples, &WAVELENGTHS).unwrap();
        prop_assert_eq!(ranking.entries.len(), 17);
        let ys: Vec<f64> = samples.iter().map(|s| s.concentration_mg_l).collect();
        for e in &ranking.entries {
            let xs: Vec<f64> = samples.iter().map(|s| s.spectrum.get(e.channel_nm).unwrap()).collect();
            let (_, _, r) = oracle_ols(&xs, &ys);
            prop_assert!((e.r - r).abs() < 1e-9, "{} nm: {} vs {}", e.channel_nm, e.r, r);
        }
        for w in ranking.entries.windows(2) {
            prop_assert!(w[0].r.abs() >= w[1].r.abs());
        }
    }
}

#[test]
fn bundled_table_ranking() {
    let samples = calibration_samples();
    let ranking = rank_channels(&samples, &[560, 585]).unwrap();
    let ys: Vec<f64> = samples.iter().map(|s| s.concentration_mg_l).collect();
    for nm in [560, 585] {
        let xs: Vec<f64> = samples
            .iter()
            .map(|s| s.spectrum.get(nm).unwrap())
            .collect();
        let (_, _, r) = oracle_ols(&xs, &ys);
        assert!((ranking.score(nm).unwrap() - r).abs() < 1e-12);
    }
    assert_eq!(ranking.best().unwrap().channel_nm, 585);
}

#[test]
fn degenerate_inputs() {
    let one = samples_at(560, &[(100.0, 0.0)]);
    assert_eq!(
        fit_ols(&one, 560, "x"),
        Err(CalibrationError::TooFewSamples { needed: 2, got: 1 })
    );
    let flat = samples_at(560, &[(100.0, 0.0), (100.0, 50.0), (100.0, 80.0)]);
    assert_eq!(
        fit_ols(&flat, 560, "x"),
        Err(CalibrationError::DegenerateX(560))
    );
    assert_eq!(
        fit_ols(&flat, 561, "x"),
        Err(CalibrationError::UnsupportedChannel(561))
    );
    assert!(rank_channels(&flat, &[]).is_err());
}

/// Noise-free emulator readings at each calibration concentration run
/// through the device pipeline give the same value and colour as applying
/// the model to the averaged table reflectance.
#[test]
fn noise_free_pipeline_on_calibration_table() {
    let samples = calibration_samples();
    let sensor = SensorModel::reference(0.0, 1).unwrap();
    let model = CalibrationModel::handheld();
    let policy = TrafficLightPolicy::handheld();
    let link = LinkConfig::Lorawan {
        device_eui: "70B3D57ED0000001".into(),
        app_key: "00000000000000000000000000000000".into(),
    };
    let mut concentrations: Vec<f64> = samples.iter().map(|s| s.concentration_mg_l).collect();
    concentrations.dedup();
    for c in concentrations {
        let reps: Vec<f64> = samples
            .iter()
            .filter(|s| s.concentration_mg_l == c)
            .map(|s| s.spectrum.get(560).unwrap())
            .collect();
        let mean = reps.iter().sum::<f64>() / reps.len() as f64;
        let mut dev = Device::new(DeviceConfig::new("SG-1", link.clone()), &sensor, T0);
        dev.load_sample(c).unwrap();
        dev.start_test(
            TestRequest::glyphosate("T", WaterSource::Well),
            EnvReading::new(22.0, 55.0, [0.0, 0.0, 1.0]),
        )
        .unwrap();
        dev.tick(SimTime::from_secs(615)).unwrap();
        let r = dev.outbound().unwrap();
        let expected = model.intercept + model.slope * mean;
        assert!((r.predicted_value - expected).abs() < 1e-9, "{c} mg/l");
        assert_eq!(r.color, policy.classify(expected));
        assert_eq!(r.color, oracle_color(expected, -62.0, 538.0));
    }
}
