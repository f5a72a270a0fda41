use counterfact_core::global::*;
use counterfact_core::numerics::{BatchObjective, Matrix, OptimizerConfig};
use counterfact_core::panel::{build_panel, PanelDataset, UnitSeries};
use counterfact_core::synth::{generate_scenario, sample_std, InterventionSpec, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wavy_panel(n_units: usize, len: usize, t0: usize, seed: u64) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = (0..n_units)
        .map(|i| {
            let level = 10.0 + i as f64;
            let values = (0..len)
                .map(|t| level + (t as f64 * 0.9).sin() * 2.0 + rng.random_range(-0.5..0.5))
                .collect();
            UnitSeries::new(format!("u{i}"), i == 0, values)
        })
        .collect();
    build_panel(units, t0).unwrap()
}

/// Central differences with step 1e-5, compared coordinate-wise at 1e-4 relative.
fn check_gradient(f: impl Fn(&[f64], &mut [f64]) -> f64, params: &[f64]) {
    let mut grad = vec![0.0; params.len()];
    f(params, &mut grad);
    let mut scratch = vec![0.0; params.len()];
    let h = 1e-5;
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for k in 0..params.len() {
        let mut p = params.to_vec();
        p[k] += h;
        let up = f(&p, &mut scratch);
        p[k] -= 2.0 * h;
        let down = f(&p, &mut scratch);
        let fd = (up - down) / (2.0 * h);
        let tol = 1e-4 * grad[k].abs().max(fd.abs()).max(1e-3 * scale);
        assert!((fd - grad[k]).abs() <= tol, "coordinate {k}: analytic {} vs fd {fd}", grad[k]);
    }
}

fn random_params(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn small_probcp() -> ProbCpConfig {
    ProbCpConfig {
        season: 4,
        window_w: Some(8),
        hidden_size: 3,
        epochs: 20,
        ..ProbCpConfig::default()
    }
}

fn small_mixer(activation: Activation, n_blocks: usize) -> MixerConfig {
    MixerConfig {
        season: 4,
        window_w: Some(8),
        n_blocks,
        activation,
        epochs: 20,
        ..MixerConfig::default()
    }
}

#[test]
fn probcp_gradient_matches_finite_differences() {
    let panel = wavy_panel(3, 30, 26, 1);
    let obj = ProbCpObjective::from_panel(&panel, &small_probcp()).unwrap();
    let params = random_params(obj.n_params(), 2, 0.3);
    check_gradient(|p, g| obj.full_value_and_grad(p, g), &params);
}

#[test]
fn mixer_gradient_matches_finite_differences() {
    let panel = wavy_panel(3, 30, 26, 3);
    for activation in [Activation::Relu, Activation::Linear] {
        let obj = MixerObjective::from_panel(&panel, &small_mixer(activation, 2)).unwrap();
        let params = random_params(obj.n_params(), 4, 0.3);
        check_gradient(|p, g| obj.full_value_and_grad(p, g), &params);
    }
}

#[test]
fn mixer_gradient_with_covariates() {
    let base = wavy_panel(3, 30, 26, 5);
    let units = base
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let cov = (0..30).map(|t| ((t + i) as f64 * 0.3).cos()).collect();
            u.clone().with_covariate("price", cov)
        })
        .collect();
    let panel = build_panel(units, 26).unwrap();
    let obj = MixerObjective::from_panel(&panel, &small_mixer(Activation::Relu, 1)).unwrap();
    let params = random_params(obj.n_params(), 6, 0.3);
    check_gradient(|p, g| obj.full_value_and_grad(p, g), &params);
    let obj = ProbCpObjective::from_panel(&panel, &small_probcp()).unwrap();
    let params = random_params(obj.n_params(), 7, 0.3);
    check_gradient(|p, g| obj.full_value_and_grad(p, g), &params);
}

#[test]
fn batch_gradient_is_mean_of_items() {
    let panel = wavy_panel(3, 30, 26, 8);
    let obj = ProbCpObjective::from_panel(&panel, &small_probcp()).unwrap();
    let params = random_params(obj.n_params(), 9, 0.3);
    let mut g_all = vec![0.0; params.len()];
    let all: Vec<usize> = (0..obj.n_items()).collect();
    let v_all = obj.batch_value_and_grad(&params, &all, &mut g_all);
    let mut g_sum = vec![0.0; params.len()];
    let mut v_sum = 0.0;
    let mut g = vec![0.0; params.len()];
    for &i in &all {
        v_sum += obj.batch_value_and_grad(&params, &[i], &mut g);
        g_sum.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = all.len() as f64;
    assert!((v_all - v_sum / n).abs() < 1e-12);
    for (a, b) in g_all.iter().zip(&g_sum) {
        assert!((a - b / n).abs() < 1e-12);
    }
}

#[test]
fn constant_panel_forecasts_the_constant() {
    let units = (0..4)
        .map(|i| UnitSeries::new(format!("c{i}"), i == 0, vec![42.0; 40]))
        .collect();
    let panel = build_panel(units, 30).unwrap();
    let model = ProbCpModel::fit(&panel, &small_probcp()).unwrap();
    for fc in model.predict_all(&panel).unwrap() {
        for v in fc.paths.data() {
            assert!((v - 42.0).abs() < 1e-3, "{v}");
        }
    }
    let mixer = MixerModel::fit(&panel, &small_mixer(Activation::Relu, 2)).unwrap();
    for v in mixer.predict_unit(&panel, "c1").unwrap() {
        assert!((v - 42.0).abs() < 1e-3, "{v}");
    }
}

fn smape(a: &[f64], f: &[f64]) -> f64 {
    a.iter()
        .zip(f)
        .map(|(a, f)| 2.0 * (a - f).abs() / (a.abs() + f.abs()))
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn periodic_panel_is_forecast_from_seasonal_features() {
    let profile = [3.0, -1.0, 0.5, -2.5];
    let units = (0..5)
        .map(|i| {
            let level = 20.0 + 3.0 * i as f64;
            let values = (0..48).map(|t| level + profile[t % 4]).collect();
            UnitSeries::new(format!("p{i}"), i < 2, values)
        })
        .collect();
    let panel = build_panel(units, 40).unwrap();
    let model = ProbCpModel::fit(&panel, &small_probcp()).unwrap();
    for fc in model.predict_all(&panel).unwrap() {
        let actual = &panel.unit(&fc.unit_id).unwrap().values[40..];
        assert!(smape(actual, &fc.point) < 0.01, "{} {:?}", fc.unit_id, fc.point);
    }
}

#[test]
fn quantile_paths_are_sorted_and_median_is_point() {
    let panel = wavy_panel(6, 60, 50, 10);
    let model = ProbCpModel::fit(&panel, &small_probcp()).unwrap();
    let median = model.config.taus.iter().position(|&t| t == 0.5).unwrap();
    for fc in model.predict_all(&panel).unwrap() {
        for j in 0..fc.paths.rows() {
            let row = fc.paths.row(j);
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(row[median], fc.point[j]);
        }
    }
}

#[test]
fn fits_are_bit_exact_for_a_seed() {
    let panel = wavy_panel(5, 60, 50, 11);
    let a = ProbCpModel::fit(&panel, &small_probcp()).unwrap();
    let b = ProbCpModel::fit(&panel, &small_probcp()).unwrap();
    assert_eq!(a.params, b.params);
    let cfg = small_mixer(Activation::Relu, 2);
    let a = MixerModel::fit(&panel, &cfg).unwrap();
    let b = MixerModel::fit(&panel, &cfg).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn removing_a_unit_moves_every_other_prediction() {
    let panel = wavy_panel(3, 40, 30, 12);
    let reduced = panel.without_unit("u2").unwrap();
    let cfg = small_probcp();
    let full = ProbCpModel::fit(&panel, &cfg).unwrap();
    let part = ProbCpModel::fit(&reduced, &cfg).unwrap();
    let mcfg = small_mixer(Activation::Relu, 1);
    let mfull = MixerModel::fit(&panel, &mcfg).unwrap();
    let mpart = MixerModel::fit(&reduced, &mcfg).unwrap();
    for id in ["u0", "u1"] {
        assert_ne!(
            full.predict_unit(&panel, id).unwrap().point,
            part.predict_unit(&reduced, id).unwrap().point
        );
        assert_ne!(
            mfull.predict_unit(&panel, id).unwrap(),
            mpart.predict_unit(&reduced, id).unwrap()
        );
    }
}

/// Least-squares affine map from the raw demeaned window to the demeaned horizon.
fn affine_baseline_mse(panel: &PanelDataset, w: usize) -> f64 {
    let h = panel.horizon();
    let t0 = panel.t0();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for u in panel.units() {
        for start in 0..=t0 - w - h {
            let input = &u.values[start..start + w];
            let level = input.iter().sum::<f64>() / w as f64;
            rows.extend(input.iter().map(|v| v - level));
            rows.push(1.0);
            targets.push(u.values[start + w..start + w + h].iter().map(|v| v - level).collect::<Vec<_>>());
        }
    }
    let x = Matrix::new(targets.len(), w + 1, rows).unwrap();
    let mut sse = 0.0;
    for j in 0..h {
        let y: Vec<f64> = targets.iter().map(|t| t[j]).collect();
        let beta = counterfact_core::numerics::ridge_solve(&x, &y, 1e-9).unwrap();
        sse += x.matvec(&beta).iter().zip(&y).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
    }
    sse / (targets.len() * h) as f64
}

#[test]
fn linear_mixer_trains_no_worse_than_affine_baseline() {
    let panel = wavy_panel(4, 60, 50, 13);
    let cfg = MixerConfig {
        holdout_fraction: 0.0,
        ..small_mixer(Activation::Linear, 1)
    };
    let model = MixerModel::fit(&panel, &cfg).unwrap();
    let baseline = affine_baseline_mse(&panel, 8);
    let trained = model.final_train_loss * model.target_scale.powi(2);
    assert!(trained <= baseline * (1.0 + 1e-6), "mixer {trained} vs affine {baseline}");
    assert!(model.final_train_loss <= model.initial_train_loss);
}

#[test]
fn models_round_trip_through_json() {
    let panel = wavy_panel(3, 40, 30, 14);
    let model = ProbCpModel::fit(&panel, &small_probcp()).unwrap();
    let back: ProbCpModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
    assert_eq!(back.predict_unit(&panel, "u1").unwrap(), model.predict_unit(&panel, "u1").unwrap());
    let mixer = MixerModel::fit(&panel, &small_mixer(Activation::Relu, 1)).unwrap();
    let back: MixerModel = serde_json::from_str(&serde_json::to_string(&mixer).unwrap()).unwrap();
    assert_eq!(back.predict_unit(&panel, "u1").unwrap(), mixer.predict_unit(&panel, "u1").unwrap());
}

#[test]
fn errors_are_typed() {
    let panel = wavy_panel(3, 20, 12, 15);
    assert!(matches!(
        ProbCpModel::fit(&panel, &small_probcp()),
        Err(ForecastError::TooShort { .. })
    ));
    let panel = wavy_panel(3, 40, 30, 15);
    let model = ProbCpModel::fit(&panel, &small_probcp()).unwrap();
    assert!(matches!(
        model.predict_unit(&panel, "nope"),
        Err(ForecastError::UnknownUnit(_))
    ));
    let bad = ProbCpConfig {
        taus: vec![0.1, 0.9],
        ..small_probcp()
    };
    assert!(matches!(ProbCpModel::fit(&panel, &bad), Err(ForecastError::BadConfig(_))));
    let bad = ProbCpConfig {
        window_w: Some(3),
        ..small_probcp()
    };
    assert!(matches!(ProbCpModel::fit(&panel, &bad), Err(ForecastError::BadConfig(_))));
}

#[test]
fn control_predictions_are_unbiased_on_null_panels() {
    let cfg = ProbCpConfig {
        window_w: Some(28),
        epochs: 10,
        optimizer: OptimizerConfig {
            step_size: 1e-3,
            ..OptimizerConfig::default()
        },
        ..ProbCpConfig::default()
    };
    for seed in 0..10 {
        let sc = generate_scenario(&SynthConfig::new(50, 90, false, seed), &InterventionSpec::null()).unwrap();
        let panel = sc.panel();
        let model = ProbCpModel::fit(panel, &cfg).unwrap();
        let t0 = panel.t0();
        let pooled: Vec<f64> = panel.treated().flat_map(|u| u.values[..t0].to_vec()).collect();
        let sigma = sample_std(&pooled);
        let mut errors = Vec::new();
        for u in panel.controls() {
            let fc = model.predict_unit(panel, &u.unit_id).unwrap();
            errors.extend(u.values[t0..].iter().zip(&fc.point).map(|(a, p)| a - p));
        }
        let bias = errors.iter().sum::<f64>() / errors.len() as f64;
        assert!(bias.abs() <= 0.2 * sigma, "seed {seed}: bias {bias} sigma {sigma}");
    }
}
