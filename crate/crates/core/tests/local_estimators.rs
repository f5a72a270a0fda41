use counterfact_core::local::*;
use counterfact_core::numerics::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_donors(seed: u64, t: usize, j: usize) -> (Vec<f64>, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let donors = Matrix::from_fn(t, j, |_, _| rng.random_range(-2.0..2.0));
    let treated = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    (treated, donors)
}

fn sc_objective(y: &[f64], c: &Matrix, w: &[f64]) -> f64 {
    c.matvec(w).iter().zip(y).map(|(p, y)| (y - p).powi(2)).sum()
}

/// Exhaustive search over the 5-simplex on a 0.01 lattice.
fn grid_minimum(y: &[f64], c: &Matrix) -> f64 {
    let n = 100;
    let mut best = f64::INFINITY;
    let mut w = [0.0; 5];
    for a in 0..=n {
        for b in 0..=n - a {
            for d in 0..=n - a - b {
                for e in 0..=n - a - b - d {
                    let f = n - a - b - d - e;
                    w[0] = a as f64 / n as f64;
                    w[1] = b as f64 / n as f64;
                    w[2] = d as f64 / n as f64;
                    w[3] = e as f64 / n as f64;
                    w[4] = f as f64 / n as f64;
                    best = best.min(sc_objective(y, c, &w));
                }
            }
        }
    }
    best
}

#[test]
fn sc_beats_simplex_grid_search() {
    for seed in 0..2 {
        let (y, c) = random_donors(seed, 12, 5);
        let fit = fit_sc(&y, &c).unwrap();
        let grid = grid_minimum(&y, &c);
        assert!(fit.objective <= grid + 1e-6, "seed {seed}: {} vs grid {grid}", fit.objective);
        assert!((fit.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fit.gamma.iter().all(|&g| g >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn sc_predictions_stay_inside_donor_range(seed in 0u64..1000, post in 1usize..6) {
        let (y, c) = random_donors(seed, 10, 4);
        let fit = fit_sc(&y, &c).unwrap();
        let (_, future) = random_donors(seed + 7, post, 4);
        for (t, p) in fit.predict(&future).iter().enumerate() {
            let row = future.row(t);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*p >= lo - 1e-12 && *p <= hi + 1e-12);
        }
    }
}

fn shifted_fixture() -> (Vec<f64>, Matrix) {
    // five controls at different levels around a shared pattern; the treated unit sits
    // above all of them, outside the convex hull
    let t = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let pattern: Vec<f64> = (0..t).map(|s| (s as f64 * 0.5).sin() + 0.02 * s as f64).collect();
    let levels = [1.0, 2.0, 3.0, 4.0, 5.0];
    let controls = Matrix::from_fn(t, 5, |s, j| levels[j] + pattern[s] * (1.0 + 0.1 * j as f64) + noise.sample(&mut rng));
    let treated = (0..t).map(|s| 7.0 + pattern[s] * 1.25 + noise.sample(&mut rng)).collect();
    (treated, controls)
}

fn rows(m: &Matrix, range: std::ops::Range<usize>) -> Matrix {
    Matrix::from_fn(range.len(), m.cols(), |r, c| m[(range.start + r, c)])
}

#[test]
fn ascm_bias_correction_beats_sc_on_holdout() {
    let (y, c) = shifted_fixture();
    let (fit_end, end) = (30, 40);
    let pre = rows(&c, 0..fit_end);
    let hold = rows(&c, fit_end..end);
    let model = fit_ascm(&y[..fit_end], &pre, &hold, &default_lambda_grid()).unwrap();
    let sc_path = model.base.predict(&hold);
    let err = |path: &[f64]| -> f64 {
        path.iter().zip(&y[fit_end..end]).map(|(p, a)| (p - a).powi(2)).sum::<f64>()
    };
    assert!(err(&model.prediction) < err(&sc_path), "ascm {} sc {}", err(&model.prediction), err(&sc_path));
}

#[test]
fn huge_penalty_recovers_sc() {
    let (y, c) = shifted_fixture();
    let pre = rows(&c, 0..30);
    let post = rows(&c, 30..40);
    let model = fit_ascm(&y[..30], &pre, &post, &[1e12]).unwrap();
    let sc_path = model.base.predict(&post);
    for (a, b) in model.prediction.iter().zip(&sc_path) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

fn simulate_arma(phi: &[f64], theta: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let burn = 200;
    let mut x = vec![0.0; n + burn];
    let mut e = vec![0.0; n + burn];
    for t in 0..n + burn {
        e[t] = normal.sample(&mut rng);
        let mut v = e[t];
        for (i, p) in phi.iter().enumerate() {
            if t > i {
                v += p * x[t - 1 - i];
            }
        }
        for (j, q) in theta.iter().enumerate() {
            if t > j {
                v += q * e[t - 1 - j];
            }
        }
        x[t] = v;
    }
    x.split_off(burn)
}

#[test]
fn white_noise_mostly_selects_the_mean_model() {
    // spurious spectral peaks let high ARMA orders win some seeds, so the check is on the
    // modal order across seeds
    let mut counts = std::collections::BTreeMap::new();
    for seed in 0..30 {
        let y: Vec<f64> = simulate_arma(&[], &[], 300, seed).iter().map(|v| v + 10.0).collect();
        let model = fit_carima(&y, &ArimaGrid::default()).unwrap();
        *counts.entry(model.order).or_insert(0) += 1;
        if model.order == ArimaOrder::new(0, 0, 0) {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            for f in forecast_arima(&model, &y, 5) {
                assert!((f - mean).abs() < 1e-12);
            }
        }
    }
    let modal = counts.iter().max_by_key(|(_, &c)| c).map(|(o, _)| *o).unwrap();
    assert_eq!(modal, ArimaOrder::new(0, 0, 0), "{counts:?}");
}

#[test]
fn ar1_coefficient_is_recovered() {
    let y = simulate_arma(&[0.8], &[], 400, 5);
    let model = fit_carima(&y, &ArimaGrid::default()).unwrap();
    assert_eq!(model.order, ArimaOrder::new(1, 0, 0), "{model:?}");
    assert!((0.7..=0.9).contains(&model.ar[0]), "{:?}", model.ar);
}

#[test]
fn ramp_selects_differencing() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y: Vec<f64> = (0..60).map(|t| 3.0 + 0.5 * t as f64 + rng.random_range(-0.01..0.01)).collect();
    let model = fit_carima(&y, &ArimaGrid::default()).unwrap();
    assert_eq!(model.order.d, 1, "{model:?}");
    // the no-differencing candidates all score worse
    for p in 0..=3 {
        for q in 0..=3 {
            if let Some(m) = fit_arima_order(&y, ArimaOrder::new(p, 0, q), 4) {
                assert!(m.aicc > model.aicc);
            }
        }
    }
}

#[test]
fn css_fit_is_locally_optimal() {
    let y = simulate_arma(&[0.6], &[0.4], 300, 21);
    let model = fit_arima_order(&y, ArimaOrder::new(1, 0, 1), 4).unwrap();
    let at = |ar: &[f64], ma: &[f64]| css_objective(&y, model.order, ar, ma, model.intercept, 4);
    let best = at(&model.ar, &model.ma);
    assert!((best - model.css).abs() <= 1e-9 * best);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let ar = [model.ar[0] + rng.random_range(-0.02..0.02)];
        let ma = [model.ma[0] + rng.random_range(-0.02..0.02)];
        assert!(best <= at(&ar, &ma), "perturbation {ar:?} {ma:?} improves on {:?} {:?}", model.ar, model.ma);
    }
}

#[test]
fn difference_round_trip_on_real_values() {
    let y: Vec<f64> = (0..30).map(|t| (t as f64 * 0.37).sin() * 10.0 + 0.1 * t as f64).collect();
    let back = integrate(&difference(&y, 1), 1, &y[..1]);
    for (a, b) in back.iter().zip(&y) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn short_series_is_rejected() {
    assert!(matches!(
        fit_carima(&[1.0; 19], &ArimaGrid::default()),
        Err(LocalError::TooShort { needed: 20, available: 19 })
    ));
}
