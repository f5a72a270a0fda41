use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NumericsError;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
/// Iterations without a relative improvement of `tolerance` before the step is halved.
const PATIENCE: usize = 50;
/// Step halvings before giving up.
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Relative objective change regarded as no progress.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            max_iters: 5_000,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.step_size > 0.0) || self.max_iters == 0 || !(self.tolerance > 0.0) {
            return Err(NumericsError::BadArgument(format!(
                "optimizer config {self:?}"
            )));
        }
        Ok(())
    }
}

/// A differentiable objective: returns the value and writes the gradient.
pub trait Objective {
    fn value_and_grad(&self, params: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    fn value_and_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        self(params, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub params: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Best objective after each iteration; non-increasing.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Adaptive-gradient minimisation with bias-corrected moments.
///
/// Tracks the best iterate. When the best value has not improved by a relative
/// `tolerance` for a while, or a non-finite value is hit, the iterate restarts from the
/// best point with half the step. Never returns a point worse than `init`.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    init: &[f64],
    cfg: &OptimizerConfig,
) -> Result<Minimum, NumericsError> {
    cfg.validate()?;
    let n = init.len();
    let mut grad = vec![0.0; n];
    let f0 = objective.value_and_grad(init, &mut grad);
    if !f0.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(NumericsError::NonFiniteObjective);
    }
    let mut best = init.to_vec();
    let mut best_value = f0;
    let mut params = init.to_vec();
    let mut adam = Adam::new(n);
    let mut lr = cfg.step_size;
    let mut stall = 0usize;
    let mut halvings = 0usize;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        adam.step(&mut params, &grad, lr);
        let value = objective.value_and_grad(&params, &mut grad);
        let finite = value.is_finite() && grad.iter().all(|g| g.is_finite());
        if finite && value < best_value {
            let gain = (best_value - value) / best_value.abs().max(f64::MIN_POSITIVE);
            best_value = value;
            best.copy_from_slice(&params);
            stall = if gain > cfg.tolerance { 0 } else { stall + 1 };
        } else {
            stall += 1;
        }
        trace.push(best_value);
        if !finite || stall >= PATIENCE {
            if halvings == MAX_HALVINGS || best_value == 0.0 {
                break;
            }
            halvings += 1;
            lr *= 0.5;
            stall = 0;
            params.copy_from_slice(&best);
            adam.reset();
            objective.value_and_grad(&params, &mut grad);
        }
    }
    Ok(Minimum {
        params: best,
        value: best_value,
        iterations,
        trace,
    })
}

/// An objective that decomposes into a mean over items, for mini-batch training.
pub trait BatchObjective {
    fn n_items(&self) -> usize;
    /// Mean loss over `items`; writes the gradient of that mean.
    fn batch_value_and_grad(&self, params: &[f64], items: &[usize], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    /// Monitored score of the returned parameters.
    pub score: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Mini-batch Adam over seeded shuffles, keeping the parameters with the best
/// `monitor` score (checked at the start and after every epoch).
///
/// Stops early after `patience` epochs without a relative improvement of
/// `cfg.tolerance`. Fully deterministic for a fixed `cfg.seed`.
pub fn train_minibatch<O, M>(
    objective: &O,
    init: &[f64],
    cfg: &OptimizerConfig,
    batch_size: usize,
    epochs: usize,
    patience: usize,
    mut monitor: M,
) -> Result<TrainOutcome, NumericsError>
where
    O: BatchObjective + ?Sized,
    M: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let n_items = objective.n_items();
    if n_items == 0 {
        return Err(NumericsError::BadArgument("no training items".into()));
    }
    let batch_size = batch_size.clamp(1, n_items);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut params = init.to_vec();
    let mut grad = vec![0.0; init.len()];
    let mut adam = Adam::new(init.len());

    let mut best = params.clone();
    let mut best_score = monitor(&params);
    if !best_score.is_finite() {
        return Err(NumericsError::NonFiniteObjective);
    }
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 1..=epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let value = objective.batch_value_and_grad(&params, batch, &mut grad);
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(NumericsError::NonFiniteObjective);
            }
            adam.step(&mut params, &grad, cfg.step_size);
        }
        let score = monitor(&params);
        if score.is_finite() && score < best_score {
            let gain = (best_score - score) / best_score.abs().max(f64::MIN_POSITIVE);
            best_score = score;
            best.copy_from_slice(&params);
            best_epoch = epoch;
            since_best = if gain > cfg.tolerance { 0 } else { since_best + 1 };
        } else {
            since_best += 1;
        }
        if since_best >= patience {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best,
        score: best_score,
        best_epoch,
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn quadratic_converges() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            (x[0] - 3.0).powi(2)
        };
        let out = minimize(&f, &[0.0], &OptimizerConfig::default()).unwrap();
        assert!((out.params[0] - 3.0).abs() < 1e-4, "{:?}", out.params);
    }

    #[test]
    fn rosenbrock_reaches_valley_floor() {
        let cfg = OptimizerConfig {
            max_iters: 10_000,
            ..OptimizerConfig::default()
        };
        let out = minimize(&rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(out.value < 1e-2, "f = {}", out.value);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nan_objective_is_rejected() {
        let f = |_: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        };
        assert_eq!(
            minimize(&f, &[1.0], &OptimizerConfig::default()),
            Err(NumericsError::NonFiniteObjective)
        );
    }

    #[test]
    fn never_worse_than_init() {
        // already at the minimum
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            x[0] * x[0]
        };
        let out = minimize(&f, &[0.0], &OptimizerConfig::default()).unwrap();
        assert_eq!(out.value, 0.0);
    }

    struct MeanSquares {
        targets: Vec<f64>,
    }

    impl BatchObjective for MeanSquares {
        fn n_items(&self) -> usize {
            self.targets.len()
        }

        fn batch_value_and_grad(&self, p: &[f64], items: &[usize], g: &mut [f64]) -> f64 {
            g[0] = 0.0;
            let mut total = 0.0;
            for &i in items {
                let r = p[0] - self.targets[i];
                total += r * r;
                g[0] += 2.0 * r;
            }
            g[0] /= items.len() as f64;
            total / items.len() as f64
        }
    }

    #[test]
    fn minibatch_is_deterministic_and_converges() {
        let obj = MeanSquares {
            targets: (0..40).map(|i| i as f64 / 10.0).collect(),
        };
        let cfg = OptimizerConfig {
            step_size: 0.05,
            seed: 9,
            ..OptimizerConfig::default()
        };
        let mean = 1.95;
        let monitor = |p: &[f64]| (p[0] - mean).powi(2);
        let a = train_minibatch(&obj, &[0.0], &cfg, 8, 300, 50, monitor).unwrap();
        let b = train_minibatch(&obj, &[0.0], &cfg, 8, 300, 50, monitor).unwrap();
        assert_eq!(a, b);
        assert!((a.params[0] - mean).abs() < 0.05);
    }
}
