//! Measurements shared by the property tests and the acceptance run.
#![allow(dead_code)]

use gridlode::diffcore::{blockwise_relative_error, relative_error, Tensor};
use gridlode::lode::{
    elbo, elbo_with_grads, kl_divergence, ElboOptions, GradMode, LodeConfig, LodeModel, SeriesBatch,
};
use gridlode::odesolve::{integrate, integrate_fixed, FnOde, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Least-squares slope of `log2(err)` against `log2(h)`.
pub fn slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.log2()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Fixed-step global error slope on `z' = z` over `[0, 1]`.
pub fn fixed_step_slope() -> (f64, Vec<f64>) {
    let f = FnOde::new(1, |z: &[f64]| z.to_vec());
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = hs
        .iter()
        .map(|h| {
            let n = (1.0f64 / h).round() as usize;
            let z = integrate_fixed(&f, &[1.0], 0.0, 1.0, n).unwrap();
            (z[0] - std::f64::consts::E).abs()
        })
        .collect();
    (slope(&hs, &errs), errs)
}

pub type Case = (Box<dyn Fn(&[f64]) -> Vec<f64>>, f64, f64);

/// `(dynamics, t_end, exact z(t_end))`, all from `z0 = 1`.
pub fn analytic_cases() -> Vec<Case> {
    vec![
        (Box::new(|z: &[f64]| z.to_vec()), 1.0, 1f64.exp()),
        (Box::new(|z: &[f64]| vec![-2.0 * z[0]]), 0.5, (-1f64).exp()),
        (Box::new(|z: &[f64]| vec![-2.0 * z[0]]), 1.0, (-2f64).exp()),
    ]
}

/// Endpoint errors of [`analytic_cases`] plus logistic growth under `cfg`.
pub fn endpoint_errors(cfg: &SolverConfig) -> Vec<f64> {
    let mut cases = analytic_cases();
    // logistic growth with capacity 2
    cases.push((
        Box::new(|z: &[f64]| vec![z[0] * (1.0 - z[0] / 2.0)]),
        3.0,
        2.0 / (1.0 + (-3f64).exp()),
    ));
    cases
        .into_iter()
        .map(|(rhs, t_end, exact)| {
            let f = FnOde::new(1, rhs);
            let traj = integrate(&f, &[1.0], &[0.0, t_end], cfg).unwrap();
            (traj.states[1][0] - exact).abs()
        })
        .collect()
}

/// `D = 1`, `L = 3` model with small hidden layers.
pub fn tiny_model(seed: u64) -> LodeModel {
    let cfg = LodeConfig {
        latent_dim: 3,
        obs_dim: 1,
        gru_hidden: 4,
        dyn_hidden: 5,
        dyn_layers: 2,
        time_unit_min: 60.0,
    };
    LodeModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Two rows on `N = 5` times with a few gaps.
pub fn tiny_batch(rng: &mut impl Rng) -> SeriesBatch {
    let times = vec![0.0, 15.0, 30.0, 45.0, 60.0];
    let values: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
    let mask = vec![true, false, true, true, true, true, true, false, true, true];
    SeriesBatch::new(times, 2, 1, &values, &mask).unwrap()
}

pub fn tight(mode: GradMode) -> ElboOptions {
    ElboOptions {
        grad_mode: mode,
        solver: SolverConfig::with_tolerances(1e-11, 1e-12),
        ..ElboOptions::default()
    }
}

/// Worst per-tensor relative error of the negative-ELBO gradient against
/// central differences (`h = 1e-5`).
pub fn elbo_fd_error(mode: GradMode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = tiny_model(1);
    let batch = tiny_batch(&mut rng);
    let eps: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let o = tight(mode);
    let (_, grads) = elbo_with_grads(&model, &batch, &eps, &o).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, g) in grads.iter().enumerate() {
        let numeric: Vec<f64> = (0..g.len())
            .map(|i| {
                let at = |delta: f64| {
                    let mut m = model.clone();
                    m.tensors_mut()[k].data_mut()[i] += delta;
                    elbo(&m, &batch, &eps, &o).unwrap().neg_elbo()
                };
                (at(h) - at(-h)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(relative_error(g.data(), &numeric));
    }
    worst
}

/// Adjoint against backprop-through-solver ELBO gradients, same instance.
pub fn elbo_parity_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = tiny_model(1);
    let batch = tiny_batch(&mut rng);
    let eps: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads = |mode| {
        let (_, g) = elbo_with_grads(&model, &batch, &eps, &tight(mode)).unwrap();
        g.into_iter().map(Tensor::into_data).collect::<Vec<_>>()
    };
    blockwise_relative_error(&grads(GradMode::Adjoint), &grads(GradMode::Backprop))
}

fn batch_with(values: &[f64], mask: &[bool]) -> SeriesBatch {
    let times: Vec<f64> = (0..values.len() / 3)
        .map(|i| 10.0 * i as f64 + 5.0)
        .collect();
    SeriesBatch::new(times, 3, 1, values, mask).unwrap()
}

/// Number of trials, out of `trials`, in which rewriting masked-out values
/// changed any bit of the loss, the gradients or the posterior.
pub fn mask_fuzz_mismatches(trials: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = tiny_model(3);
    let n = 3 * 8;
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let mask: Vec<bool> = (0..n).map(|i| i % 8 == 0 || rng.random_bool(0.6)).collect();
    let eps: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
    let o = tight(GradMode::Backprop);
    let bits = |ts: &[Tensor]| -> Vec<u64> {
        ts.iter()
            .flat_map(|t| t.data().iter().map(|x| x.to_bits()))
            .collect()
    };
    let base = batch_with(&values, &mask);
    let (v0, g0) = elbo_with_grads(&model, &base, &eps, &o).unwrap();
    let enc0 = model.encode(&base).unwrap();
    let mut mismatches = 0;
    for _ in 0..trials {
        let fuzzed: Vec<f64> = values
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| {
                if m {
                    v
                } else {
                    match rng.random_range(0..4) {
                        0 => f64::NAN,
                        1 => f64::INFINITY,
                        2 => rng.random_range(-1e6..1e6),
                        _ => -0.0,
                    }
                }
            })
            .collect();
        let b = batch_with(&fuzzed, &mask);
        let (v, g) = elbo_with_grads(&model, &b, &eps, &o).unwrap();
        let same = v.elbo.to_bits() == v0.elbo.to_bits()
            && v.mse.to_bits() == v0.mse.to_bits()
            && bits(&g) == bits(&g0)
            && model.encode(&b).unwrap() == enc0;
        if !same {
            mismatches += 1;
        }
    }
    mismatches
}

/// Largest `|closed form − Monte Carlo| / standard error` over `pairs`
/// random `(mu, sigma)` with `draws` samples each.
pub fn kl_worst_z(pairs: usize, draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let mu: f64 = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.2..2.5);
        // log q(z) - log p(z) for z ~ q, sampled directly
        let samples: Vec<f64> = (0..draws)
            .map(|_| {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                let z = mu + sigma * e;
                -sigma.ln() - 0.5 * e * e + 0.5 * z * z
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let exact = kl_divergence(&[mu], &[sigma]);
        worst = worst.max((exact - mean).abs() / se);
    }
    worst
}
