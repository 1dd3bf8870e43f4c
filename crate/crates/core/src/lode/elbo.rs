use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::batch::SeriesBatch;
use super::model::{encode_taped, LodeModel};
use crate::diffcore::{mlp_forward, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::odesolve::{
    adjoint_backward, integrate, integrate_taped, MlpOde, SolverConfig, SolverStats, TapedMlp,
};

/// How gradients reach the dynamics parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// Reverse sweep through every solver step.
    Backprop,
    /// Backward adjoint ODE solve.
    Adjoint,
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradMode::Backprop => "backprop",
            GradMode::Adjoint => "adjoint",
        })
    }
}

impl FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backprop" => Ok(GradMode::Backprop),
            "adjoint" => Ok(GradMode::Adjoint),
            other => Err(Error::Contract(format!(
                "grad mode must be backprop or adjoint, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboOptions {
    /// Observation noise standard deviation, normalized units.
    pub sigma_obs: f64,
    pub kl_weight: f64,
    pub grad_mode: GradMode,
    pub solver: SolverConfig,
}

impl Default for ElboOptions {
    fn default() -> Self {
        Self {
            sigma_obs: 0.05,
            kl_weight: 1.0,
            grad_mode: GradMode::Backprop,
            solver: SolverConfig::default(),
        }
    }
}

/// Batch ELBO terms, averaged per row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboValue {
    pub elbo: f64,
    /// Gaussian log-likelihood of the scored observations.
    pub recon: f64,
    pub kl: f64,
    /// Mean squared error over scored observations.
    pub mse: f64,
    pub observations: usize,
    pub solver: SolverStats,
}

impl ElboValue {
    pub fn neg_elbo(&self) -> f64 {
        -self.elbo
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Closed-form `KL(N(μ, σ²) ‖ N(0, 1))` summed over dimensions.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

/// ELBO value of the batch for latent noise `eps` (`rows x L`).
pub fn elbo(
    model: &LodeModel,
    batch: &SeriesBatch,
    eps: &[f64],
    opts: &ElboOptions,
) -> Result<ElboValue> {
    run(model, batch, eps, opts, false).map(|(v, _)| v)
}

/// ELBO value plus gradients of the negative ELBO, ordered as
/// [`LodeModel::tensors`].
pub fn elbo_with_grads(
    model: &LodeModel,
    batch: &SeriesBatch,
    eps: &[f64],
    opts: &ElboOptions,
) -> Result<(ElboValue, Vec<Tensor>)> {
    run(model, batch, eps, opts, true)
}

fn validate_opts(opts: &ElboOptions) -> Result<()> {
    if !(opts.sigma_obs > 0.0 && opts.sigma_obs.is_finite()) {
        return Err(Error::Contract(format!(
            "sigma_obs must be positive, got {}",
            opts.sigma_obs
        )));
    }
    if !(opts.kl_weight >= 0.0 && opts.kl_weight.is_finite()) {
        return Err(Error::Contract(format!(
            "kl_weight must be non-negative, got {}",
            opts.kl_weight
        )));
    }
    opts.solver.validate()
}

fn run(
    model: &LodeModel,
    batch: &SeriesBatch,
    eps: &[f64],
    opts: &ElboOptions,
    with_grads: bool,
) -> Result<(ElboValue, Vec<Tensor>)> {
    validate_opts(opts)?;
    let (rows, l, d) = (batch.rows(), model.config.latent_dim, model.config.obs_dim);
    if eps.len() != rows * l {
        return Err(Error::Contract(format!(
            "eps needs {} entries, got {}",
            rows * l,
            eps.len()
        )));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let (mu, sigma) = encode_taped(&mut tape, model, &bound, batch)?;

    let eps_v = tape.constant(Tensor::new(rows, l, eps.to_vec())?);
    let noise = tape.mul(sigma, eps_v)?;
    let z0 = tape.add(mu, noise)?;

    let mu2 = tape.square(mu);
    let s2 = tape.square(sigma);
    let log_s = tape.log(sigma)?;
    let kl_terms = tape.lincomb(&[(0.5, mu2), (0.5, s2), (-1.0, log_s)])?;
    let kl_terms = tape.add_const(kl_terms, -0.5);
    let kl = tape.sum(kl_terms);

    // Output times: the epoch plus every grid time carrying a scored entry.
    let epoch = batch.times_min()[0];
    let grid_idx: Vec<usize> = std::iter::once(0)
        .chain((1..batch.len()).filter(|&t| batch.loss_observed_anywhere(t)))
        .collect();
    let times: Vec<f64> = grid_idx
        .iter()
        .map(|&t| model.model_time(batch.times_min()[t], epoch))
        .collect();

    let ode = MlpOde::new(&model.dynamics, rows);
    let (states, traj) = match opts.grad_mode {
        GradMode::Backprop => {
            let taped = TapedMlp {
                bound: &bound.dynamics,
            };
            integrate_taped(&mut tape, &ode, &taped, z0, &times, &opts.solver)?
        }
        GradMode::Adjoint => {
            let traj = integrate(&ode, tape.value(z0).data(), &times, &opts.solver)?;
            let leaves = traj
                .states
                .iter()
                .map(|s| Tensor::new(rows, l, s.clone()).map(|t| tape.leaf(t)))
                .collect::<Result<Vec<Var>>>()?;
            (leaves, traj)
        }
    };

    let stacked = tape.stack_rows(&states)?;
    let decoded = mlp_forward(&mut tape, &bound.decoder, stacked)?;
    let mut picks = Vec::new();
    let mut targets = Vec::new();
    for (k, &t) in grid_idx.iter().enumerate() {
        for b in 0..rows {
            for c in 0..d {
                if batch.loss_mask(b, t, c) {
                    picks.push((k * rows + b) * d + c);
                    targets.push(batch.value(b, t, c));
                }
            }
        }
    }
    let n_obs = picks.len();
    let sse = if n_obs > 0 {
        let pred = tape.gather(decoded, &picks)?;
        let target = tape.constant(Tensor::row(targets));
        let resid = tape.sub(pred, target)?;
        let sq = tape.square(resid);
        tape.sum(sq)
    } else {
        tape.constant(Tensor::scalar(0.0))
    };

    let s = opts.sigma_obs;
    let bf = rows as f64;
    let scaled = tape.lincomb(&[(1.0 / (2.0 * s * s * bf), sse), (opts.kl_weight / bf, kl)])?;
    let loss = tape.add_const(scaled, n_obs as f64 * (s.ln() + HALF_LN_2PI) / bf);

    let sse_v = tape.value(sse).item();
    let kl_v = tape.value(kl).item();
    let recon = -(sse_v / (2.0 * s * s) + n_obs as f64 * (s.ln() + HALF_LN_2PI));
    let value = ElboValue {
        elbo: -tape.value(loss).item(),
        recon: recon / bf,
        kl: kl_v / bf,
        mse: if n_obs > 0 { sse_v / n_obs as f64 } else { 0.0 },
        observations: n_obs,
        solver: traj.stats,
    };
    if !with_grads {
        return Ok((value, Vec::new()));
    }

    let vars = bound.vars();
    let grads = tape.backward(loss)?;
    let mut out: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    if opts.grad_mode == GradMode::Adjoint {
        let dl_dz: Vec<Vec<f64>> = states
            .iter()
            .map(|&v| grads.get_or_zeros(&tape, v).into_data())
            .collect();
        let adj = adjoint_backward(&ode, &traj, &dl_dz, &opts.solver)?;
        let seeded = tape.backward_seeded(&[(z0, Tensor::new(rows, l, adj.dl_dz0)?)])?;
        for (g, &v) in out.iter_mut().zip(&vars) {
            if let Some(extra) = seeded.get(v) {
                g.data_mut()
                    .iter_mut()
                    .zip(extra.data())
                    .for_each(|(a, b)| *a += b);
            }
        }
        let dyn_vars = bound.dynamics.vars();
        let mut offset = 0;
        for dv in dyn_vars {
            let pos = vars
                .iter()
                .position(|&v| v == dv)
                .expect("dynamics var bound");
            let n = out[pos].len();
            out[pos]
                .data_mut()
                .iter_mut()
                .zip(&adj.dl_dtheta[offset..offset + n])
                .for_each(|(a, b)| *a += b);
            offset += n;
        }
    }
    Ok((value, out))
}
