use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::batch::SeriesBatch;
use super::elbo::{elbo_with_grads, ElboOptions, GradMode};
use super::model::LodeModel;
use crate::diffcore::AdamState;
use crate::error::{Error, Result};
use crate::griddata::Dataset;
use crate::odesolve::SolverConfig;
use crate::rng::{substream, Stream};

/// What the loss scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    /// Encoder and loss both use every observation.
    Reconstruct,
    /// Encoder sees `t < split_min`, the loss scores `t >= split_min`.
    Predict { split_min: f64 },
}

/// What one training iteration covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationUnit {
    /// A single Adam step on a random batch.
    Batch,
    /// One shuffled pass over the training records, `ceil(n / batch_size)` steps.
    Epoch,
}

impl fmt::Display for IterationUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IterationUnit::Batch => "batch",
            IterationUnit::Epoch => "epoch",
        })
    }
}

impl FromStr for IterationUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(IterationUnit::Batch),
            "epoch" => Ok(IterationUnit::Epoch),
            _ => Err(Error::Contract(format!(
                "iteration unit must be batch or epoch, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub iteration_unit: IterationUnit,
    pub lr_init: f64,
    /// Learning rate at step `t` is `lr_init · lr_decay^t`.
    pub lr_decay: f64,
    pub sigma_obs: f64,
    pub kl_weight: f64,
    pub seed: u64,
    pub grad_mode: GradMode,
    pub solver: SolverConfig,
    pub task: Task,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            iterations: 200,
            iteration_unit: IterationUnit::Epoch,
            lr_init: 0.01,
            lr_decay: 0.999,
            sigma_obs: 0.05,
            kl_weight: 1.0,
            seed: 0,
            grad_mode: GradMode::Backprop,
            solver: SolverConfig::default(),
            task: Task::Reconstruct,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("train config: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad(format!("lr_init must be positive, got {}", self.lr_init));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if !(self.sigma_obs > 0.0 && self.sigma_obs.is_finite()) {
            return bad(format!(
                "sigma_obs must be positive, got {}",
                self.sigma_obs
            ));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad(format!(
                "kl_weight must be non-negative, got {}",
                self.kl_weight
            ));
        }
        self.solver.validate()
    }

    /// Adam steps in one iteration over `n_records` records.
    pub fn steps_per_iteration(&self, n_records: usize) -> usize {
        match self.iteration_unit {
            IterationUnit::Batch => 1,
            IterationUnit::Epoch => n_records.div_ceil(self.batch_size).max(1),
        }
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        self.lr_init * self.lr_decay.powf(step as f64)
    }

    pub fn elbo_options(&self) -> ElboOptions {
        ElboOptions {
            sigma_obs: self.sigma_obs,
            kl_weight: self.kl_weight,
            grad_mode: self.grad_mode,
            solver: self.solver,
        }
    }
}

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: u64,
    pub neg_elbo: f64,
    /// Batch mean squared error, normalized units.
    pub mse: f64,
    pub lr: f64,
}

/// Builds the batch for `rows` of a normalized dataset under `task`.
pub fn task_batch(ds: &Dataset, rows: &[usize], task: Task) -> Result<SeriesBatch> {
    let records: Vec<_> = rows.iter().map(|&i| &ds.records[i]).collect();
    let batch = SeriesBatch::from_records(&records)?;
    Ok(match task {
        Task::Reconstruct => batch,
        Task::Predict { split_min } => batch.split_at(split_min),
    })
}

/// Record indices and latent noise for optimizer step `step`.
pub fn draw_batch(
    cfg: &TrainConfig,
    n_records: usize,
    latent_dim: usize,
    step: u64,
) -> (Vec<usize>, Vec<f64>) {
    let rows = match cfg.iteration_unit {
        IterationUnit::Batch => {
            let mut rng = substream(cfg.seed, Stream::Training, step);
            index::sample(&mut rng, n_records, cfg.batch_size.min(n_records)).into_vec()
        }
        IterationUnit::Epoch => {
            let per = cfg.steps_per_iteration(n_records) as u64;
            let mut order: Vec<usize> = (0..n_records).collect();
            order.shuffle(&mut substream(cfg.seed, Stream::Training, step / per));
            let start = (step % per) as usize * cfg.batch_size;
            order[start..(start + cfg.batch_size).min(n_records)].to_vec()
        }
    };
    let mut rng = substream(cfg.seed, Stream::Latent, step);
    let k = rows.len();
    let eps = (0..k * latent_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    (rows, eps)
}

/// Runs `cfg.iterations` iterations on a normalized dataset, continuing
/// from `adam.step`. Each step draws its batch and noise from a stream
/// keyed by the global step, so resumed runs match uninterrupted ones.
pub fn train(
    model: &mut LodeModel,
    adam: &mut AdamState,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<LogEntry>> {
    cfg.validate()?;
    model.validate()?;
    if !ds.is_normalized() {
        return Err(Error::Contract(
            "training needs a normalized dataset".into(),
        ));
    }
    if ds.is_empty() {
        return Err(Error::Contract("training dataset has no records".into()));
    }
    let opts = cfg.elbo_options();
    let steps = cfg.iterations * cfg.steps_per_iteration(ds.records.len());
    let mut log = Vec::with_capacity(steps);
    let mut last_finite = f64::NAN;
    for _ in 0..steps {
        let step = adam.step;
        let (rows, eps) = draw_batch(cfg, ds.records.len(), model.config.latent_dim, step);
        let batch = task_batch(ds, &rows, cfg.task)?;
        let diverged = |_| Error::TrainingDiverged {
            iteration: step as usize,
            last_finite_loss: last_finite,
        };
        let (value, grads) = elbo_with_grads(model, &batch, &eps, &opts).map_err(|e| {
            if e.is_divergence() {
                diverged(())
            } else {
                e
            }
        })?;
        let loss = value.neg_elbo();
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(diverged(()));
        }
        last_finite = loss;
        let lr = cfg.learning_rate(step);
        adam.lr = lr;
        adam.update(&mut model.tensors_mut(), &grads)?;
        log.push(LogEntry {
            iteration: step,
            neg_elbo: loss,
            mse: value.mse,
            lr,
        });
    }
    Ok(log)
}
