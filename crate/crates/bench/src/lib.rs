//! Shared fixtures for the criterion benchmarks.

use gridlode::griddata::{generate_dataset, Dataset, FeederSpec, SamplingConfig};
use gridlode::lode::{draw_batch, task_batch, LodeConfig, LodeModel, SeriesBatch, TrainConfig};
use gridlode::workflow::{init_model, Split, HOLDOUT_FRAC};

pub const SEED: u64 = 7;

/// Default synthetic day and its holdout split.
pub fn fixture() -> (Dataset, Split) {
    let (_, raw) = generate_dataset(&FeederSpec::default(), &SamplingConfig::default(), SEED)
        .expect("default feeder generates");
    let split = Split::new(&raw, HOLDOUT_FRAC, SEED).expect("default split");
    (raw, split)
}

pub fn model() -> LodeModel {
    init_model(LodeConfig::default(), SEED).expect("default model")
}

/// The first training batch with its latent noise.
pub fn first_batch(split: &Split, cfg: &TrainConfig) -> (SeriesBatch, Vec<f64>) {
    let (rows, eps) = draw_batch(
        cfg,
        split.train.records.len(),
        LodeConfig::default().latent_dim,
        0,
    );
    let batch = task_batch(&split.train, &rows, cfg.task).expect("batch");
    (batch, eps)
}
