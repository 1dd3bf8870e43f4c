//! The split → train → evaluate pipeline shared by the command line and
//! the end-to-end tests.

use crate::diffcore::AdamState;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_imputation, evaluate_prediction, meter_records, EvalReport, LodeReconstructor, Truth,
};
use crate::griddata::{holdout_nodes, Dataset, NormStats};
use crate::lode::{train, DataBinding, LodeConfig, LodeModel, LogEntry, TrainConfig};
use crate::odesolve::SolverConfig;
use crate::rng::{substream, Stream};

/// Share of load nodes whose records are kept out of training.
pub const HOLDOUT_FRAC: f64 = 0.2;

/// Conditioning window of the prediction task, minutes.
pub const PREDICT_SPLIT_MIN: f64 = 720.0;

/// A dataset divided into training records and held-out evaluation nodes.
#[derive(Debug, Clone)]
pub struct Split {
    /// Every record, each scaled by its own statistics.
    pub normalized: Dataset,
    pub holdout_nodes: Vec<usize>,
    /// Normalized records of the nodes not held out.
    pub train: Dataset,
}

impl Split {
    pub fn new(raw: &Dataset, holdout_frac: f64, seed: u64) -> Result<Self> {
        let normalized = raw.normalize()?;
        let holdout = holdout_nodes(&raw.node_ids(), holdout_frac, seed)?;
        let keep: Vec<usize> = (0..normalized.records.len())
            .filter(|&i| !holdout.contains(&normalized.records[i].node_id))
            .collect();
        if keep.is_empty() {
            return Err(Error::Contract("holdout leaves no training records".into()));
        }
        let train = normalized.subset(&keep);
        Ok(Self {
            normalized,
            holdout_nodes: holdout,
            train,
        })
    }

    /// Rebuilds the split a checkpoint was trained on.
    pub fn from_binding(raw: &Dataset, binding: &DataBinding) -> Result<Self> {
        binding.check(raw)?;
        let normalized = raw.normalize()?;
        if normalized.norm_stats.as_deref() != Some(&binding.norm_stats[..]) {
            return Err(Error::Schema(
                "dataset values differ from the ones the checkpoint was trained on".into(),
            ));
        }
        let keep: Vec<usize> = (0..normalized.records.len())
            .filter(|&i| {
                !binding
                    .holdout_nodes
                    .contains(&normalized.records[i].node_id)
            })
            .collect();
        let train = normalized.subset(&keep);
        Ok(Self {
            normalized,
            holdout_nodes: binding.holdout_nodes.clone(),
            train,
        })
    }

    pub fn stats(&self) -> &[NormStats] {
        self.normalized.norm_stats.as_deref().unwrap_or(&[])
    }

    /// Indices of the held-out smart-meter (P and Q) records.
    pub fn eval_records(&self) -> Vec<usize> {
        meter_records(&self.normalized, &self.holdout_nodes)
    }

    pub fn binding(&self) -> Result<DataBinding> {
        DataBinding::of(&self.normalized, self.holdout_nodes.clone())
    }
}

/// Freshly initialized model for a run seed.
pub fn init_model(config: LodeConfig, seed: u64) -> Result<LodeModel> {
    LodeModel::init(config, &mut substream(seed, Stream::Init, 0))
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: LodeModel,
    pub adam: AdamState,
    pub log: Vec<LogEntry>,
}

/// Initializes from `cfg.seed` and trains on the split's training records.
pub fn fit(split: &Split, model_config: LodeConfig, cfg: &TrainConfig) -> Result<Fitted> {
    cfg.validate()?;
    let mut model = init_model(model_config, cfg.seed)?;
    let mut adam = AdamState::new(cfg.lr_init);
    let log = train(&mut model, &mut adam, &split.train, cfg)?;
    Ok(Fitted { model, adam, log })
}

/// Imputation of the held-out meter records on the 1-min truth grid.
pub fn evaluate_holdout_imputation(
    model: &LodeModel,
    raw: &Dataset,
    split: &Split,
    truth: &(impl Truth + ?Sized),
    solver: SolverConfig,
    config: &str,
) -> Result<EvalReport> {
    let r = LodeReconstructor { model, solver };
    evaluate_imputation(&r, raw, split.stats(), truth, &split.eval_records(), config)
}

/// Prediction of the held-out meter records past `split_min`.
pub fn evaluate_holdout_prediction(
    model: &LodeModel,
    raw: &Dataset,
    split: &Split,
    truth: &(impl Truth + ?Sized),
    split_min: f64,
    solver: SolverConfig,
    config: &str,
) -> Result<EvalReport> {
    let r = LodeReconstructor { model, solver };
    evaluate_prediction(
        &r,
        raw,
        split.stats(),
        truth,
        &split.eval_records(),
        split_min,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::griddata::{generate_dataset, FeederSpec, MeasurementType, SamplingConfig};

    #[test]
    fn split_holds_out_whole_nodes() {
        let (_, raw) =
            generate_dataset(&FeederSpec::default(), &SamplingConfig::default(), 2).unwrap();
        let split = Split::new(&raw, HOLDOUT_FRAC, 2).unwrap();
        assert_eq!(split.holdout_nodes.len(), 7);
        assert!(split
            .train
            .records
            .iter()
            .all(|r| !split.holdout_nodes.contains(&r.node_id)));
        let eval = split.eval_records();
        assert_eq!(eval.len(), 14);
        assert!(eval
            .iter()
            .all(|&i| split.normalized.records[i].kind != MeasurementType::V));
        let again = Split::from_binding(&raw, &split.binding().unwrap()).unwrap();
        assert_eq!(again.train, split.train);
    }
}
