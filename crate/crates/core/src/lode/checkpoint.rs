use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{LodeConfig, LodeModel};
use super::train::{LogEntry, TrainConfig};
use crate::diffcore::{AdamState, Tensor};
use crate::error::{Error, Result};
use crate::griddata::{Dataset, MeasurementType, NormStats};

pub const CHECKPOINT_FORMAT: &str = "gridlode-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordKey {
    pub node_id: usize,
    pub kind: MeasurementType,
}

/// The dataset a model was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBinding {
    pub records: Vec<RecordKey>,
    pub grid_len: usize,
    /// Per-record statistics, aligned with `records`.
    pub norm_stats: Vec<NormStats>,
    pub holdout_nodes: Vec<usize>,
}

impl DataBinding {
    /// Binding for a normalized dataset.
    pub fn of(ds: &Dataset, holdout_nodes: Vec<usize>) -> Result<Self> {
        let stats = ds
            .norm_stats
            .clone()
            .ok_or_else(|| Error::Contract("data binding needs a normalized dataset".into()))?;
        Ok(Self {
            records: ds
                .records
                .iter()
                .map(|r| RecordKey {
                    node_id: r.node_id,
                    kind: r.kind,
                })
                .collect(),
            grid_len: ds.times().len(),
            norm_stats: stats,
            holdout_nodes,
        })
    }

    /// Errors unless `ds` has the same records and grid size.
    pub fn check(&self, ds: &Dataset) -> Result<()> {
        let same = ds.records.len() == self.records.len()
            && ds.times().len() == self.grid_len
            && ds
                .records
                .iter()
                .zip(&self.records)
                .all(|(r, k)| r.node_id == k.node_id && r.kind == k.kind);
        if same {
            Ok(())
        } else {
            Err(Error::Schema(format!(
                "dataset ({} records, {} times) does not match checkpoint ({} records, {} times)",
                ds.records.len(),
                ds.times().len(),
                self.records.len(),
                self.grid_len
            )))
        }
    }
}

/// Versioned, self-describing training snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model_config: LodeConfig,
    pub params: Vec<NamedTensor>,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub adam: AdamState,
    pub data: Option<DataBinding>,
    pub loss_log: Vec<LogEntry>,
}

impl Checkpoint {
    pub fn new(
        model: &LodeModel,
        train_config: &TrainConfig,
        adam: &AdamState,
        data: Option<DataBinding>,
        loss_log: Vec<LogEntry>,
    ) -> Self {
        let params = model
            .tensor_names()
            .into_iter()
            .zip(model.tensors())
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape(),
                values: t.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model_config: model.config.clone(),
            params,
            train_config: train_config.clone(),
            seed: train_config.seed,
            adam: adam.clone(),
            data,
            loss_log,
        }
    }

    pub fn model(&self) -> Result<LodeModel> {
        // Every tensor is overwritten below; init only fixes the shapes.
        let mut model =
            LodeModel::init(self.model_config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let names = model.tensor_names();
        if names.len() != self.params.len() {
            return Err(Error::Schema(format!(
                "checkpoint holds {} tensors, model needs {}",
                self.params.len(),
                names.len()
            )));
        }
        for ((slot, name), saved) in model
            .tensors_mut()
            .into_iter()
            .zip(&names)
            .zip(&self.params)
        {
            if &saved.name != name || saved.shape != slot.shape() {
                return Err(Error::Schema(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    saved.name,
                    saved.shape,
                    name,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(saved.shape[0], saved.shape[1], saved.values.clone())?;
        }
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("not a checkpoint: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Schema(format!(
                "unknown checkpoint format {:?}",
                header.format
            )));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed checkpoint: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
