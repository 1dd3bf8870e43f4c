//! Latent ODE: a reverse-time GRU encoder producing a posterior over the
//! initial latent state, learned latent dynamics integrated by the adaptive
//! solver, and a linear decoder back to data space.

mod batch;
mod checkpoint;
mod elbo;
mod infer;
mod model;
mod train;

pub use batch::SeriesBatch;
pub use checkpoint::{
    Checkpoint, DataBinding, NamedTensor, RecordKey, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use elbo::{elbo, elbo_with_grads, kl_divergence, ElboOptions, ElboValue, GradMode};
pub use infer::{impute, predict};
pub use model::{encode_taped, sample_latent, BoundLode, LodeConfig, LodeModel, PosteriorStats};
pub use train::{draw_batch, task_batch, train, IterationUnit, LogEntry, Task, TrainConfig};
