//! Measurement records, the synthetic feeder generator and dataset I/O.

mod feeder;
mod io;
mod profiles;
mod record;
mod sampling;

pub use feeder::{lindistflow_voltages, FeederNode, FeederSpec, LoadClass};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, CSV_HEADER};
pub use profiles::{feeder_voltages, generate_profiles, NodeProfile, TruthSeries, TAN_PHI};
pub use record::{denormalize, unify_time_grid, Dataset, MeasurementType, NormStats, Record};
pub use sampling::{add_relative_noise, holdout_nodes, sample_multirate, SamplingConfig};

use crate::error::Result;

/// Minutes in the simulated day.
pub const DAY_MINUTES: usize = 1440;

/// Truth plus the unified multi-rate dataset for one simulated day.
pub fn generate_dataset(
    spec: &FeederSpec,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<(TruthSeries, Dataset)> {
    let truth = TruthSeries::generate(spec, DAY_MINUTES, seed)?;
    let records = sample_multirate(&truth, sampling, seed)?;
    Ok((truth, unify_time_grid(&records)?))
}
