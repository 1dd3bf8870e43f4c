use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::profiles::TruthSeries;
use super::record::{MeasurementType, Record};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Smart-meter averaging window, minutes.
    pub meter_rate_min: usize,
    /// SCADA voltage sampling interval, minutes.
    pub scada_rate_min: usize,
    /// Meter noise standard deviation as a fraction of the true value.
    pub noise_frac: f64,
    /// Probability that any single observation is lost.
    pub missing_prob: f64,
    /// Voltage sensors sit on every `v_sensor_stride`-th node (never the
    /// substation).
    pub v_sensor_stride: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            meter_rate_min: 15,
            scada_rate_min: 1,
            noise_frac: 0.10,
            missing_prob: 0.05,
            v_sensor_stride: 4,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self, day_minutes: usize) -> Result<()> {
        for (name, rate) in [
            ("meter_rate_min", self.meter_rate_min),
            ("scada_rate_min", self.scada_rate_min),
        ] {
            if rate == 0 || !day_minutes.is_multiple_of(rate) {
                return Err(Error::Contract(format!(
                    "{name}={rate} must divide {day_minutes}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return Err(Error::Contract(format!(
                "missing_prob={} must be in [0, 1)",
                self.missing_prob
            )));
        }
        if !(self.noise_frac >= 0.0 && self.noise_frac.is_finite()) {
            return Err(Error::Contract(format!(
                "noise_frac={} must be non-negative",
                self.noise_frac
            )));
        }
        if self.v_sensor_stride == 0 {
            return Err(Error::Contract("v_sensor_stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn has_v_sensor(&self, node_id: usize) -> bool {
        node_id != 0 && node_id.is_multiple_of(self.v_sensor_stride)
    }
}

/// `value + N(0, (frac·|value|)²)`.
pub fn add_relative_noise<R: Rng>(value: f64, frac: f64, rng: &mut R) -> f64 {
    if frac == 0.0 {
        return value;
    }
    let z: f64 = rng.sample(StandardNormal);
    value + frac * value.abs() * z
}

fn kind_index(kind: MeasurementType) -> u64 {
    match kind {
        MeasurementType::P => 0,
        MeasurementType::Q => 1,
        MeasurementType::V => 2,
    }
}

/// Meter and SCADA records for every load node. P/Q are window averages
/// stamped at the window start; V is sampled without noise.
pub fn sample_multirate(
    truth: &TruthSeries,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Vec<Record>> {
    let minutes = truth.minutes();
    cfg.validate(minutes)?;
    let mut records = Vec::new();
    for prof in truth.profiles.iter().filter(|p| p.node_id != 0) {
        let node = prof.node_id;
        let mut kinds = vec![MeasurementType::P, MeasurementType::Q];
        if cfg.has_v_sensor(node) {
            kinds.push(MeasurementType::V);
        }
        for kind in kinds {
            let stream = (node as u64) * 4 + kind_index(kind);
            let mut noise = substream(seed, Stream::Noise, stream);
            let mut drop = substream(seed, Stream::Dropout, stream);
            let series = truth.series(node, kind).expect("profile exists");
            let (times, values): (Vec<f64>, Vec<f64>) = match kind {
                MeasurementType::V => (0..minutes)
                    .step_by(cfg.scada_rate_min)
                    .map(|m| (truth.times[m], series[m]))
                    .unzip(),
                _ => (0..minutes)
                    .step_by(cfg.meter_rate_min)
                    .map(|m| {
                        let window = &series[m..m + cfg.meter_rate_min];
                        let avg = window.iter().sum::<f64>() / window.len() as f64;
                        (
                            truth.times[m],
                            add_relative_noise(avg, cfg.noise_frac, &mut noise),
                        )
                    })
                    .unzip(),
            };
            let mask: Vec<bool> = times
                .iter()
                .map(|_| cfg.missing_prob == 0.0 || drop.random::<f64>() >= cfg.missing_prob)
                .collect();
            records.push(Record::new(node, kind, times, values, mask)?);
        }
    }
    Ok(records)
}

/// Seeded choice of `round(frac·n)` node ids held out from training.
pub fn holdout_nodes(node_ids: &[usize], frac: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::Contract(format!(
            "holdout fraction {frac} must be in [0, 1)"
        )));
    }
    let mut ids = node_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let k = (frac * ids.len() as f64).round() as usize;
    ids.shuffle(&mut substream(seed, Stream::Split, 0));
    let mut held = ids[..k].to_vec();
    held.sort_unstable();
    Ok(held)
}
