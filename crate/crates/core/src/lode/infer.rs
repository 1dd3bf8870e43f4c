use super::batch::SeriesBatch;
use super::model::LodeModel;
use crate::error::{Error, Result};
use crate::griddata::{NormStats, Record};
use crate::odesolve::SolverConfig;

fn normalized(record: &Record, stats: &NormStats) -> Record {
    let mut r = record.clone();
    for (v, &m) in r.values.iter_mut().zip(&r.mask) {
        if m {
            *v = stats.normalize(*v);
        }
    }
    r
}

fn check_increasing(times: &[f64]) -> Result<()> {
    if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Contract(
            "query times must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Encodes the record with the posterior mean, integrates from the record's
/// first time over the union with `query_times`, decodes, and returns
/// normalized channel-0 values at `query_times`.
fn reconstruct(
    model: &LodeModel,
    record: &Record,
    query_times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    check_increasing(query_times)?;
    if query_times.is_empty() {
        return Ok(Vec::new());
    }
    if record.observed_count() == 0 {
        return Err(Error::EmptyRecord(record.label()));
    }
    let epoch = record.times[0];
    if query_times[0] < epoch {
        return Err(Error::Contract(format!(
            "query time {} precedes the record start {epoch}",
            query_times[0]
        )));
    }
    let batch = SeriesBatch::from_records(&[record])?;
    let ps = model.encode(&batch)?.remove(0);

    let mut union: Vec<f64> = record.times.iter().chain(query_times).copied().collect();
    union.sort_by(f64::total_cmp);
    union.dedup();
    let times: Vec<f64> = union.iter().map(|&t| model.model_time(t, epoch)).collect();
    let traj = model.latent_trajectory(&ps.mu, &times, cfg)?;
    let decoded = model.decode(&traj)?;
    let mut out = Vec::with_capacity(query_times.len());
    let mut k = 0;
    for &q in query_times {
        while union[k] < q {
            k += 1;
        }
        out.push(decoded.get(k, 0));
    }
    Ok(out)
}

/// Model reconstruction at `query_times`, in the record's units. `stats`
/// are the record's normalization statistics.
pub fn impute(
    model: &LodeModel,
    record: &Record,
    stats: &NormStats,
    query_times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let norm = reconstruct(model, &normalized(record, stats), query_times, cfg)?;
    Ok(norm.iter().map(|&v| stats.denormalize(v)).collect())
}

/// Conditions on observations before `split_min` and extrapolates to
/// `horizon_times`, which must all lie after the last conditioning time.
pub fn predict(
    model: &LodeModel,
    record: &Record,
    stats: &NormStats,
    split_min: f64,
    horizon_times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let cond = record.restricted(f64::NEG_INFINITY, split_min);
    let last =
        cond.observed().last().map(|(t, _)| t).ok_or_else(|| {
            Error::EmptyRecord(format!("{} before t={split_min}", record.label()))
        })?;
    if let Some(&first) = horizon_times.first() {
        if first <= last {
            return Err(Error::Contract(format!(
                "horizon starts at {first}, not after the last conditioning time {last}"
            )));
        }
    }
    let norm = reconstruct(model, &normalized(&cond, stats), horizon_times, cfg)?;
    Ok(norm.iter().map(|&v| stats.denormalize(v)).collect())
}
