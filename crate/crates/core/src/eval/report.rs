use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{linear_interp, masked_sse};
use crate::error::{Error, Result};
use crate::griddata::{Dataset, MeasurementType, NormStats, Record, TruthSeries, DAY_MINUTES};
use crate::lode::{impute, predict, LodeModel};
use crate::odesolve::SolverConfig;

/// Anything that reconstructs a record from its observations alone.
pub trait Reconstructor {
    fn impute(&self, record: &Record, stats: &NormStats, query_times: &[f64]) -> Result<Vec<f64>>;
    fn predict(
        &self,
        record: &Record,
        stats: &NormStats,
        split_min: f64,
        horizon_times: &[f64],
    ) -> Result<Vec<f64>>;
}

/// Noise-free reference series on a 1-min grid.
pub trait Truth {
    fn times(&self) -> &[f64];
    fn series(&self, node_id: usize, kind: MeasurementType) -> Option<&[f64]>;
}

impl Truth for TruthSeries {
    fn times(&self) -> &[f64] {
        &self.times
    }

    fn series(&self, node_id: usize, kind: MeasurementType) -> Option<&[f64]> {
        TruthSeries::series(self, node_id, kind)
    }
}

/// A dataset of fully observed records, as written by the generator.
impl Truth for Dataset {
    fn times(&self) -> &[f64] {
        Dataset::times(self)
    }

    fn series(&self, node_id: usize, kind: MeasurementType) -> Option<&[f64]> {
        let r = &self.records[self.find(node_id, kind)?];
        r.mask.iter().all(|&m| m).then_some(&r.values[..])
    }
}

/// A trained model with the solver settings used at inference.
pub struct LodeReconstructor<'a> {
    pub model: &'a LodeModel,
    pub solver: SolverConfig,
}

impl Reconstructor for LodeReconstructor<'_> {
    fn impute(&self, record: &Record, stats: &NormStats, query_times: &[f64]) -> Result<Vec<f64>> {
        impute(self.model, record, stats, query_times, &self.solver)
    }

    fn predict(
        &self,
        record: &Record,
        stats: &NormStats,
        split_min: f64,
        horizon_times: &[f64],
    ) -> Result<Vec<f64>> {
        predict(
            self.model,
            record,
            stats,
            split_min,
            horizon_times,
            &self.solver,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Imputation,
    Prediction,
}

impl std::fmt::Display for EvalTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalTask::Imputation => "imputation",
            EvalTask::Prediction => "prediction",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEval {
    pub node_id: usize,
    pub kind: MeasurementType,
    pub points: usize,
    pub lode_mse_pct: f64,
    pub baseline_mse_pct: f64,
    /// Root mean squared error in the record's own units.
    pub lode_rmse: f64,
    pub baseline_rmse: f64,
}

/// Plot-ready series for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPlot {
    pub node_id: usize,
    pub kind: MeasurementType,
    pub time_min: Vec<f64>,
    /// Empty when no reference series is available.
    pub truth: Vec<Option<f64>>,
    pub observed: Vec<Option<f64>>,
    pub model: Vec<f64>,
    pub baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: EvalTask,
    pub records: Vec<RecordEval>,
    /// Point-weighted mean of the per-record values.
    pub lode_mse_pct: f64,
    pub baseline_mse_pct: f64,
    pub points: usize,
    pub runtime_s: f64,
    /// True when some query time lies past the 24-hour day the data covers.
    pub extrapolation: bool,
    pub config: String,
    #[serde(skip)]
    pub series: Vec<SeriesPlot>,
}

pub const REPORT_HEADER: &str =
    "task,node_id,measurement_type,points,lode_mse_pct,baseline_mse_pct,lode_rmse,baseline_rmse";

impl EvalReport {
    /// Per-record rows followed by an `all` row with the aggregates.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{REPORT_HEADER}");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                self.task,
                r.node_id,
                r.kind,
                r.points,
                r.lode_mse_pct,
                r.baseline_mse_pct,
                r.lode_rmse,
                r.baseline_rmse
            );
        }
        let _ = writeln!(
            s,
            "{},all,*,{},{},{},,",
            self.task, self.points, self.lode_mse_pct, self.baseline_mse_pct
        );
        s
    }
}

/// `time_min,truth,observed,imputed,baseline`; `truth` and `observed` are
/// empty where there is no value.
pub fn write_series_csv<W: Write>(plot: &SeriesPlot, mut out: W) -> Result<()> {
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    writeln!(out, "time_min,truth,observed,imputed,baseline")?;
    for i in 0..plot.time_min.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            plot.time_min[i],
            cell(plot.truth.get(i).copied().flatten()),
            cell(plot.observed[i]),
            plot.model[i],
            plot.baseline[i]
        )?;
    }
    Ok(())
}

/// `iteration,neg_elbo,mse_pct`.
pub fn write_loss_csv<W: Write>(log: &[crate::lode::LogEntry], mut out: W) -> Result<()> {
    writeln!(out, "iteration,neg_elbo,mse_pct")?;
    for e in log {
        writeln!(out, "{},{},{}", e.iteration, e.neg_elbo, 100.0 * e.mse)?;
    }
    Ok(())
}

/// Whether any of `times` falls at or after the end of the day.
pub fn beyond_day(times: &[f64]) -> bool {
    times.iter().any(|&t| t >= DAY_MINUTES as f64)
}

/// Indices of the smart-meter (P and Q) records of `nodes`.
pub fn meter_records(ds: &Dataset, nodes: &[usize]) -> Vec<usize> {
    ds.records
        .iter()
        .enumerate()
        .filter(|(_, r)| nodes.contains(&r.node_id) && r.kind != MeasurementType::V)
        .map(|(i, _)| i)
        .collect()
}

/// The record's observation at each of `times`, if it has one there.
pub fn observed_at(record: &Record, times: &[f64]) -> Vec<Option<f64>> {
    times
        .iter()
        .map(|t| {
            record
                .times
                .binary_search_by(|x| x.total_cmp(t))
                .ok()
                .filter(|&i| record.mask[i])
                .map(|i| record.values[i])
        })
        .collect()
}

struct Scored {
    eval: RecordEval,
    plot: SeriesPlot,
    sse_model: f64,
    sse_base: f64,
}

fn score(
    record: &Record,
    stats: &NormStats,
    times: &[f64],
    truth: &[f64],
    model: Vec<f64>,
    baseline: Vec<f64>,
    select: &[bool],
) -> Result<Scored> {
    let norm = |v: &[f64]| v.iter().map(|&x| stats.normalize(x)).collect::<Vec<_>>();
    let (sse_model, n) = masked_sse(&norm(&model), &norm(truth), select)?;
    let (sse_base, _) = masked_sse(&norm(&baseline), &norm(truth), select)?;
    if n == 0 {
        return Err(Error::Contract(format!(
            "{}: nothing to evaluate",
            record.label()
        )));
    }
    let (eng_model, _) = masked_sse(&model, truth, select)?;
    let (eng_base, _) = masked_sse(&baseline, truth, select)?;
    let observed = observed_at(record, times);
    Ok(Scored {
        eval: RecordEval {
            node_id: record.node_id,
            kind: record.kind,
            points: n,
            lode_mse_pct: 100.0 * sse_model / n as f64,
            baseline_mse_pct: 100.0 * sse_base / n as f64,
            lode_rmse: (eng_model / n as f64).sqrt(),
            baseline_rmse: (eng_base / n as f64).sqrt(),
        },
        plot: SeriesPlot {
            node_id: record.node_id,
            kind: record.kind,
            time_min: times.to_vec(),
            truth: truth.iter().map(|&v| Some(v)).collect(),
            observed,
            model,
            baseline,
        },
        sse_model,
        sse_base,
    })
}

fn assemble(
    task: EvalTask,
    scored: Vec<Scored>,
    started: Instant,
    extrapolation: bool,
    config: &str,
) -> EvalReport {
    let points: usize = scored.iter().map(|s| s.eval.points).sum();
    let sm: f64 = scored.iter().map(|s| s.sse_model).sum();
    let sb: f64 = scored.iter().map(|s| s.sse_base).sum();
    let (records, series) = scored.into_iter().map(|s| (s.eval, s.plot)).unzip();
    EvalReport {
        task,
        records,
        lode_mse_pct: 100.0 * sm / points as f64,
        baseline_mse_pct: 100.0 * sb / points as f64,
        points,
        runtime_s: started.elapsed().as_secs_f64(),
        extrapolation,
        config: config.to_string(),
        series,
    }
}

fn inputs<'a, T: Truth + ?Sized>(
    ds: &'a Dataset,
    stats: &'a [NormStats],
    truth: &'a T,
    idx: usize,
) -> Result<(&'a Record, &'a NormStats, &'a [f64])> {
    let record = ds
        .records
        .get(idx)
        .ok_or_else(|| Error::Contract(format!("record index {idx} out of range")))?;
    let st = stats
        .get(idx)
        .ok_or_else(|| Error::Contract(format!("no normalization statistics for record {idx}")))?;
    let series = truth
        .series(record.node_id, record.kind)
        .ok_or_else(|| Error::Contract(format!("no truth for {}", record.label())))?;
    Ok((record, st, series))
}

/// Fills in each selected record on the truth grid, scoring the model
/// against linear interpolation of the same observations.
pub fn evaluate_imputation<R: Reconstructor + ?Sized, T: Truth + ?Sized>(
    model: &R,
    ds: &Dataset,
    stats: &[NormStats],
    truth: &T,
    records: &[usize],
    config: &str,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Contract("no held-out records to evaluate".into()));
    }
    let started = Instant::now();
    let times = truth.times();
    let mut scored = Vec::with_capacity(records.len());
    for &idx in records {
        let (record, st, series) = inputs(ds, stats, truth, idx)?;
        let pred = model.impute(record, st, times)?;
        let base = linear_interp(&record.times, &record.values, &record.mask, times)?;
        let select = vec![true; times.len()];
        scored.push(score(record, st, times, series, pred, base, &select)?);
    }
    let extrapolation = beyond_day(times);
    Ok(assemble(
        EvalTask::Imputation,
        scored,
        started,
        extrapolation,
        config,
    ))
}

/// Conditions on `t < split_min` and scores the remaining truth times
/// against holding the last conditioned observation.
pub fn evaluate_prediction<R: Reconstructor + ?Sized, T: Truth + ?Sized>(
    model: &R,
    ds: &Dataset,
    stats: &[NormStats],
    truth: &T,
    records: &[usize],
    split_min: f64,
    config: &str,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Contract("no held-out records to evaluate".into()));
    }
    let started = Instant::now();
    let horizon: Vec<f64> = truth
        .times()
        .iter()
        .copied()
        .filter(|&t| t >= split_min)
        .collect();
    let first = truth.times().len() - horizon.len();
    let mut scored = Vec::with_capacity(records.len());
    for &idx in records {
        let (record, st, series) = inputs(ds, stats, truth, idx)?;
        let last = record
            .observed()
            .take_while(|&(t, _)| t < split_min)
            .last()
            .map(|(_, v)| v)
            .ok_or_else(|| {
                Error::EmptyRecord(format!("{} before t={split_min}", record.label()))
            })?;
        let pred = model.predict(record, st, split_min, &horizon)?;
        let base = vec![last; horizon.len()];
        let select = vec![true; horizon.len()];
        scored.push(score(
            record,
            st,
            &horizon,
            &series[first..],
            pred,
            base,
            &select,
        )?);
    }
    let extrapolation = beyond_day(&horizon);
    Ok(assemble(
        EvalTask::Prediction,
        scored,
        started,
        extrapolation,
        config,
    ))
}
