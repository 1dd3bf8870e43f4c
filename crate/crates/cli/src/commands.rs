use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use gridlode::eval::{
    beyond_day, linear_interp, observed_at, write_loss_csv, write_series_csv, EvalReport,
    SeriesPlot, Truth,
};
use gridlode::griddata::{
    generate_dataset, load_dataset, save_dataset, unify_time_grid, Dataset, FeederSpec,
    MeasurementType,
};
use gridlode::lode::{impute, predict, train, Checkpoint, LodeModel};
use gridlode::workflow::{
    evaluate_holdout_imputation, evaluate_holdout_prediction, init_model, Split,
};
use gridlode::Error;
use serde_json::json;

use crate::config::{ConfigError, QueryGrid, RecordSet, RunConfig};

/// A failed command, carrying its process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config, or input files: exit 2.
    Usage(String),
    /// Numerical blow-up: exit 3.
    Diverged(String),
    /// Filesystem trouble: exit 1.
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Diverged(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_divergence() {
            Failure::Diverged(e.to_string())
        } else if let Error::Io(_) = e {
            Failure::Io(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn require(path: &Path, what: &str) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "{what} {} not found",
            path.display()
        )))
    }
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("json values always serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn load_data(path: &Path) -> Outcome<Dataset> {
    require(path, "dataset")?;
    load_dataset(path).map_err(|e| match e {
        Error::Io(_) => Failure::Io(format!("{}: {e}", path.display())),
        other => Failure::Usage(format!("{}: {other}", path.display())),
    })
}

fn load_checkpoint(path: &Path) -> Outcome<Checkpoint> {
    require(path, "checkpoint")?;
    Checkpoint::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn feeder(cfg: &RunConfig) -> Outcome<FeederSpec> {
    let spec = match &cfg.feeder {
        None => FeederSpec::default(),
        Some(path) => {
            require(path, "feeder spec")?;
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            FeederSpec::parse(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn generate_cmd(cfg: &RunConfig) -> Outcome {
    let spec = feeder(cfg)?;
    let (truth, dataset) = generate_dataset(&spec, &cfg.sampling, cfg.seed)?;
    let truth = unify_time_grid(&truth.to_records()?)?;

    create_dir(&cfg.out_dir)?;
    let data_path = cfg.dataset_path();
    let truth_path = cfg.truth_path();
    save_dataset(&dataset, &data_path)?;
    save_dataset(&truth, &truth_path)?;
    let spec_path = cfg.out_dir.join("feeder.txt");
    fs::write(&spec_path, spec.to_text()).map_err(io_err(&spec_path))?;

    println!(
        "{} nodes, {} records on a {}-point grid",
        spec.len(),
        dataset.records.len(),
        dataset.times().len()
    );
    for kind in [MeasurementType::P, MeasurementType::Q, MeasurementType::V] {
        let recs: Vec<_> = dataset.records.iter().filter(|r| r.kind == kind).collect();
        let observed: usize = recs.iter().map(|r| r.observed_count()).sum();
        println!("{kind}: {} records, {observed} observations", recs.len());
    }
    println!("wrote {} and {}", data_path.display(), truth_path.display());
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Outcome {
    let raw = load_data(&cfg.dataset_path())?;
    let resume = match &cfg.checkpoint {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };

    let (split, mut model, mut adam, mut log, train_cfg) = match resume {
        Some(ck) => {
            let binding = ck.data.as_ref().ok_or_else(|| {
                Failure::Usage("checkpoint carries no dataset binding to resume against".into())
            })?;
            let split = Split::from_binding(&raw, binding)?;
            let mut tc = ck.train_config.clone();
            tc.iterations = cfg.train.iterations;
            tc.grad_mode = cfg.train.grad_mode;
            tc.validate()?;
            (split, ck.model()?, ck.adam.clone(), ck.loss_log.clone(), tc)
        }
        None => {
            let split = Split::new(&raw, cfg.holdout_frac, cfg.seed)?;
            let model = init_model(cfg.model.clone(), cfg.train.seed)?;
            let adam = gridlode::diffcore::AdamState::new(cfg.train.lr_init);
            (split, model, adam, Vec::new(), cfg.train.clone())
        }
    };

    let start = adam.step;
    log.extend(train(&mut model, &mut adam, &split.train, &train_cfg)?);

    create_dir(&cfg.out_dir)?;
    let ck_path = cfg.out_dir.join("checkpoint.json");
    Checkpoint::new(
        &model,
        &train_cfg,
        &adam,
        Some(split.binding()?),
        log.clone(),
    )
    .save(&ck_path)?;
    let loss_path = cfg.out_dir.join("loss.csv");
    write_loss_csv(&log, create(&loss_path)?)?;

    println!(
        "steps {start}..{} on {} records ({} held-out nodes)",
        adam.step,
        split.train.records.len(),
        split.holdout_nodes.len()
    );
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!(
            "neg_elbo {:.4} -> {:.4}, mse {:.4}% -> {:.4}%",
            first.neg_elbo,
            last.neg_elbo,
            100.0 * first.mse,
            100.0 * last.mse
        );
    }
    println!("wrote {} and {}", ck_path.display(), loss_path.display());
    Ok(())
}

/// Model, data, and split a trained checkpoint refers to.
struct Loaded {
    model: LodeModel,
    raw: Dataset,
    split: Split,
    truth: Option<Dataset>,
}

fn load_trained(cfg: &RunConfig, need_truth: bool) -> Outcome<Loaded> {
    let ck = load_checkpoint(&cfg.checkpoint_path())?;
    let raw = load_data(&cfg.dataset_path())?;
    let binding = ck
        .data
        .as_ref()
        .ok_or_else(|| Failure::Usage("checkpoint carries no dataset binding".into()))?;
    let split = Split::from_binding(&raw, binding)?;
    let truth_path = cfg.truth_path();
    let truth = if truth_path.is_file() {
        Some(load_data(&truth_path)?)
    } else if need_truth {
        return Err(Failure::Usage(format!(
            "truth {} not found",
            truth_path.display()
        )));
    } else {
        None
    };
    Ok(Loaded {
        model: ck.model()?,
        raw,
        split,
        truth,
    })
}

fn selected(cfg: &RunConfig, l: &Loaded) -> Vec<usize> {
    match cfg.records {
        RecordSet::Holdout => l.split.eval_records(),
        RecordSet::All => (0..l.raw.records.len()).collect(),
    }
}

fn stepped(from: f64, to: f64, step: f64) -> Vec<f64> {
    (0..)
        .map(|k| from + k as f64 * step)
        .take_while(|&t| t < to)
        .collect()
}

fn truth_at(
    truth: Option<&Dataset>,
    node: usize,
    kind: MeasurementType,
    times: &[f64],
) -> Vec<Option<f64>> {
    let Some(truth) = truth else {
        return Vec::new();
    };
    let Some(series) = Truth::series(truth, node, kind) else {
        return Vec::new();
    };
    let grid = Truth::times(truth);
    times
        .iter()
        .map(|t| {
            grid.binary_search_by(|x| x.total_cmp(t))
                .ok()
                .map(|i| series[i])
        })
        .collect()
}

fn series_name(plot: &SeriesPlot) -> String {
    format!("node{}_{}.csv", plot.node_id, plot.kind)
}

fn write_series(dir: &Path, plots: &[SeriesPlot]) -> Outcome<Vec<String>> {
    create_dir(dir)?;
    plots
        .iter()
        .map(|p| {
            let name = series_name(p);
            write_series_csv(p, create(&dir.join(&name))?)?;
            Ok(name)
        })
        .collect()
}

fn summary(task: &str, plots: &[SeriesPlot], files: &[String], times: &[f64]) -> serde_json::Value {
    json!({
        "task": task,
        "points": times.len(),
        "first_time_min": times.first(),
        "last_time_min": times.last(),
        "extrapolation": beyond_day(times),
        "records": plots.iter().zip(files).map(|(p, f)| json!({
            "node_id": p.node_id,
            "measurement_type": p.kind.to_string(),
            "file": f,
        })).collect::<Vec<_>>(),
    })
}

pub fn impute_cmd(cfg: &RunConfig) -> Outcome {
    let l = load_trained(cfg, false)?;
    let times = match cfg.query_grid {
        QueryGrid::Observed => l.raw.times().to_vec(),
        QueryGrid::Step(step) => stepped(0.0, cfg.horizon_end_min, step),
    };
    let solver = cfg.solver();
    let stats = l.split.stats();
    let mut plots = Vec::new();
    for idx in selected(cfg, &l) {
        let record = &l.raw.records[idx];
        plots.push(SeriesPlot {
            node_id: record.node_id,
            kind: record.kind,
            time_min: times.clone(),
            truth: truth_at(l.truth.as_ref(), record.node_id, record.kind, &times),
            observed: observed_at(record, &times),
            model: impute(&l.model, record, &stats[idx], &times, &solver)?,
            baseline: linear_interp(&record.times, &record.values, &record.mask, &times)?,
        });
    }
    let dir = cfg.out_dir.join("impute");
    let files = write_series(&dir, &plots)?;
    write_json(
        &dir.join("summary.json"),
        &summary("impute", &plots, &files, &times),
    )?;
    println!(
        "imputed {} records at {} times into {}",
        plots.len(),
        times.len(),
        dir.display()
    );
    Ok(())
}

pub fn predict_cmd(cfg: &RunConfig) -> Outcome {
    let l = load_trained(cfg, false)?;
    let horizon = match cfg.query_grid {
        QueryGrid::Observed => l
            .raw
            .times()
            .iter()
            .copied()
            .filter(|&t| t >= cfg.split_min && t < cfg.horizon_end_min)
            .collect(),
        QueryGrid::Step(step) => stepped(cfg.split_min, cfg.horizon_end_min, step),
    };
    if horizon.is_empty() {
        return Err(Failure::Usage("prediction horizon is empty".into()));
    }
    let solver = cfg.solver();
    let stats = l.split.stats();
    let mut plots = Vec::new();
    for idx in selected(cfg, &l) {
        let record = &l.raw.records[idx];
        let last = record
            .observed()
            .take_while(|&(t, _)| t < cfg.split_min)
            .last()
            .map(|(_, v)| v)
            .ok_or_else(|| {
                Failure::Usage(format!(
                    "{} has no observation before t={}",
                    record.label(),
                    cfg.split_min
                ))
            })?;
        plots.push(SeriesPlot {
            node_id: record.node_id,
            kind: record.kind,
            time_min: horizon.clone(),
            truth: truth_at(l.truth.as_ref(), record.node_id, record.kind, &horizon),
            observed: observed_at(record, &horizon),
            model: predict(
                &l.model,
                record,
                &stats[idx],
                cfg.split_min,
                &horizon,
                &solver,
            )?,
            baseline: vec![last; horizon.len()],
        });
    }
    let dir = cfg.out_dir.join("predict");
    let files = write_series(&dir, &plots)?;
    let mut s = summary("predict", &plots, &files, &horizon);
    s["split_min"] = json!(cfg.split_min);
    write_json(&dir.join("summary.json"), &s)?;
    println!(
        "predicted {} records over {} times into {}{}",
        plots.len(),
        horizon.len(),
        dir.display(),
        if beyond_day(&horizon) {
            " (extrapolating past the recorded day)"
        } else {
            ""
        }
    );
    Ok(())
}

fn config_label(cfg: &RunConfig) -> String {
    format!("seed={} split_min={}", cfg.seed, cfg.split_min)
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Outcome {
    let l = load_trained(cfg, true)?;
    let truth = l.truth.as_ref().expect("truth is required above");
    let solver = cfg.solver();
    let label = config_label(cfg);
    let imp = evaluate_holdout_imputation(&l.model, &l.raw, &l.split, truth, solver, &label)?;
    let pred = evaluate_holdout_prediction(
        &l.model,
        &l.raw,
        &l.split,
        truth,
        cfg.split_min,
        solver,
        &label,
    )?;

    let dir = cfg.out_dir.join("evaluate");
    write_series(&dir.join("imputation"), &imp.series)?;
    write_series(&dir.join("prediction"), &pred.series)?;
    let csv = imp.to_csv()
        + &pred
            .to_csv()
            .lines()
            .skip(1)
            .map(|l| format!("{l}\n"))
            .collect::<String>();
    let csv_path = dir.join("report.csv");
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    write_json(
        &dir.join("report.json"),
        &json!({ "imputation": report_json(&imp), "prediction": report_json(&pred) }),
    )?;

    for r in [&imp, &pred] {
        println!(
            "{}: lode {:.4}% vs baseline {:.4}% over {} points ({:.1}s)",
            r.task, r.lode_mse_pct, r.baseline_mse_pct, r.points, r.runtime_s
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn report_json(r: &EvalReport) -> serde_json::Value {
    serde_json::to_value(r).expect("reports always serialize")
}
