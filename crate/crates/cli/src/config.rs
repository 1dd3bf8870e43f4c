use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gridlode::griddata::SamplingConfig;
use gridlode::lode::{GradMode, IterationUnit, LodeConfig, Task, TrainConfig};
use gridlode::odesolve::SolverConfig;
use gridlode::workflow::{HOLDOUT_FRAC, PREDICT_SPLIT_MIN};

/// Which records `impute` and `predict` reconstruct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordSet {
    /// Smart-meter records of the held-out nodes.
    Holdout,
    /// Every record in the dataset.
    All,
}

/// Query times for `impute`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryGrid {
    /// The dataset's own time grid.
    Observed,
    /// Every `step` minutes across the day.
    Step(f64),
}

/// Everything a command needs, assembled from defaults, an optional
/// `key = value` file and command-line flags, in that order.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub feeder: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub sampling: SamplingConfig,
    pub model: LodeConfig,
    pub train: TrainConfig,
    pub holdout_frac: f64,
    pub records: RecordSet,
    pub query_grid: QueryGrid,
    pub split_min: f64,
    pub horizon_end_min: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            feeder: None,
            dataset: None,
            truth: None,
            checkpoint: None,
            sampling: SamplingConfig::default(),
            model: LodeConfig::default(),
            train: TrainConfig::default(),
            holdout_frac: HOLDOUT_FRAC,
            records: RecordSet::Holdout,
            query_grid: QueryGrid::Step(1.0),
            split_min: PREDICT_SPLIT_MIN,
            horizon_end_min: 1440.0,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    /// Applies one setting. Keys are the field names of the underlying
    /// configuration structs.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                self.train.seed = self.seed;
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "feeder" => self.feeder = Some(PathBuf::from(value)),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "truth" => self.truth = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),

            "meter_rate_min" => self.sampling.meter_rate_min = parse(key, value)?,
            "scada_rate_min" => self.sampling.scada_rate_min = parse(key, value)?,
            "noise_frac" => self.sampling.noise_frac = parse(key, value)?,
            "missing_prob" => self.sampling.missing_prob = parse(key, value)?,
            "v_sensor_stride" => self.sampling.v_sensor_stride = parse(key, value)?,

            "latent_dim" => self.model.latent_dim = parse(key, value)?,
            "gru_hidden" => self.model.gru_hidden = parse(key, value)?,
            "dyn_hidden" => self.model.dyn_hidden = parse(key, value)?,
            "dyn_layers" => self.model.dyn_layers = parse(key, value)?,
            "time_unit_min" => self.model.time_unit_min = parse(key, value)?,

            "batch_size" => self.train.batch_size = parse(key, value)?,
            "iterations" => self.train.iterations = parse(key, value)?,
            "iteration_unit" => self.train.iteration_unit = parse::<IterationUnit>(key, value)?,
            "lr_init" => self.train.lr_init = parse(key, value)?,
            "lr_decay" => self.train.lr_decay = parse(key, value)?,
            "sigma_obs" => self.train.sigma_obs = parse(key, value)?,
            "kl_weight" => self.train.kl_weight = parse(key, value)?,
            "grad_mode" => self.train.grad_mode = parse::<GradMode>(key, value)?,
            "task" => {
                self.train.task = match value {
                    "reconstruct" => Task::Reconstruct,
                    "predict" => Task::Predict {
                        split_min: self.split_min,
                    },
                    _ => {
                        return Err(ConfigError(format!(
                            "task = {value:?}: expected reconstruct or predict"
                        )))
                    }
                }
            }
            "split_min" => {
                self.split_min = parse(key, value)?;
                if let Task::Predict { split_min } = &mut self.train.task {
                    *split_min = self.split_min;
                }
            }

            "rtol" => self.train.solver.rtol = parse(key, value)?,
            "atol" => self.train.solver.atol = parse(key, value)?,
            "max_steps" => self.train.solver.max_steps = parse(key, value)?,

            "holdout_frac" => self.holdout_frac = parse(key, value)?,
            "records" => {
                self.records = match value {
                    "holdout" => RecordSet::Holdout,
                    "all" => RecordSet::All,
                    _ => {
                        return Err(ConfigError(format!(
                            "records = {value:?}: expected holdout or all"
                        )))
                    }
                }
            }
            "query_grid" => {
                self.query_grid = match value {
                    "observed" => QueryGrid::Observed,
                    step => QueryGrid::Step(parse(key, step)?),
                }
            }
            "horizon_end_min" => self.horizon_end_min = parse(key, value)?,
            _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn solver(&self) -> SolverConfig {
        self.train.solver
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.out_dir.join("dataset.csv"))
    }

    pub fn truth_path(&self) -> PathBuf {
        self.truth
            .clone()
            .unwrap_or_else(|| self.out_dir.join("truth.csv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }

    /// Checks every numeric setting without touching the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: gridlode::Error| ConfigError(e.to_string());
        self.sampling.validate(1440).map_err(wrap)?;
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return Err(ConfigError(format!(
                "holdout_frac must lie in (0, 1), got {}",
                self.holdout_frac
            )));
        }
        if let QueryGrid::Step(step) = self.query_grid {
            if !(step > 0.0 && step.is_finite()) {
                return Err(ConfigError(format!(
                    "query_grid step must be positive, got {step}"
                )));
            }
        }
        if !(self.split_min.is_finite() && self.horizon_end_min > self.split_min) {
            return Err(ConfigError(format!(
                "need split_min < horizon_end_min, got {} and {}",
                self.split_min, self.horizon_end_min
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# run\niterations = 5\n\ngrad_mode = adjoint # faster memory\ntask = predict\nsplit_min = 600\n")
            .unwrap();
        assert_eq!(cfg.train.iterations, 5);
        assert_eq!(cfg.train.grad_mode, GradMode::Adjoint);
        assert_eq!(cfg.train.task, Task::Predict { split_min: 600.0 });
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_lines_name_the_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("seed = 1\nlr_init 0.1\n").unwrap_err();
        assert!(err.0.starts_with("line 2"), "{err}");
        assert!(cfg.apply_text("nonsense = 1").is_err());
        assert!(cfg.apply_text("batch_size = -3").is_err());
    }

    #[test]
    fn validation_catches_ranges() {
        let mut cfg = RunConfig::default();
        cfg.set("lr_init", "0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("holdout_frac", "1").unwrap();
        assert!(cfg.validate().is_err());
    }
}
