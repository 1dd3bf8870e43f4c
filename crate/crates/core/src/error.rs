use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("integration diverged at t={t}, h={h}: {reason}")]
    Diverged { t: f64, h: f64, reason: String },
    #[error("record {0} has no observed values")]
    EmptyRecord(String),
    #[error("infeasible loading: squared voltage {v_sq} at node {node}")]
    InfeasibleLoading { node: usize, v_sq: f64 },
    #[error("training diverged at iteration {iteration} (last finite loss {last_finite_loss})")]
    TrainingDiverged {
        iteration: usize,
        last_finite_loss: f64,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                msg: format!("{other:?}"),
            },
        }
    }
}

impl Error {
    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::TrainingDiverged { .. }
        )
    }
}
