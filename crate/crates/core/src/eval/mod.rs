//! Baselines, error metrics and evaluation reports.

mod metrics;
mod report;

pub use metrics::{linear_interp, masked_sse, mse_percent};
pub use report::{
    beyond_day, evaluate_imputation, evaluate_prediction, meter_records, observed_at,
    write_loss_csv, write_series_csv, EvalReport, EvalTask, LodeReconstructor, Reconstructor,
    RecordEval, SeriesPlot, Truth, REPORT_HEADER,
};
