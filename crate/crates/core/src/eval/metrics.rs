use crate::error::{Error, Result};

/// Piecewise-linear interpolation through the observed points, holding
/// the nearest observed value outside their span.
pub fn linear_interp(
    times: &[f64],
    values: &[f64],
    mask: &[bool],
    query_times: &[f64],
) -> Result<Vec<f64>> {
    if times.len() != values.len() || times.len() != mask.len() {
        return Err(Error::Contract(
            "linear_interp: times, values and mask differ in length".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&t, &v), _)| (t, v))
        .collect();
    let (first, last) = match (pts.first(), pts.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => {
            return Err(Error::EmptyRecord(
                "no observed points to interpolate".into(),
            ))
        }
    };
    Ok(query_times
        .iter()
        .map(|&q| {
            if q <= first.0 {
                return first.1;
            }
            if q >= last.0 {
                return last.1;
            }
            // first index with t > q; its predecessor has t <= q
            let hi = pts.partition_point(|&(t, _)| t <= q);
            let (t0, v0) = pts[hi - 1];
            let (t1, v1) = pts[hi];
            if q == t0 {
                v0
            } else {
                let w = (q - t0) / (t1 - t0);
                v0 + w * (v1 - v0)
            }
        })
        .collect())
}

/// Sum of squared differences and the number of selected entries.
pub fn masked_sse(pred: &[f64], truth: &[f64], eval_mask: &[bool]) -> Result<(f64, usize)> {
    if pred.len() != truth.len() || pred.len() != eval_mask.len() {
        return Err(Error::Contract(format!(
            "mse: {} predictions, {} truths, {} mask flags",
            pred.len(),
            truth.len(),
            eval_mask.len()
        )));
    }
    let mut sse = 0.0;
    let mut n = 0;
    for ((p, t), &m) in pred.iter().zip(truth).zip(eval_mask) {
        if m {
            sse += (p - t) * (p - t);
            n += 1;
        }
    }
    Ok((sse, n))
}

/// `100 · mean((pred − truth)²)` over selected entries, normalized units.
pub fn mse_percent(pred: &[f64], truth: &[f64], eval_mask: &[bool]) -> Result<f64> {
    let (sse, n) = masked_sse(pred, truth, eval_mask)?;
    if n == 0 {
        return Err(Error::Contract("mse over an empty selection".into()));
    }
    Ok(100.0 * sse / n as f64)
}
