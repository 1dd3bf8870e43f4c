use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Normwise relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both
/// vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Largest [`relative_error`] over matching blocks (one block per tensor).
pub fn blockwise_relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

/// Checks `f` (which builds a scalar loss from parameter vars) at `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| grads.get_or_zeros(&tape, *v).into_data())
        .collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut work = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = vec![0.0; params[pi].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            *gj = (plus - minus) / (2.0 * h);
        }
        numeric.push(g);
    }

    let max_rel_error = blockwise_relative_error(&analytic, &numeric);
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        tol,
        passed: max_rel_error <= tol,
    })
}
