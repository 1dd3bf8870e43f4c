use serde::{Deserialize, Serialize};

use super::func::OdeFunc;
use super::tableau::{dense_weights, ERR, STAGE_A};
use crate::diffcore::kernels;
use crate::error::{Error, Result};

/// Step-size control settings. Step bounds left as `None` are derived from
/// the integration span: `h_init = span/100`, `h_min = 1e-10·span`,
/// `h_max = span`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
    pub safety: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-7,
            h_init: None,
            h_min: None,
            h_max: None,
            max_steps: 100_000,
            safety: 0.9,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("solver config: {m}")));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("rtol and atol must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad("safety must lie in (0, 1]");
        }
        if let (Some(lo), Some(hi)) = (self.h_min, self.h_max) {
            if !(lo > 0.0 && lo <= hi) {
                return bad("need 0 < h_min <= h_max");
            }
        }
        Ok(())
    }

    /// `(h_init, h_min, h_max)` for a given span.
    pub fn step_bounds(&self, span: f64) -> (f64, f64, f64) {
        let h_max = self.h_max.unwrap_or(span);
        let h_min = self.h_min.unwrap_or(1e-10 * span);
        let h_init = self.h_init.unwrap_or(span / 100.0).clamp(h_min, h_max);
        (h_init, h_min, h_max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Stage evaluations, seven per attempted step; the stage reused via
    /// first-same-as-last is counted in every step that consumes it.
    pub function_evals: usize,
    /// Calls actually made to the right-hand side.
    pub rhs_calls: usize,
}

impl SolverStats {
    pub fn attempted(&self) -> usize {
        self.accepted + self.rejected
    }

    pub fn merge(&mut self, other: &SolverStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.function_evals += other.function_evals;
        self.rhs_calls += other.rhs_calls;
    }
}

/// Where a requested output time sits in the accepted-step sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum OutputLoc {
    Initial,
    /// Exactly at the end of accepted step `i`.
    StepEnd(usize),
    /// Interior point of accepted step `i` at fraction `theta`.
    Interior(usize, f64),
}

/// Latent states at the requested times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: SolverStats,
    /// `(t, h)` of every accepted step.
    pub steps: Vec<(f64, f64)>,
    pub(crate) locs: Vec<OutputLoc>,
}

/// Everything one Dormand–Prince attempt produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub z_next: Vec<f64>,
    pub err_norm: f64,
    pub h_next: f64,
    pub accepted: bool,
    /// `k1..k7`; `k7 = f(z_next)`.
    pub stages: Vec<Vec<f64>>,
}

fn check_finite(v: &[f64], t: f64, h: f64, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            t,
            h,
            reason: format!("non-finite {what}"),
        })
    }
}

/// Stage input `z + h·Σ a_j k_j` for stage `s` (2..=7).
pub(crate) fn stage_terms(h: f64, s: usize) -> Vec<(f64, usize)> {
    let row = &STAGE_A[s - 2];
    let mut terms = vec![(1.0, usize::MAX)];
    for (j, a) in row.iter().enumerate().take(s - 1) {
        terms.push((h * a, j));
    }
    terms
}

/// Stage-point combination shared by the plain and taped paths.
fn stage_point(z: &[f64], stages: &[Vec<f64>], h: f64, s: usize) -> Vec<f64> {
    let terms: Vec<(f64, &[f64])> = stage_terms(h, s)
        .into_iter()
        .map(|(c, j)| {
            if j == usize::MAX {
                (c, z)
            } else {
                (c, stages[j].as_slice())
            }
        })
        .collect();
    let mut out = vec![0.0; z.len()];
    kernels::lincomb(&terms, &mut out);
    out
}

fn step_with_k1<F: OdeFunc + ?Sized>(
    f: &F,
    t: f64,
    z: &[f64],
    k1: Vec<f64>,
    h: f64,
    cfg: &SolverConfig,
) -> Result<StepOutcome> {
    let mut stages = Vec::with_capacity(7);
    stages.push(k1);
    let mut z_next = Vec::new();
    for s in 2..=7 {
        let zs = stage_point(z, &stages, h, s);
        check_finite(&zs, t, h, "stage value")?;
        let k = f.eval(&zs)?;
        check_finite(&k, t, h, "stage derivative")?;
        stages.push(k);
        if s == 7 {
            z_next = zs;
        }
    }
    let n = z.len().max(1) as f64;
    let mut acc = 0.0;
    for i in 0..z.len() {
        let e: f64 = h * ERR.iter().zip(&stages).map(|(c, k)| c * k[i]).sum::<f64>();
        let sk = cfg.atol + cfg.rtol * z[i].abs().max(z_next[i].abs());
        acc += (e / sk) * (e / sk);
    }
    let err_norm = (acc / n).sqrt();
    if !err_norm.is_finite() {
        return Err(Error::Diverged {
            t,
            h,
            reason: "non-finite error estimate".into(),
        });
    }
    let factor = if err_norm == 0.0 {
        5.0
    } else {
        (cfg.safety * err_norm.powf(-0.2)).clamp(0.2, 5.0)
    };
    Ok(StepOutcome {
        z_next,
        err_norm,
        h_next: h * factor,
        accepted: err_norm <= 1.0,
        stages,
    })
}

/// One Dormand–Prince 5(4) attempt from `(t, z)` with step `h`.
pub fn dopri5_step<F: OdeFunc + ?Sized>(
    f: &F,
    t: f64,
    z: &[f64],
    h: f64,
    cfg: &SolverConfig,
) -> Result<StepOutcome> {
    check_finite(z, t, h, "state")?;
    let k1 = f.eval(z)?;
    check_finite(&k1, t, h, "stage derivative")?;
    step_with_k1(f, t, z, k1, h, cfg)
}

/// Interpolated state at fraction `theta` of an accepted step.
pub fn dense_output(z: &[f64], out: &StepOutcome, h: f64, theta: f64) -> Vec<f64> {
    let w = dense_weights(theta, h);
    let mut terms: Vec<(f64, &[f64])> = Vec::with_capacity(9);
    terms.push((w[0], z));
    terms.push((w[1], &out.z_next));
    for (j, k) in out.stages.iter().enumerate() {
        terms.push((w[2 + j], k));
    }
    let mut res = vec![0.0; z.len()];
    kernels::lincomb(&terms, &mut res);
    res
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Contract("integrate needs at least one time".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Contract("times must be finite".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Adaptive integration from `z0` at `times[0]`, reporting the state at
/// every requested time through the step's dense output.
pub fn integrate<F: OdeFunc + ?Sized>(
    f: &F,
    z0: &[f64],
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    validate_times(times)?;
    if z0.len() != f.dim() {
        return Err(Error::Contract(format!(
            "state has {} entries, dynamics expect {}",
            z0.len(),
            f.dim()
        )));
    }
    check_finite(z0, times[0], 0.0, "initial state")?;

    let mut traj = Trajectory {
        times: times.to_vec(),
        states: vec![z0.to_vec()],
        stats: SolverStats::default(),
        steps: Vec::new(),
        locs: vec![OutputLoc::Initial],
    };
    if times.len() == 1 {
        return Ok(traj);
    }
    let t_end = *times.last().unwrap();
    let span = t_end - times[0];
    let (mut h, h_min, h_max) = cfg.step_bounds(span);

    let mut t = times[0];
    let mut z = z0.to_vec();
    let mut k1 = f.eval(&z)?;
    traj.stats.rhs_calls += 1;
    check_finite(&k1, t, h, "stage derivative")?;
    let mut next_out = 1;

    while next_out < times.len() {
        if traj.stats.attempted() >= cfg.max_steps {
            return Err(Error::Diverged {
                t,
                h,
                reason: format!("exceeded max_steps = {}", cfg.max_steps),
            });
        }
        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }
        let out = step_with_k1(f, t, &z, k1.clone(), h, cfg)?;
        traj.stats.rhs_calls += 6;
        traj.stats.function_evals += 7;
        if out.accepted {
            traj.stats.accepted += 1;
            let step_idx = traj.steps.len();
            traj.steps.push((t, h));
            let t_new = if last { t_end } else { t + h };
            while next_out < times.len() && times[next_out] <= t_new {
                let tq = times[next_out];
                if tq == t_new {
                    traj.states.push(out.z_next.clone());
                    traj.locs.push(OutputLoc::StepEnd(step_idx));
                } else {
                    let theta = (tq - t) / h;
                    traj.states.push(dense_output(&z, &out, h, theta));
                    traj.locs.push(OutputLoc::Interior(step_idx, theta));
                }
                next_out += 1;
            }
            t = t_new;
            k1 = out.stages[6].clone();
            z = out.z_next;
            h = out.h_next.min(h_max);
        } else {
            traj.stats.rejected += 1;
            h = out.h_next;
            if h < h_min {
                return Err(Error::Diverged {
                    t,
                    h,
                    reason: "step size fell below h_min".into(),
                });
            }
        }
    }
    Ok(traj)
}

/// Fixed-step propagation with the fifth-order formula (no error control).
pub fn integrate_fixed<F: OdeFunc + ?Sized>(
    f: &F,
    z0: &[f64],
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    let h = (t1 - t0) / n_steps as f64;
    let cfg = SolverConfig::default();
    let mut z = z0.to_vec();
    for i in 0..n_steps {
        z = dopri5_step(f, t0 + i as f64 * h, &z, h, &cfg)?.z_next;
    }
    Ok(z)
}
