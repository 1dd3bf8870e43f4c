use super::func::{OdeFunc, VjpOdeFunc};
use super::solver::{integrate, SolverConfig, SolverStats, Trajectory};
use crate::error::{Error, Result};

/// Gradients recovered by the adjoint sweep.
#[derive(Debug, Clone)]
pub struct AdjointGradients {
    pub dl_dz0: Vec<f64>,
    /// Flattened in the parameter order used by [`VjpOdeFunc::vjp`].
    pub dl_dtheta: Vec<f64>,
    pub stats: SolverStats,
}

/// Augmented system `[z, a, g]` in reversed time `s = -t`:
/// `dz/ds = -f(z)`, `da/ds = aᵀ∂f/∂z`, `dg/ds = aᵀ∂f/∂θ`.
struct Augmented<'a, F: ?Sized> {
    f: &'a F,
    n: usize,
    p: usize,
}

impl<F: VjpOdeFunc + ?Sized> OdeFunc for Augmented<'_, F> {
    fn dim(&self) -> usize {
        2 * self.n + self.p
    }

    fn eval(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (z, rest) = state.split_at(self.n);
        let a = &rest[..self.n];
        let (fz, az, ath) = self.f.vjp(z, a)?;
        let mut out = Vec::with_capacity(self.dim());
        out.extend(fz.iter().map(|v| -v));
        out.extend_from_slice(&az);
        out.extend_from_slice(&ath);
        Ok(out)
    }
}

/// Backward sweep of the adjoint ODE over `traj`, adding the supplied
/// gradient at each observation time. Only single evaluations of `f` are
/// ever differentiated; nothing is stored across steps. The latent state is
/// re-anchored to the forward solution at each segment start.
pub fn adjoint_backward<F: VjpOdeFunc + ?Sized>(
    f: &F,
    traj: &Trajectory,
    dl_dz: &[Vec<f64>],
    cfg: &SolverConfig,
) -> Result<AdjointGradients> {
    let n = f.dim();
    let p = f.num_params();
    if dl_dz.len() != traj.times.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} trajectory times",
            dl_dz.len(),
            traj.times.len()
        )));
    }
    if dl_dz.iter().any(|g| g.len() != n) {
        return Err(Error::Contract("gradient width differs from state".into()));
    }
    let aug = Augmented { f, n, p };
    let last = traj.times.len() - 1;
    let mut a = dl_dz[last].clone();
    let mut g = vec![0.0; p];
    let mut stats = SolverStats::default();

    // segment boundaries: the epoch plus every time carrying a gradient
    let mut i = last;
    while i > 0 {
        let mut j = i - 1;
        while j > 0 && dl_dz[j].iter().all(|&v| v == 0.0) {
            j -= 1;
        }
        let mut state = Vec::with_capacity(aug.dim());
        state.extend_from_slice(&traj.states[i]);
        state.extend_from_slice(&a);
        state.extend_from_slice(&g);
        let seg = integrate(&aug, &state, &[-traj.times[i], -traj.times[j]], cfg)?;
        stats.merge(&seg.stats);
        let end = &seg.states[1];
        a.copy_from_slice(&end[n..2 * n]);
        g.copy_from_slice(&end[2 * n..]);
        for (av, gv) in a.iter_mut().zip(&dl_dz[j]) {
            *av += gv;
        }
        i = j;
    }
    Ok(AdjointGradients {
        dl_dz0: a,
        dl_dtheta: g,
        stats,
    })
}
