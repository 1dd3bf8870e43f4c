use super::func::{OdeFunc, TapedOdeFunc};
use super::solver::{integrate, stage_terms, OutputLoc, SolverConfig, Trajectory};
use super::tableau::dense_weights;
use crate::diffcore::{Tape, Var};
use crate::error::Result;

/// Integrates on the tape so gradients flow back through every accepted
/// step (discretize-then-optimize).
///
/// Step sizes are chosen by an untaped solve first and then treated as
/// constants; the taped replay performs the same arithmetic, so its values
/// are bit-identical to the plain trajectory.
pub fn integrate_taped<F, G>(
    tape: &mut Tape,
    f: &F,
    f_taped: &G,
    z0: Var,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<Var>, Trajectory)>
where
    F: OdeFunc + ?Sized,
    G: TapedOdeFunc + ?Sized,
{
    let z0_values = tape.value(z0).data().to_vec();
    let traj = integrate(f, &z0_values, times, cfg)?;

    let mut z = z0;
    let mut k1 = f_taped.eval_taped(tape, z)?;
    // per accepted step: (z_start, z_end, k1..k7)
    let mut replay: Vec<(Var, Var, Vec<Var>)> = Vec::with_capacity(traj.steps.len());
    for &(_, h) in &traj.steps {
        let mut stages = vec![k1];
        let mut z_end = z;
        for s in 2..=7 {
            let terms: Vec<(f64, Var)> = stage_terms(h, s)
                .into_iter()
                .map(|(c, j)| (c, if j == usize::MAX { z } else { stages[j] }))
                .collect();
            let zs = tape.lincomb(&terms)?;
            let k = f_taped.eval_taped(tape, zs)?;
            stages.push(k);
            if s == 7 {
                z_end = zs;
            }
        }
        replay.push((z, z_end, stages.clone()));
        z = z_end;
        k1 = stages[6];
    }

    let mut outputs = Vec::with_capacity(times.len());
    for loc in &traj.locs {
        let v = match *loc {
            OutputLoc::Initial => z0,
            OutputLoc::StepEnd(i) => replay[i].1,
            OutputLoc::Interior(i, theta) => {
                let (zs, ze, ref ks) = replay[i];
                let w = dense_weights(theta, traj.steps[i].1);
                let mut terms = vec![(w[0], zs), (w[1], ze)];
                terms.extend(ks.iter().enumerate().map(|(j, k)| (w[2 + j], *k)));
                tape.lincomb(&terms)?
            }
        };
        outputs.push(v);
    }
    Ok((outputs, traj))
}
