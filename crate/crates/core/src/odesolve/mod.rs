//! Adaptive Dormand–Prince 5(4) integration of time-invariant dynamics,
//! with gradients either by replaying the solve on the tape or by the
//! adjoint method.

pub mod adjoint;
pub mod func;
pub mod solver;
pub mod tableau;
pub mod taped;

pub use adjoint::{adjoint_backward, AdjointGradients};
pub use func::{FnOde, MlpOde, OdeFunc, TapedMlp, TapedOdeFunc, VjpOdeFunc};
pub use solver::{
    dense_output, dopri5_step, integrate, integrate_fixed, SolverConfig, SolverStats, StepOutcome,
    Trajectory,
};
pub use taped::integrate_taped;
