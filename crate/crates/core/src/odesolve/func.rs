use crate::diffcore::{mlp_forward, MlpParams, Tape, Tensor, Var};
use crate::error::Result;

/// Time-invariant right-hand side `dz/dt = f(z)` over a flat state.
pub trait OdeFunc {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> Result<Vec<f64>>;
}

/// Right-hand side that can also pull a cotangent back through one
/// evaluation.
pub trait VjpOdeFunc: OdeFunc {
    fn num_params(&self) -> usize;
    /// Returns `(f(z), aᵀ ∂f/∂z, aᵀ ∂f/∂θ)`.
    fn vjp(&self, z: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>;
}

/// Adapts a closure into an [`OdeFunc`].
pub struct FnOde<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnOde<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> OdeFunc for FnOde<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(z))
    }
}

/// Learned dynamics applied row-wise to `rows` stacked latent states.
#[derive(Debug, Clone, Copy)]
pub struct MlpOde<'a> {
    pub params: &'a MlpParams,
    pub rows: usize,
}

impl<'a> MlpOde<'a> {
    pub fn new(params: &'a MlpParams, rows: usize) -> Self {
        Self { params, rows }
    }
}

impl OdeFunc for MlpOde<'_> {
    fn dim(&self) -> usize {
        self.rows * self.params.in_dim()
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.params.forward_values(z, self.rows)
    }
}

impl VjpOdeFunc for MlpOde<'_> {
    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn vjp(&self, z: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let zv = tape.leaf(Tensor::new(self.rows, self.params.in_dim(), z.to_vec())?);
        let out = mlp_forward(&mut tape, &bound, zv)?;
        let seed = Tensor::new(self.rows, self.params.out_dim(), a.to_vec())?;
        let grads = tape.backward_seeded(&[(out, seed)])?;
        let dz = grads.get_or_zeros(&tape, zv).into_data();
        let mut dtheta = Vec::with_capacity(self.num_params());
        for v in bound.vars() {
            dtheta.extend_from_slice(grads.get_or_zeros(&tape, v).data());
        }
        Ok((tape.value(out).data().to_vec(), dz, dtheta))
    }
}

/// Evaluates the dynamics on a tape, for backprop through the solver.
pub trait TapedOdeFunc {
    fn eval_taped(&self, tape: &mut Tape, z: Var) -> Result<Var>;
}

/// Taped counterpart of [`MlpOde`] holding parameters already bound.
pub struct TapedMlp<'a> {
    pub bound: &'a crate::diffcore::BoundMlp,
}

impl TapedOdeFunc for TapedMlp<'_> {
    fn eval_taped(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        mlp_forward(tape, self.bound, z)
    }
}
