use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

/// One affine layer: `y = act(x W + b)` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn init_weight<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(fan_in, fan_out, data).expect("shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// `dims = [in, h1, ..., out]`; `hidden` is applied to every layer but
    /// the last, which uses `output`.
    pub fn init<R: Rng>(
        rng: &mut R,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| Layer {
                weight: init_weight(rng, dims[i], dims[i + 1]),
                bias: Tensor::zeros(1, dims[i + 1]),
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape {
                    op: "mlp chain",
                    left: w[0].weight.shape(),
                    right: w[1].weight.shape(),
                });
            }
        }
        for l in &layers {
            if l.bias.shape() != [1, l.out_dim()] {
                return Err(Error::Shape {
                    op: "mlp bias",
                    left: l.weight.shape(),
                    right: l.bias.shape(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Untaped forward pass over `rows` stacked inputs. Uses the same
    /// kernels as the tape, so results are bit-identical to [`mlp_forward`].
    pub fn forward_values(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        if x.len() != rows * self.in_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                left: [rows, x.len() / rows.max(1)],
                right: [self.in_dim(), self.out_dim()],
            });
        }
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mut out = vec![0.0; rows * l.out_dim()];
            kernels::matmul(
                &cur,
                l.weight.data(),
                &mut out,
                rows,
                l.in_dim(),
                l.out_dim(),
            );
            kernels::add_row_inplace(&mut out, l.bias.data());
            if l.activation == Activation::Tanh {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            cur = out;
        }
        Ok(cur)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf(l.weight.clone()),
                        tape.leaf(l.bias.clone()),
                        l.activation,
                    )
                })
                .collect(),
        }
    }

    /// Binds parameters as constants (no gradient).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.constant(l.weight.clone()),
                        tape.constant(l.bias.clone()),
                        l.activation,
                    )
                })
                .collect(),
        }
    }
}

/// MLP parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<(Var, Var, Activation)>,
}

impl BoundMlp {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|(w, b, _)| [*w, *b]).collect()
    }
}

pub fn mlp_forward(tape: &mut Tape, p: &BoundMlp, x: Var) -> Result<Var> {
    let mut cur = x;
    for &(w, b, act) in &p.layers {
        let lin = tape.matmul(cur, w)?;
        let aff = tape.add_row(lin, b)?;
        cur = match act {
            Activation::Tanh => tape.tanh(aff),
            Activation::Identity => aff,
        };
    }
    Ok(cur)
}

/// GRU cell parameters; weights act on row vectors (`x W`, `h U`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_r: Tensor,
    pub w_u: Tensor,
    pub w_h: Tensor,
    pub u_r: Tensor,
    pub u_u: Tensor,
    pub u_h: Tensor,
    pub b_r: Tensor,
    pub b_u: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_r: init_weight(rng, input_dim, hidden_dim),
            w_u: init_weight(rng, input_dim, hidden_dim),
            w_h: init_weight(rng, input_dim, hidden_dim),
            u_r: init_weight(rng, hidden_dim, hidden_dim),
            u_u: init_weight(rng, hidden_dim, hidden_dim),
            u_h: init_weight(rng, hidden_dim, hidden_dim),
            b_r: Tensor::zeros(1, hidden_dim),
            b_u: Tensor::zeros(1, hidden_dim),
            b_h: Tensor::zeros(1, hidden_dim),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = Tensor::zeros(input_dim, hidden_dim);
        let u = Tensor::zeros(hidden_dim, hidden_dim);
        let b = Tensor::zeros(1, hidden_dim);
        Self {
            w_r: w.clone(),
            w_u: w.clone(),
            w_h: w,
            u_r: u.clone(),
            u_u: u.clone(),
            u_h: u,
            b_r: b.clone(),
            b_u: b.clone(),
            b_h: b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_r.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        for w in [&self.w_r, &self.w_u, &self.w_h] {
            if w.shape() != [i, h] {
                return Err(Error::Shape {
                    op: "gru input weight",
                    left: w.shape(),
                    right: [i, h],
                });
            }
        }
        for u in [&self.u_r, &self.u_u, &self.u_h] {
            if u.shape() != [h, h] {
                return Err(Error::Shape {
                    op: "gru hidden weight",
                    left: u.shape(),
                    right: [h, h],
                });
            }
        }
        for b in [&self.b_r, &self.b_u, &self.b_h] {
            if b.shape() != [1, h] {
                return Err(Error::Shape {
                    op: "gru bias",
                    left: b.shape(),
                    right: [1, h],
                });
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.w_r, &self.w_u, &self.w_h, &self.u_r, &self.u_u, &self.u_h, &self.b_r, &self.b_u,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_r,
            &mut self.w_u,
            &mut self.w_h,
            &mut self.u_r,
            &mut self.u_u,
            &mut self.u_h,
            &mut self.b_r,
            &mut self.b_u,
            &mut self.b_h,
        ]
    }

    pub const NAMES: [&'static str; 9] = [
        "w_r", "w_u", "w_h", "u_r", "u_u", "u_h", "b_r", "b_u", "b_h",
    ];

    pub fn bind(&self, tape: &mut Tape) -> BoundGru {
        let v: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        BoundGru {
            w_r: v[0],
            w_u: v[1],
            w_h: v[2],
            u_r: v[3],
            u_u: v[4],
            u_h: v[5],
            b_r: v[6],
            b_u: v[7],
            b_h: v[8],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    pub w_r: Var,
    pub w_u: Var,
    pub w_h: Var,
    pub u_r: Var,
    pub u_u: Var,
    pub u_h: Var,
    pub b_r: Var,
    pub b_u: Var,
    pub b_h: Var,
}

impl BoundGru {
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.w_r, self.w_u, self.w_h, self.u_r, self.u_u, self.u_h, self.b_r, self.b_u,
            self.b_h,
        ]
    }
}

fn gate(tape: &mut Tape, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    tape.add_row(s, b)
}

/// One GRU update:
/// `r = σ(x W_r + h U_r + b_r)`, `u = σ(x W_u + h U_u + b_u)`,
/// `h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 - u) ⊙ h + u ⊙ h̃`.
pub fn gru_step(tape: &mut Tape, p: &BoundGru, x: Var, h_prev: Var) -> Result<Var> {
    let r_pre = gate(tape, x, p.w_r, h_prev, p.u_r, p.b_r)?;
    let r = tape.sigmoid(r_pre);
    let u_pre = gate(tape, x, p.w_u, h_prev, p.u_u, p.b_u)?;
    let u = tape.sigmoid(u_pre);
    let rh = tape.mul(r, h_prev)?;
    let c_pre = gate(tape, x, p.w_h, rh, p.u_h, p.b_h)?;
    let cand = tape.tanh(c_pre);
    // h' = h + u ⊙ (h̃ - h)
    let diff = tape.sub(cand, h_prev)?;
    let step = tape.mul(u, diff)?;
    tape.add(h_prev, step)
}
