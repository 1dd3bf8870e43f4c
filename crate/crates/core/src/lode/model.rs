use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::SeriesBatch;
use crate::diffcore::{
    gru_step, mlp_forward, Activation, BoundGru, BoundMlp, GruParams, MlpParams, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::odesolve::{integrate, MlpOde, SolverConfig, Trajectory};

/// Architecture of a [`LodeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodeConfig {
    pub latent_dim: usize,
    /// Channels per time point.
    pub obs_dim: usize,
    pub gru_hidden: usize,
    pub dyn_hidden: usize,
    pub dyn_layers: usize,
    /// Minutes per unit of model time.
    pub time_unit_min: f64,
}

impl Default for LodeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            obs_dim: 1,
            gru_hidden: 40,
            dyn_hidden: 100,
            dyn_layers: 3,
            time_unit_min: 60.0,
        }
    }
}

impl LodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("model config: {m}")));
        if self.latent_dim == 0 || self.obs_dim == 0 || self.gru_hidden == 0 || self.dyn_hidden == 0
        {
            return bad("dimensions must be positive");
        }
        if self.dyn_layers == 0 {
            return bad("dynamics need at least one hidden layer");
        }
        if !(self.time_unit_min > 0.0 && self.time_unit_min.is_finite()) {
            return bad("time_unit_min must be positive");
        }
        Ok(())
    }

    /// Encoder input width: masked values, mask, and the time gap.
    pub fn encoder_input(&self) -> usize {
        2 * self.obs_dim + 1
    }
}

/// Encoder GRU with its posterior head, latent dynamics, and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodeModel {
    pub config: LodeConfig,
    pub encoder: GruParams,
    /// `hidden -> 2L`: posterior mean, then pre-softplus scale.
    pub head: MlpParams,
    pub dynamics: MlpParams,
    pub decoder: MlpParams,
}

/// Diagonal Gaussian posterior over the initial latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Model parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundLode {
    pub encoder: BoundGru,
    pub head: BoundMlp,
    pub dynamics: BoundMlp,
    pub decoder: BoundMlp,
}

impl BoundLode {
    /// Same order as [`LodeModel::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.head.vars());
        v.extend(self.dynamics.vars());
        v.extend(self.decoder.vars());
        v
    }
}

impl LodeModel {
    pub fn init<R: Rng>(config: LodeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let l = config.latent_dim;
        let encoder = GruParams::init(rng, config.encoder_input(), config.gru_hidden);
        let head = MlpParams::init(
            rng,
            &[config.gru_hidden, 2 * l],
            Activation::Identity,
            Activation::Identity,
        );
        let mut dims = vec![l];
        dims.extend(std::iter::repeat_n(config.dyn_hidden, config.dyn_layers));
        dims.push(l);
        let dynamics = MlpParams::init(rng, &dims, Activation::Tanh, Activation::Identity);
        let decoder = MlpParams::init(
            rng,
            &[l, config.obs_dim],
            Activation::Identity,
            Activation::Identity,
        );
        Ok(Self {
            config,
            encoder,
            head,
            dynamics,
            decoder,
        })
    }

    /// Checks that all blocks agree with the configuration.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        self.encoder.validate()?;
        let l = c.latent_dim;
        let checks = [
            ("encoder input", self.encoder.input_dim(), c.encoder_input()),
            ("encoder hidden", self.encoder.hidden_dim(), c.gru_hidden),
            ("head input", self.head.in_dim(), c.gru_hidden),
            ("head output", self.head.out_dim(), 2 * l),
            ("dynamics input", self.dynamics.in_dim(), l),
            ("dynamics output", self.dynamics.out_dim(), l),
            ("decoder input", self.decoder.in_dim(), l),
            ("decoder output", self.decoder.out_dim(), c.obs_dim),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::Schema(format!(
                    "{what}: expected {want}, found {got}"
                )));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.head.tensors());
        v.extend(self.dynamics.tensors());
        v.extend(self.decoder.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v.extend(self.dynamics.tensors_mut());
        v.extend(self.decoder.tensors_mut());
        v
    }

    /// Stable names matching [`LodeModel::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = GruParams::NAMES
            .iter()
            .map(|n| format!("encoder.{n}"))
            .collect();
        for (block, mlp) in [
            ("head", &self.head),
            ("dynamics", &self.dynamics),
            ("decoder", &self.decoder),
        ] {
            for i in 0..mlp.layers.len() {
                names.push(format!("{block}.{i}.weight"));
                names.push(format!("{block}.{i}.bias"));
            }
        }
        names
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLode {
        BoundLode {
            encoder: self.encoder.bind(tape),
            head: self.head.bind(tape),
            dynamics: self.dynamics.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    /// Model time of a wall-clock minute relative to `epoch_min`.
    pub fn model_time(&self, t_min: f64, epoch_min: f64) -> f64 {
        (t_min - epoch_min) / self.config.time_unit_min
    }

    /// Posterior over `z0` for every row of the batch, using the entries
    /// the batch exposes to the encoder.
    pub fn encode(&self, batch: &SeriesBatch) -> Result<Vec<PosteriorStats>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let (mu, sigma) = encode_taped(&mut tape, self, &bound, batch)?;
        let l = self.config.latent_dim;
        let (mu, sigma) = (tape.value(mu).data(), tape.value(sigma).data());
        Ok((0..batch.rows())
            .map(|b| PosteriorStats {
                mu: mu[b * l..(b + 1) * l].to_vec(),
                sigma: sigma[b * l..(b + 1) * l].to_vec(),
            })
            .collect())
    }

    /// Latent states at `times` (model units, `times[0]` is the epoch) for
    /// `z0` holding one or more stacked rows.
    pub fn latent_trajectory(
        &self,
        z0: &[f64],
        times: &[f64],
        cfg: &SolverConfig,
    ) -> Result<Trajectory> {
        let rows = z0.len() / self.config.latent_dim;
        integrate(&MlpOde::new(&self.dynamics, rows), z0, times, cfg)
    }

    /// Decoder applied independently to every state of a single-row
    /// trajectory; returns `len(times) x D`.
    pub fn decode(&self, traj: &Trajectory) -> Result<Tensor> {
        let l = self.config.latent_dim;
        let flat: Vec<f64> = traj.states.iter().flatten().copied().collect();
        let rows = flat.len() / l;
        if rows * l != flat.len() || rows != traj.states.len() {
            return Err(Error::Contract(
                "decode expects single-row latent states".into(),
            ));
        }
        let out = self.decoder.forward_values(&flat, rows)?;
        Tensor::new(rows, self.config.obs_dim, out)
    }
}

/// Reparameterized draw `z0 = μ + σ ⊙ ε`.
pub fn sample_latent(ps: &PosteriorStats, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != ps.mu.len() {
        return Err(Error::Contract(format!(
            "eps has {} entries, latent dimension is {}",
            eps.len(),
            ps.mu.len()
        )));
    }
    Ok(ps
        .mu
        .iter()
        .zip(&ps.sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Runs the GRU backward in time over each row's encoder-visible
/// observations, then maps the final hidden state to `(μ, σ)`, both
/// `B x L`. Rows advance only at their own observation times; masked
/// values never enter the arithmetic.
pub fn encode_taped(
    tape: &mut Tape,
    model: &LodeModel,
    bound: &BoundLode,
    batch: &SeriesBatch,
) -> Result<(Var, Var)> {
    let cfg = &model.config;
    if batch.dim() != cfg.obs_dim {
        return Err(Error::Contract(format!(
            "batch has {} channels, model expects {}",
            batch.dim(),
            cfg.obs_dim
        )));
    }
    let (rows, d) = (batch.rows(), batch.dim());
    for b in 0..rows {
        if !(0..batch.len()).any(|t| batch.enc_observed(b, t)) {
            return Err(Error::EmptyRecord(batch.label(b)));
        }
    }
    let epoch = batch.times_min()[0];
    let width = cfg.encoder_input();
    let mut h = tape.constant(Tensor::zeros(rows, cfg.gru_hidden));
    let mut next_later: Vec<Option<f64>> = vec![None; rows];
    for t in (0..batch.len()).rev() {
        let pick: Vec<bool> = (0..rows).map(|b| batch.enc_observed(b, t)).collect();
        if !pick.iter().any(|&p| p) {
            continue;
        }
        let tm = model.model_time(batch.times_min()[t], epoch);
        let mut x = vec![0.0; rows * width];
        for b in 0..rows {
            if !pick[b] {
                continue;
            }
            let row = &mut x[b * width..(b + 1) * width];
            for c in 0..d {
                if batch.enc_mask(b, t, c) {
                    row[c] = batch.value(b, t, c);
                    row[d + c] = 1.0;
                }
            }
            row[2 * d] = next_later[b].map_or(0.0, |later| later - tm);
            next_later[b] = Some(tm);
        }
        let xv = tape.constant(Tensor::new(rows, width, x)?);
        let stepped = gru_step(tape, &bound.encoder, xv, h)?;
        h = tape.select_rows(&pick, stepped, h)?;
    }
    let out = mlp_forward(tape, &bound.head, h)?;
    let l = cfg.latent_dim;
    let mu = tape.slice_cols(out, 0, l)?;
    let raw = tape.slice_cols(out, l, 2 * l)?;
    let sigma = tape.softplus(raw);
    Ok((mu, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::kernels::softplus;
    use crate::griddata::{MeasurementType, Record};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> LodeConfig {
        LodeConfig {
            latent_dim: 3,
            obs_dim: 1,
            gru_hidden: 4,
            dyn_hidden: 5,
            dyn_layers: 2,
            time_unit_min: 60.0,
        }
    }

    fn model() -> LodeModel {
        LodeModel::init(small_config(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn record(mask: Vec<bool>) -> Record {
        let n = mask.len();
        let times = (0..n).map(|i| 15.0 * i as f64).collect();
        let values = (0..n).map(|i| 0.1 * i as f64).collect();
        Record::new(1, MeasurementType::P, times, values, mask).unwrap()
    }

    #[test]
    fn init_shapes_are_consistent() {
        let m = LodeModel::init(LodeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.validate().unwrap();
        assert_eq!(m.tensors().len(), m.tensor_names().len());
        assert_eq!(m.dynamics.layers.len(), 4);
        assert_eq!(m.encoder.hidden_dim(), 40);
    }

    #[test]
    fn single_observation_gives_latent_sized_output() {
        let m = model();
        let r = record(vec![false, true, false]);
        let ps = m
            .encode(&SeriesBatch::from_records(&[&r]).unwrap())
            .unwrap();
        assert_eq!(ps[0].mu.len(), 3);
        assert_eq!(ps[0].sigma.len(), 3);
        assert!(ps[0].sigma.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn zero_encoder_returns_head_bias() {
        let mut m = model();
        for t in m
            .encoder
            .tensors_mut()
            .into_iter()
            .chain(m.head.tensors_mut())
        {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let bias = [0.3, -0.2, 0.1, -1.0, 0.0, 2.0];
        m.head.layers[0].bias.data_mut().copy_from_slice(&bias);
        let r = record(vec![true, true, true, false]);
        let ps = &m
            .encode(&SeriesBatch::from_records(&[&r]).unwrap())
            .unwrap()[0];
        assert_eq!(ps.mu, bias[..3].to_vec());
        let want: Vec<f64> = bias[3..].iter().map(|&b| softplus(b)).collect();
        assert_eq!(ps.sigma, want);
    }

    #[test]
    fn all_masked_record_is_empty() {
        let r = record(vec![false, false]);
        let err = model()
            .encode(&SeriesBatch::from_records(&[&r]).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::EmptyRecord(_)));
    }

    #[test]
    fn batched_encoding_matches_single_rows() {
        let m = model();
        let a = record(vec![true, false, true, true, false]);
        let mut b = record(vec![false, true, true, false, true]);
        b.node_id = 2;
        let both = m
            .encode(&SeriesBatch::from_records(&[&a, &b]).unwrap())
            .unwrap();
        let one_a = m
            .encode(&SeriesBatch::from_records(&[&a]).unwrap())
            .unwrap();
        let one_b = m
            .encode(&SeriesBatch::from_records(&[&b]).unwrap())
            .unwrap();
        for (x, y) in both[0]
            .mu
            .iter()
            .zip(&one_a[0].mu)
            .chain(both[1].mu.iter().zip(&one_b[0].mu))
        {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn sample_latent_examples() {
        let ps = PosteriorStats {
            mu: vec![1.0, -2.0],
            sigma: vec![0.5, 1e-300],
        };
        assert_eq!(sample_latent(&ps, &[0.0, 0.0]).unwrap(), ps.mu);
        assert_eq!(sample_latent(&ps, &[2.0, 7.0]).unwrap(), vec![2.0, -2.0]);
        assert!(sample_latent(&ps, &[1.0]).is_err());
    }

    #[test]
    fn sample_mean_converges() {
        let ps = PosteriorStats {
            mu: vec![0.7],
            sigma: vec![0.3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_latent(&ps, &[rng.sample(rand_distr::StandardNormal)]).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.7).abs() < 3.0 * 0.3 / (n as f64).sqrt());
    }

    #[test]
    fn decode_examples() {
        let mut m = LodeModel::init(
            LodeConfig {
                obs_dim: 3,
                ..small_config()
            },
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        m.decoder.layers[0].weight = Tensor::identity(3);
        let z0 = vec![0.2, -0.1, 0.4];
        let traj = m
            .latent_trajectory(&z0, &[0.0, 0.5, 1.0], &SolverConfig::default())
            .unwrap();
        let out = m.decode(&traj).unwrap();
        let flat: Vec<f64> = traj.states.iter().flatten().copied().collect();
        assert_eq!(out.data(), flat.as_slice());

        m.decoder.layers[0].weight = Tensor::zeros(3, 3);
        m.decoder.layers[0].bias = Tensor::row(vec![1.0, 2.0, 3.0]);
        let out = m.decode(&traj).unwrap();
        assert!(out.data().chunks(3).all(|r| r == [1.0, 2.0, 3.0]));
    }

    #[test]
    fn decode_matches_affine_oracle() {
        let m = model();
        let z0 = vec![0.3, 0.1, -0.5];
        let traj = m
            .latent_trajectory(&z0, &[0.0, 0.25, 2.0], &SolverConfig::default())
            .unwrap();
        let out = m.decode(&traj).unwrap();
        let w = &m.decoder.layers[0].weight;
        let b = m.decoder.layers[0].bias.data()[0];
        for (row, z) in traj.states.iter().enumerate() {
            let mut y = b;
            for (k, zk) in z.iter().enumerate() {
                y += zk * w.get(k, 0);
            }
            assert!((out.get(row, 0) - y).abs() < 1e-14);
        }
    }
}
