use crate::error::{Error, Result};
use crate::griddata::Record;

/// Rows of `D`-channel series on one shared time grid, with separate masks
/// for what the encoder may see and what the loss scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBatch {
    times_min: Vec<f64>,
    rows: usize,
    dim: usize,
    /// `[row][time][channel]`; zero wherever unobserved.
    values: Vec<f64>,
    enc_mask: Vec<bool>,
    loss_mask: Vec<bool>,
    labels: Vec<String>,
}

impl SeriesBatch {
    /// `values` and `mask` are `[row][time][channel]`. Masked-out values
    /// are never read and may hold anything.
    pub fn new(
        times_min: Vec<f64>,
        rows: usize,
        dim: usize,
        values: &[f64],
        mask: &[bool],
    ) -> Result<Self> {
        let n = rows * times_min.len() * dim;
        if values.len() != n || mask.len() != n {
            return Err(Error::Contract(format!(
                "batch of {rows} x {} x {dim} needs {n} entries, got {} values and {} mask flags",
                times_min.len(),
                values.len(),
                mask.len()
            )));
        }
        if times_min.is_empty() {
            return Err(Error::Contract("batch needs at least one time".into()));
        }
        if times_min.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract(
                "batch times must be strictly increasing".into(),
            ));
        }
        let mut clean = vec![0.0; n];
        for i in 0..n {
            if mask[i] {
                if !values[i].is_finite() {
                    return Err(Error::Contract("observed batch value is not finite".into()));
                }
                clean[i] = values[i];
            }
        }
        Ok(Self {
            times_min,
            rows,
            dim,
            values: clean,
            enc_mask: mask.to_vec(),
            loss_mask: mask.to_vec(),
            labels: (0..rows).map(|b| format!("row {b}")).collect(),
        })
    }

    /// One-channel rows from records sharing a time grid.
    pub fn from_records(records: &[&Record]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Contract("batch needs at least one record".into()))?;
        let mut values = Vec::with_capacity(records.len() * first.len());
        let mut mask = Vec::with_capacity(values.capacity());
        for r in records {
            if r.times != first.times {
                return Err(Error::Contract(
                    "batch records must share a time grid".into(),
                ));
            }
            values.extend_from_slice(&r.values);
            mask.extend_from_slice(&r.mask);
        }
        let mut batch = Self::new(first.times.clone(), records.len(), 1, &values, &mask)?;
        batch.labels = records.iter().map(|r| r.label()).collect();
        Ok(batch)
    }

    /// Encoder sees only `t < split_min`; the loss scores only `t >= split_min`.
    pub fn split_at(mut self, split_min: f64) -> Self {
        let per_row = self.times_min.len() * self.dim;
        for i in 0..self.values.len() {
            let t = self.times_min[(i % per_row) / self.dim];
            if t < split_min {
                self.loss_mask[i] = false;
            } else {
                self.enc_mask[i] = false;
            }
        }
        self
    }

    pub fn times_min(&self) -> &[f64] {
        &self.times_min
    }

    pub fn len(&self) -> usize {
        self.times_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_min.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self, row: usize) -> String {
        self.labels[row].clone()
    }

    fn idx(&self, b: usize, t: usize, c: usize) -> usize {
        (b * self.times_min.len() + t) * self.dim + c
    }

    pub fn value(&self, b: usize, t: usize, c: usize) -> f64 {
        self.values[self.idx(b, t, c)]
    }

    pub fn enc_mask(&self, b: usize, t: usize, c: usize) -> bool {
        self.enc_mask[self.idx(b, t, c)]
    }

    pub fn loss_mask(&self, b: usize, t: usize, c: usize) -> bool {
        self.loss_mask[self.idx(b, t, c)]
    }

    pub fn enc_observed(&self, b: usize, t: usize) -> bool {
        (0..self.dim).any(|c| self.enc_mask(b, t, c))
    }

    pub fn loss_observed_anywhere(&self, t: usize) -> bool {
        (0..self.rows).any(|b| (0..self.dim).any(|c| self.loss_mask(b, t, c)))
    }

    pub fn loss_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}
