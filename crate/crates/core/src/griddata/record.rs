use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasurementType {
    /// Active power, kW.
    P,
    /// Reactive power, kvar.
    Q,
    /// Voltage magnitude, p.u.
    V,
}

impl fmt::Display for MeasurementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasurementType::P => "P",
            MeasurementType::Q => "Q",
            MeasurementType::V => "V",
        })
    }
}

impl FromStr for MeasurementType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" => Ok(MeasurementType::P),
            "Q" => Ok(MeasurementType::Q),
            "V" => Ok(MeasurementType::V),
            other => Err(Error::Schema(format!("unknown measurement type {other:?}"))),
        }
    }
}

/// One node's time series. Unobserved entries hold `NaN` and must never be
/// read; consult `mask` instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub node_id: usize,
    pub kind: MeasurementType,
    pub values: Vec<f64>,
    /// Minutes from midnight.
    pub times: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PartialEq for Record {
    fn eq(&self, other: &Self) -> bool {
        self.node_id == other.node_id
            && self.kind == other.kind
            && self.times == other.times
            && self.mask == other.mask
            && self
                .observed()
                .zip(other.observed())
                .all(|((_, a), (_, b))| a.to_bits() == b.to_bits())
    }
}

impl Record {
    pub fn new(
        node_id: usize,
        kind: MeasurementType,
        times: Vec<f64>,
        values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if times.len() != values.len() || times.len() != mask.len() {
            return Err(Error::Schema(format!(
                "record {node_id}/{kind}: {} times, {} values, {} mask entries",
                times.len(),
                values.len(),
                mask.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Schema(format!(
                "record {node_id}/{kind}: times not strictly increasing"
            )));
        }
        let mut values = values;
        for (v, &m) in values.iter_mut().zip(&mask) {
            if m && !v.is_finite() {
                return Err(Error::Schema(format!(
                    "record {node_id}/{kind}: observed value is not finite"
                )));
            }
            if !m {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            node_id,
            kind,
            values,
            times,
            mask,
        })
    }

    /// Fully observed record.
    pub fn dense(
        node_id: usize,
        kind: MeasurementType,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let mask = vec![true; times.len()];
        Self::new(node_id, kind, times, values, mask)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.node_id, self.kind)
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(time, value)` of observed entries.
    pub fn observed(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.values)
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|((&t, &v), _)| (t, v))
    }

    /// Copy with observations outside `[from, to)` masked out.
    pub fn restricted(&self, from: f64, to: f64) -> Record {
        let mut r = self.clone();
        for ((t, m), v) in r
            .times
            .iter()
            .zip(r.mask.iter_mut())
            .zip(r.values.iter_mut())
        {
            if *t < from || *t >= to {
                *m = false;
                *v = f64::NAN;
            }
        }
        r
    }
}

/// Min-max statistics of one record's observed values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: f64,
    pub max: f64,
}

impl NormStats {
    pub fn of(record: &Record) -> Result<Self> {
        let mut it = record.observed().map(|(_, v)| v);
        let first = it
            .next()
            .ok_or_else(|| Error::EmptyRecord(record.label()))?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Ok(Self { min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Zero-range records map to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        let r = self.range();
        if r > 0.0 {
            (v - self.min) / r
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * self.range()
    }
}

pub fn denormalize(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|&v| stats.denormalize(v)).collect()
}

/// Records sharing one time grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Record>,
    /// Present once the values have been scaled to `[0, 1]`.
    pub norm_stats: Option<Vec<NormStats>>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if let Some(first) = records.first() {
            if records.iter().any(|r| r.times != first.times) {
                return Err(Error::Schema("records do not share a time grid".into()));
            }
        }
        Ok(Self {
            records,
            norm_stats: None,
        })
    }

    pub fn times(&self) -> &[f64] {
        self.records.first().map_or(&[], |r| r.times.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm_stats.is_some()
    }

    pub fn find(&self, node_id: usize, kind: MeasurementType) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.node_id == node_id && r.kind == kind)
    }

    pub fn node_ids(&self) -> Vec<usize> {
        let ids: BTreeSet<usize> = self.records.iter().map(|r| r.node_id).collect();
        ids.into_iter().collect()
    }

    /// Per-record min-max scaling to `[0, 1]` over observed entries.
    pub fn normalize(&self) -> Result<Dataset> {
        if self.is_normalized() {
            return Err(Error::Contract("dataset is already normalized".into()));
        }
        let mut stats = Vec::with_capacity(self.records.len());
        let mut records = self.records.clone();
        for r in &mut records {
            let s = NormStats::of(r)?;
            for (v, &m) in r.values.iter_mut().zip(&r.mask) {
                if m {
                    *v = s.normalize(*v);
                }
            }
            stats.push(s);
        }
        Ok(Dataset {
            records,
            norm_stats: Some(stats),
        })
    }

    pub fn denormalize(&self) -> Result<Dataset> {
        let stats = self
            .norm_stats
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset is not normalized".into()))?;
        let mut records = self.records.clone();
        for (r, s) in records.iter_mut().zip(stats) {
            for (v, &m) in r.values.iter_mut().zip(&r.mask) {
                if m {
                    *v = s.denormalize(*v);
                }
            }
        }
        Ok(Dataset {
            records,
            norm_stats: None,
        })
    }

    /// Sub-dataset with the given record indices.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            norm_stats: self
                .norm_stats
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }
}

/// Re-expresses every record on the sorted union of all record times.
/// A grid point is observed for a record exactly when that record observed
/// it originally.
pub fn unify_time_grid(records: &[Record]) -> Result<Dataset> {
    let mut grid: Vec<f64> = records
        .iter()
        .flat_map(|r| r.times.iter().copied())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut values = vec![f64::NAN; grid.len()];
        let mut mask = vec![false; grid.len()];
        let mut gi = 0;
        for ((&t, &v), &m) in r.times.iter().zip(&r.values).zip(&r.mask) {
            while grid[gi] < t {
                gi += 1;
            }
            if m {
                values[gi] = v;
                mask[gi] = true;
            }
        }
        out.push(Record::new(r.node_id, r.kind, grid.clone(), values, mask)?);
    }
    Dataset::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(node: usize, times: &[f64]) -> Record {
        Record::dense(
            node,
            MeasurementType::P,
            times.to_vec(),
            times.iter().map(|t| t * 2.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn union_of_two_rates() {
        let a = rec(1, &[0.0, 15.0, 30.0]);
        let b = rec(2, &[0.0, 1.0, 2.0]);
        let ds = unify_time_grid(&[a, b]).unwrap();
        assert_eq!(ds.times(), &[0.0, 1.0, 2.0, 15.0, 30.0]);
        assert_eq!(ds.records[0].mask, vec![true, false, false, true, true]);
        assert_eq!(ds.records[1].mask, vec![true, true, true, false, false]);
        assert!(ds.records[0].values[1].is_nan());
    }

    #[test]
    fn single_record_is_unchanged() {
        let a = rec(1, &[0.0, 5.0, 9.0]);
        let ds = unify_time_grid(std::slice::from_ref(&a)).unwrap();
        assert_eq!(ds.records[0], a);
    }

    #[test]
    fn duplicate_times_collapse() {
        let ds = unify_time_grid(&[
            rec(1, &[0.0, 3.0]),
            rec(2, &[3.0, 4.0]),
            rec(3, &[0.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(ds.times(), &[0.0, 3.0, 4.0]);
    }

    #[test]
    fn min_max_examples() {
        let r = Record::dense(
            1,
            MeasurementType::P,
            vec![0.0, 1.0, 2.0],
            vec![2.0, 4.0, 6.0],
        )
        .unwrap();
        let ds = Dataset::new(vec![r]).unwrap().normalize().unwrap();
        assert_eq!(ds.records[0].values, vec![0.0, 0.5, 1.0]);

        let r = Record::dense(1, MeasurementType::V, vec![0.0, 1.0], vec![5.0, 5.0]).unwrap();
        let ds = Dataset::new(vec![r]).unwrap().normalize().unwrap();
        assert_eq!(ds.records[0].values, vec![0.0, 0.0]);
        assert_eq!(
            ds.norm_stats.as_ref().unwrap()[0],
            NormStats { min: 5.0, max: 5.0 }
        );
        assert_eq!(ds.denormalize().unwrap().records[0].values, vec![5.0, 5.0]);
    }

    #[test]
    fn normalizing_empty_record_fails() {
        let r = Record::new(
            4,
            MeasurementType::Q,
            vec![0.0, 1.0],
            vec![1.0, 2.0],
            vec![false, false],
        )
        .unwrap();
        assert!(matches!(
            Dataset::new(vec![r]).unwrap().normalize(),
            Err(Error::EmptyRecord(_))
        ));
    }

    #[test]
    fn record_rejects_bad_shapes() {
        assert!(Record::new(0, MeasurementType::P, vec![0.0], vec![1.0, 2.0], vec![true]).is_err());
        assert!(Record::dense(0, MeasurementType::P, vec![1.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(Record::dense(0, MeasurementType::P, vec![0.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn masked_entries_become_sentinel() {
        let r = Record::new(
            0,
            MeasurementType::P,
            vec![0.0, 1.0],
            vec![3.0, 4.0],
            vec![true, false],
        )
        .unwrap();
        assert!(r.values[1].is_nan());
        assert_eq!(r.observed().collect::<Vec<_>>(), vec![(0.0, 3.0)]);
    }
}
