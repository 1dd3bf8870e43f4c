use rand::Rng;
use serde::{Deserialize, Serialize};

use super::feeder::{lindistflow_voltages, FeederSpec, LoadClass};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// `tan(acos(0.9))`: reactive-to-active ratio at 0.9 lagging power factor.
pub const TAN_PHI: f64 = 0.484_322_104_837_852_5;

/// Per-node load at 1-min resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node_id: usize,
    pub p_kw: Vec<f64>,
    pub q_kvar: Vec<f64>,
}

/// Instantaneous ground truth for every node at 1-min resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSeries {
    /// Minutes from midnight, `0, 1, ..`.
    pub times: Vec<f64>,
    pub profiles: Vec<NodeProfile>,
    /// `voltages[node][minute]`, p.u.
    pub voltages: Vec<Vec<f64>>,
}

/// Gaussian bump on the 24-hour clock, so evening load carries past midnight.
fn daily_bump(h: f64, center: f64, width: f64) -> f64 {
    [-24.0, 0.0, 24.0]
        .iter()
        .map(|shift| {
            let d = (h - center - shift) / width;
            (-0.5 * d * d).exp()
        })
        .sum()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Residential archetype: base load with a morning and a stronger evening peak.
fn residential(hour: f64) -> f64 {
    0.35 + 0.35 * daily_bump(hour, 7.5, 1.2) + 0.6 * daily_bump(hour, 20.0, 2.5)
}

/// Commercial archetype: daytime plateau between 08:00 and 18:00.
fn commercial(hour: f64) -> f64 {
    0.3 + 0.62 * (logistic((hour - 8.0) / 0.6) - logistic((hour - 18.0) / 0.6))
}

/// Residential share of a node's load.
fn residential_share<R: Rng>(class: LoadClass, rng: &mut R) -> f64 {
    match class {
        LoadClass::Residential => rng.random_range(0.8..0.9),
        LoadClass::Commercial => rng.random_range(0.1..0.2),
    }
}

/// Smooth positive daily load curves. Each node mixes the residential and
/// commercial archetypes, its class setting the dominant share, and scales
/// the mix by its base power.
pub fn generate_profiles(
    spec: &FeederSpec,
    day_minutes: usize,
    seed: u64,
) -> Result<Vec<NodeProfile>> {
    spec.validate()?;
    Ok(spec
        .nodes
        .iter()
        .map(|node| {
            let mut rng = substream(seed, Stream::Data, node.id as u64);
            let w = residential_share(node.class, &mut rng);
            let scale = node.base_kw * rng.random_range(0.9..1.1);
            let p_kw: Vec<f64> = (0..day_minutes)
                .map(|m| {
                    let h = m as f64 / 60.0;
                    scale * (w * residential(h) + (1.0 - w) * commercial(h))
                })
                .collect();
            let q_kvar = p_kw.iter().map(|p| p * TAN_PHI).collect();
            NodeProfile {
                node_id: node.id,
                p_kw,
                q_kvar,
            }
        })
        .collect())
}

/// Voltage magnitudes for every node and minute of the given profiles.
pub fn feeder_voltages(spec: &FeederSpec, profiles: &[NodeProfile]) -> Result<Vec<Vec<f64>>> {
    if profiles.len() != spec.len() {
        return Err(Error::Contract(format!(
            "{} profiles for a {}-node feeder",
            profiles.len(),
            spec.len()
        )));
    }
    let minutes = profiles.first().map_or(0, |p| p.p_kw.len());
    let mut out = vec![Vec::with_capacity(minutes); spec.len()];
    let mut p = vec![0.0; spec.len()];
    let mut q = vec![0.0; spec.len()];
    for m in 0..minutes {
        for (i, prof) in profiles.iter().enumerate() {
            p[i] = prof.p_kw[m];
            q[i] = prof.q_kvar[m];
        }
        let v = lindistflow_voltages(spec, &p, &q)?;
        for (series, vm) in out.iter_mut().zip(v) {
            series.push(vm);
        }
    }
    Ok(out)
}

impl TruthSeries {
    pub fn generate(spec: &FeederSpec, day_minutes: usize, seed: u64) -> Result<Self> {
        let profiles = generate_profiles(spec, day_minutes, seed)?;
        let voltages = feeder_voltages(spec, &profiles)?;
        Ok(Self {
            times: (0..day_minutes).map(|m| m as f64).collect(),
            profiles,
            voltages,
        })
    }

    pub fn minutes(&self) -> usize {
        self.times.len()
    }

    /// Dense 1-min P, Q and V records for every load node.
    pub fn to_records(&self) -> Result<Vec<super::Record>> {
        use super::MeasurementType::*;
        let mut out = Vec::new();
        for prof in self.profiles.iter().filter(|p| p.node_id != 0) {
            for kind in [P, Q, V] {
                let values = self
                    .series(prof.node_id, kind)
                    .expect("node exists")
                    .to_vec();
                out.push(super::Record::dense(
                    prof.node_id,
                    kind,
                    self.times.clone(),
                    values,
                )?);
            }
        }
        Ok(out)
    }

    pub fn series(&self, node_id: usize, kind: super::MeasurementType) -> Option<&[f64]> {
        use super::MeasurementType::*;
        let prof = self.profiles.iter().find(|p| p.node_id == node_id)?;
        Some(match kind {
            P => &prof.p_kw,
            Q => &prof.q_kvar,
            V => &self.voltages[node_id],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tan_phi_constant() {
        assert!((TAN_PHI - 0.9f64.acos().tan()).abs() < 1e-15);
    }

    #[test]
    fn zero_base_gives_zero_load() {
        let mut spec = FeederSpec::default();
        for n in &mut spec.nodes {
            n.base_kw = 0.0;
        }
        let profiles = generate_profiles(&spec, 1440, 3).unwrap();
        assert!(profiles
            .iter()
            .all(|p| p.p_kw.iter().chain(&p.q_kvar).all(|&v| v == 0.0)));
    }

    #[test]
    fn power_factor_holds() {
        let profiles = generate_profiles(&FeederSpec::default(), 1440, 11).unwrap();
        for prof in &profiles[1..] {
            for (p, q) in prof.p_kw.iter().zip(&prof.q_kvar) {
                assert!(*p > 0.0);
                assert_eq!(*q, p * TAN_PHI);
                assert!((q / p - 0.484322).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn profiles_are_seeded() {
        let spec = FeederSpec::default();
        assert_eq!(
            generate_profiles(&spec, 1440, 5).unwrap(),
            generate_profiles(&spec, 1440, 5).unwrap()
        );
        assert_ne!(
            generate_profiles(&spec, 1440, 5).unwrap(),
            generate_profiles(&spec, 1440, 6).unwrap()
        );
    }

    #[test]
    fn residential_peaks_in_evening() {
        let profiles = generate_profiles(&FeederSpec::default(), 1440, 1).unwrap();
        let p = &profiles[1].p_kw;
        let argmax = (0..1440).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert!((17 * 60..21 * 60).contains(&argmax));
    }

    #[test]
    fn commercial_plateau_at_midday() {
        let profiles = generate_profiles(&FeederSpec::default(), 1440, 1).unwrap();
        let p = &profiles[3].p_kw;
        assert!(p[12 * 60] > p[19 * 60] && p[12 * 60] > 2.0 * p[3 * 60]);
    }

    #[test]
    fn default_voltages_inside_envelope() {
        for seed in [0, 1, 2] {
            let truth = TruthSeries::generate(&FeederSpec::default(), 1440, seed).unwrap();
            let (lo, hi) = truth
                .voltages
                .iter()
                .flatten()
                .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            assert!(lo > 0.9 && hi <= 1.0, "V range [{lo}, {hi}]");
        }
    }
}
