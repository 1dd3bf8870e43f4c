use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadClass {
    Residential,
    Commercial,
}

impl fmt::Display for LoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoadClass::Residential => "residential",
            LoadClass::Commercial => "commercial",
        })
    }
}

impl FromStr for LoadClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residential" => Ok(LoadClass::Residential),
            "commercial" => Ok(LoadClass::Commercial),
            other => Err(Error::Schema(format!("unknown load class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederNode {
    pub id: usize,
    /// `None` only for the substation.
    pub parent: Option<usize>,
    /// Resistance of the line from the parent, p.u.
    pub r: f64,
    /// Reactance of the line from the parent, p.u.
    pub x: f64,
    pub class: LoadClass,
    /// Peak-scale active load, kW. Zero means no load.
    pub base_kw: f64,
}

/// Radial feeder rooted at node 0 (the substation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub nodes: Vec<FeederNode>,
    /// System power base, kVA.
    pub base_kva: f64,
}

const TRUNK_LEN: usize = 12;

impl Default for FeederSpec {
    /// 37 nodes: a 12-section trunk with two-deep laterals hanging off
    /// every trunk node.
    fn default() -> Self {
        let mut nodes = vec![FeederNode {
            id: 0,
            parent: None,
            r: 0.0,
            x: 0.0,
            class: LoadClass::Residential,
            base_kw: 0.0,
        }];
        for id in 1..37 {
            let (parent, r, x) = if id <= TRUNK_LEN {
                (id - 1, 0.01, 0.008)
            } else {
                (id - TRUNK_LEN, 0.015, 0.012)
            };
            let class = if id % 3 == 0 {
                LoadClass::Commercial
            } else {
                LoadClass::Residential
            };
            let base_kw = match class {
                LoadClass::Residential => 50.0,
                LoadClass::Commercial => 80.0,
            };
            nodes.push(FeederNode {
                id,
                parent: Some(parent),
                r,
                x,
                class,
                base_kw,
            });
        }
        Self {
            nodes,
            base_kva: 5000.0,
        }
    }
}

impl FeederSpec {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn load_nodes(&self) -> impl Iterator<Item = &FeederNode> {
        self.nodes.iter().filter(|n| n.parent.is_some())
    }

    /// Checks ids, parent links, impedances and reachability from the root.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Schema(msg));
        if self.nodes.is_empty() {
            return bad("feeder has no nodes".into());
        }
        if !(self.base_kva > 0.0 && self.base_kva.is_finite()) {
            return bad(format!("base_kva must be positive, got {}", self.base_kva));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!(
                    "node ids must be 0..{}, found {} at position {i}",
                    self.nodes.len(),
                    n.id
                ));
            }
            if !(n.base_kw >= 0.0 && n.base_kw.is_finite()) {
                return bad(format!("node {i}: base_kw must be non-negative"));
            }
            match n.parent {
                None if i != 0 => {
                    return bad(format!(
                        "node {i} has no parent; only node 0 may be the root"
                    ))
                }
                Some(_) if i == 0 => {
                    return bad("node 0 is the substation and cannot have a parent".into())
                }
                Some(p) => {
                    if p >= self.nodes.len() {
                        return bad(format!("node {i}: parent {p} does not exist"));
                    }
                    if !(n.r > 0.0 && n.x > 0.0 && n.r.is_finite() && n.x.is_finite()) {
                        return bad(format!("node {i}: line impedance must be positive"));
                    }
                }
                None => {}
            }
        }
        // Every node must reach the root within n hops.
        for start in 0..self.nodes.len() {
            let mut cur = start;
            let mut hops = 0;
            while let Some(p) = self.nodes[cur].parent {
                cur = p;
                hops += 1;
                if hops > self.nodes.len() {
                    return bad(format!("node {start} is on a cycle"));
                }
            }
        }
        Ok(())
    }

    /// Nodes ordered so every parent precedes its children.
    fn topological_order(&self) -> Vec<usize> {
        let mut children = vec![Vec::new(); self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                children[p].push(n.id);
            }
        }
        let mut order = Vec::with_capacity(self.nodes.len());
        order.push(0);
        let mut i = 0;
        while i < order.len() {
            order.extend_from_slice(&children[order[i]]);
            i += 1;
        }
        order
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "base_kva = {}", self.base_kva);
        for n in &self.nodes {
            let parent = n
                .parent
                .map_or_else(|| "none".to_string(), |p| p.to_string());
            let _ = writeln!(
                s,
                "node {} parent={} r={} x={} class={} base_kw={}",
                n.id, parent, n.r, n.x, n.class, n.base_kw
            );
        }
        s
    }

    /// Parses the format written by [`FeederSpec::to_text`]. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut base_kva = None;
        let mut nodes = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx as u64 + 1;
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("base_kva") {
                let v = rest.trim().trim_start_matches('=').trim();
                base_kva = Some(
                    v.parse::<f64>()
                        .map_err(|e| perr(format!("base_kva: {e}")))?,
                );
                continue;
            }
            let mut tokens = line.split_whitespace();
            if tokens.next() != Some("node") {
                return Err(perr(format!("expected `node` or `base_kva`, got {line:?}")));
            }
            let id: usize = tokens
                .next()
                .ok_or_else(|| perr("missing node id".into()))?
                .parse()
                .map_err(|e| perr(format!("node id: {e}")))?;
            let (mut parent, mut r, mut x, mut class, mut base_kw) = (None, None, None, None, None);
            for tok in tokens {
                let (key, val) = tok
                    .split_once('=')
                    .ok_or_else(|| perr(format!("expected key=value, got {tok:?}")))?;
                let num = |v: &str| v.parse::<f64>().map_err(|e| perr(format!("{key}: {e}")));
                match key {
                    "parent" => {
                        parent = Some(match val {
                            "none" | "-" => None,
                            p => Some(
                                p.parse::<usize>()
                                    .map_err(|e| perr(format!("parent: {e}")))?,
                            ),
                        })
                    }
                    "r" => r = Some(num(val)?),
                    "x" => x = Some(num(val)?),
                    "class" => {
                        class = Some(val.parse::<LoadClass>().map_err(|e| perr(e.to_string()))?)
                    }
                    "base_kw" => base_kw = Some(num(val)?),
                    other => return Err(perr(format!("unknown key {other:?}"))),
                }
            }
            let need = |name: &str| perr(format!("node {id}: missing {name}"));
            nodes.push(FeederNode {
                id,
                parent: parent.ok_or_else(|| need("parent"))?,
                r: r.unwrap_or(0.0),
                x: x.unwrap_or(0.0),
                class: class.ok_or_else(|| need("class"))?,
                base_kw: base_kw.ok_or_else(|| need("base_kw"))?,
            });
        }
        nodes.sort_by_key(|n| n.id);
        let spec = Self {
            nodes,
            base_kva: base_kva.ok_or_else(|| Error::Schema("missing base_kva".into()))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Linearized branch-flow voltages for one instant. Loads are per node in
/// kW / kvar; the substation is held at 1.0 p.u.
pub fn lindistflow_voltages(spec: &FeederSpec, p_kw: &[f64], q_kvar: &[f64]) -> Result<Vec<f64>> {
    let n = spec.len();
    if p_kw.len() != n || q_kvar.len() != n {
        return Err(Error::Contract(format!(
            "expected {n} nodal loads, got {} P and {} Q",
            p_kw.len(),
            q_kvar.len()
        )));
    }
    let order = spec.topological_order();
    let mut p_flow: Vec<f64> = p_kw.iter().map(|p| p / spec.base_kva).collect();
    let mut q_flow: Vec<f64> = q_kvar.iter().map(|q| q / spec.base_kva).collect();
    for &j in order.iter().rev() {
        if let Some(parent) = spec.nodes[j].parent {
            p_flow[parent] += p_flow[j];
            q_flow[parent] += q_flow[j];
        }
    }
    let mut v_sq = vec![1.0; n];
    for &j in &order {
        let node = &spec.nodes[j];
        if let Some(parent) = node.parent {
            let vj = v_sq[parent] - 2.0 * (node.r * p_flow[j] + node.x * q_flow[j]);
            if vj <= 0.0 {
                return Err(Error::InfeasibleLoading { node: j, v_sq: vj });
            }
            v_sq[j] = vj;
        }
    }
    Ok(v_sq.into_iter().map(f64::sqrt).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_line(r: f64, x: f64) -> FeederSpec {
        FeederSpec {
            nodes: vec![
                FeederNode {
                    id: 0,
                    parent: None,
                    r: 0.0,
                    x: 0.0,
                    class: LoadClass::Residential,
                    base_kw: 0.0,
                },
                FeederNode {
                    id: 1,
                    parent: Some(0),
                    r,
                    x,
                    class: LoadClass::Residential,
                    base_kw: 1.0,
                },
            ],
            base_kva: 1.0,
        }
    }

    #[test]
    fn default_feeder_is_valid() {
        let spec = FeederSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.len(), 37);
        assert_eq!(spec.load_nodes().count(), 36);
    }

    #[test]
    fn text_round_trip() {
        let spec = FeederSpec::default();
        assert_eq!(FeederSpec::parse(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "base_kva = 10\nnode 0 parent=none r=0 x=0 class=residential base_kw=0\nnode 1 parent=0 r=abc x=1 class=residential base_kw=1\n";
        match FeederSpec::parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_topologies_are_rejected() {
        let mut spec = one_line(0.01, 0.01);
        spec.nodes[1].r = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = one_line(0.01, 0.01);
        spec.nodes[1].parent = Some(7);
        assert!(spec.validate().is_err());
        let mut spec = one_line(0.01, 0.01);
        spec.nodes[0].parent = Some(1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn no_load_gives_flat_voltage() {
        let spec = FeederSpec::default();
        let v = lindistflow_voltages(&spec, &[0.0; 37], &[0.0; 37]).unwrap();
        assert!(v.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_line_hand_value() {
        let spec = one_line(0.01, 0.01);
        let v = lindistflow_voltages(&spec, &[0.0, 1.0], &[0.0, 0.484322]).unwrap();
        let v_sq: f64 = 1.0 - 2.0 * (0.01 * 1.0 + 0.01 * 0.484322);
        assert!((v_sq - 0.970314).abs() < 1e-6);
        assert!((v[1] - 0.985045).abs() < 1e-6);
    }

    #[test]
    fn doubling_loads_doubles_drop() {
        let spec = FeederSpec::default();
        let p: Vec<f64> = (0..37)
            .map(|i| if i == 0 { 0.0 } else { 30.0 + i as f64 })
            .collect();
        let q: Vec<f64> = p.iter().map(|p| 0.4 * p).collect();
        let v1 = lindistflow_voltages(&spec, &p, &q).unwrap();
        let p2: Vec<f64> = p.iter().map(|p| 2.0 * p).collect();
        let q2: Vec<f64> = q.iter().map(|q| 2.0 * q).collect();
        let v2 = lindistflow_voltages(&spec, &p2, &q2).unwrap();
        for (a, b) in v1.iter().zip(&v2) {
            assert!(((1.0 - b * b) - 2.0 * (1.0 - a * a)).abs() < 1e-12);
        }
    }

    #[test]
    fn overload_is_infeasible() {
        let spec = one_line(0.5, 0.5);
        match lindistflow_voltages(&spec, &[0.0, 1.0], &[0.0, 0.5]) {
            Err(Error::InfeasibleLoading { node, v_sq }) => {
                assert_eq!(node, 1);
                assert!(v_sq <= 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
