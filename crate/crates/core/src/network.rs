//! Lossless DC power flow over the transmission topology.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::NetworkError;

pub type BusId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    /// Susceptance in MW per radian.
    pub susceptance: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkTopology {
    pub buses: Vec<BusId>,
    pub slack_bus: BusId,
    #[serde(default)]
    pub lines: Vec<Line>,
}

impl NetworkTopology {
    pub fn bus_index(&self, bus: BusId) -> Result<usize, NetworkError> {
        self.buses
            .iter()
            .position(|&b| b == bus)
            .ok_or(NetworkError::UnknownBus(bus))
    }

    pub fn slack_index(&self) -> Result<usize, NetworkError> {
        self.bus_index(self.slack_bus)
    }

    /// Checks that every line endpoint exists and every bus reaches the slack.
    pub fn check_connected(&self) -> Result<(), NetworkError> {
        let n = self.buses.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for l in &self.lines {
            let (a, b) = (self.bus_index(l.from)?, self.bus_index(l.to)?);
            adj[a].push(b);
            adj[b].push(a);
        }
        let start = self.slack_index()?;
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(NetworkError::Disconnected(self.buses[i])),
            None => Ok(()),
        }
    }
}

/// Angles per bus (topology order) and directed flows per line.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub theta: Vec<f64>,
    /// Flow on each line in its declared `from → to` direction.
    pub flows: Vec<f64>,
}

impl FlowState {
    /// Flow from `a` to `b` summed over parallel lines; `None` if no line joins them.
    pub fn flow_between(&self, topology: &NetworkTopology, a: BusId, b: BusId) -> Option<f64> {
        let mut total = None;
        for (l, &f) in topology.lines.iter().zip(&self.flows) {
            if l.from == a && l.to == b {
                *total.get_or_insert(0.0) += f;
            } else if l.from == b && l.to == a {
                *total.get_or_insert(0.0) -= f;
            }
        }
        total
    }
}

pub fn compute_line_flows(topology: &NetworkTopology, theta: &[f64]) -> Result<FlowState, NetworkError> {
    if theta.len() != topology.buses.len() {
        return Err(NetworkError::AngleLength {
            got: theta.len(),
            expected: topology.buses.len(),
        });
    }
    let slack = theta[topology.slack_index()?];
    if slack != 0.0 {
        return Err(NetworkError::SlackAngle(slack));
    }
    let flows = topology
        .lines
        .iter()
        .map(|l| {
            let (i, j) = (topology.bus_index(l.from)?, topology.bus_index(l.to)?);
            Ok(l.susceptance * (theta[i] - theta[j]))
        })
        .collect::<Result<Vec<_>, NetworkError>>()?;
    Ok(FlowState {
        theta: theta.to_vec(),
        flows,
    })
}

/// Per-bus `injection − net outflow`; all zeros when the flows balance.
pub fn nodal_balance_residual(topology: &NetworkTopology, flows: &FlowState, injections: &[f64]) -> Vec<f64> {
    let mut r = injections.to_vec();
    r.resize(topology.buses.len(), 0.0);
    for (l, &f) in topology.lines.iter().zip(&flows.flows) {
        if let (Ok(i), Ok(j)) = (topology.bus_index(l.from), topology.bus_index(l.to)) {
            r[i] -= f;
            r[j] += f;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineViolation {
    pub line: usize,
    pub from: BusId,
    pub to: BusId,
    pub flow: f64,
    pub overflow: f64,
}

pub fn check_line_limits(topology: &NetworkTopology, flows: &FlowState) -> Vec<LineViolation> {
    topology
        .lines
        .iter()
        .zip(&flows.flows)
        .enumerate()
        .filter_map(|(k, (l, &f))| {
            let overflow = (f - l.max).max(l.min - f);
            (overflow > 0.0).then_some(LineViolation {
                line: k,
                from: l.from,
                to: l.to,
                flow: f,
                overflow,
            })
        })
        .collect()
}

/// Linear map from bus injections to line flows, with the slack bus
/// absorbing the net imbalance. Row `k` gives line `k`'s flow per MW
/// injected at each bus (topology order); the slack column is zero.
#[derive(Debug, Clone)]
pub struct FlowSensitivity {
    pub matrix: DMatrix<f64>,
    /// Angle per MW injected, same layout as `matrix` but over buses.
    pub angles: DMatrix<f64>,
}

impl FlowSensitivity {
    pub fn new(topology: &NetworkTopology) -> Result<Self, NetworkError> {
        topology.check_connected()?;
        let n = topology.buses.len();
        let s = topology.slack_index()?;
        let mut bmat = DMatrix::<f64>::zeros(n, n);
        let mut ends = Vec::with_capacity(topology.lines.len());
        for l in &topology.lines {
            let (i, j) = (topology.bus_index(l.from)?, topology.bus_index(l.to)?);
            bmat[(i, i)] += l.susceptance;
            bmat[(j, j)] += l.susceptance;
            bmat[(i, j)] -= l.susceptance;
            bmat[(j, i)] -= l.susceptance;
            ends.push((i, j));
        }
        let keep: Vec<usize> = (0..n).filter(|&k| k != s).collect();
        let mut angles = DMatrix::<f64>::zeros(n, n);
        if !keep.is_empty() {
            let reduced = DMatrix::from_fn(keep.len(), keep.len(), |a, b| bmat[(keep[a], keep[b])]);
            let inv = reduced
                .cholesky()
                .map(|c| c.inverse())
                .ok_or(NetworkError::Disconnected(topology.buses[keep[0]]))?;
            for (a, &ka) in keep.iter().enumerate() {
                for (b, &kb) in keep.iter().enumerate() {
                    angles[(ka, kb)] = inv[(a, b)];
                }
            }
        }
        let matrix = DMatrix::from_fn(topology.lines.len(), n, |k, b| {
            let (i, j) = ends[k];
            topology.lines[k].susceptance * (angles[(i, b)] - angles[(j, b)])
        });
        Ok(Self { matrix, angles })
    }

    pub fn flows(&self, injections: &[f64]) -> FlowState {
        let inj = DVector::from_column_slice(injections);
        let theta = &self.angles * &inj;
        let flows = &self.matrix * &inj;
        FlowState {
            theta: theta.iter().copied().collect(),
            flows: flows.iter().copied().collect(),
        }
    }
}

/// Sums per-bus injections given as `(bus, MW)` pairs into topology order.
pub fn injection_vector(
    topology: &NetworkTopology,
    entries: impl IntoIterator<Item = (BusId, f64)>,
) -> Result<Vec<f64>, NetworkError> {
    let mut by_bus: BTreeMap<usize, f64> = BTreeMap::new();
    for (bus, v) in entries {
        *by_bus.entry(topology.bus_index(bus)?).or_default() += v;
    }
    let mut out = vec![0.0; topology.buses.len()];
    for (i, v) in by_bus {
        out[i] = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(from: BusId, to: BusId, b: f64) -> Line {
        Line {
            from,
            to,
            susceptance: b,
            min: -1.0,
            max: 1.0,
        }
    }

    fn chain() -> NetworkTopology {
        NetworkTopology {
            buses: vec![1, 2, 3],
            slack_bus: 1,
            lines: vec![line(1, 2, 10.0), line(2, 3, 5.0)],
        }
    }

    #[test]
    fn equal_angles_carry_nothing() {
        let t = NetworkTopology {
            buses: vec![1, 2],
            slack_bus: 1,
            lines: vec![line(1, 2, 10.0)],
        };
        let f = compute_line_flows(&t, &[0.0, 0.0]).unwrap();
        assert_eq!(f.flows, vec![0.0]);
        let f = compute_line_flows(&t, &[0.0, -0.1]).unwrap();
        assert!((f.flows[0] - 1.0).abs() < 1e-12);
        assert_eq!(f.flow_between(&t, 2, 1), Some(-f.flows[0]));
    }

    #[test]
    fn three_bus_chain_matches_hand_product() {
        let f = compute_line_flows(&chain(), &[0.0, -0.02, -0.1]).unwrap();
        assert!((f.flows[0] - 0.2).abs() < 1e-12);
        assert!((f.flows[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn angle_errors() {
        let t = chain();
        assert!(matches!(
            compute_line_flows(&t, &[0.0]),
            Err(NetworkError::AngleLength { .. })
        ));
        assert!(matches!(
            compute_line_flows(&t, &[0.1, 0.0, 0.0]),
            Err(NetworkError::SlackAngle(_))
        ));
        let mut bad = t.clone();
        bad.lines[0].to = 9;
        assert_eq!(compute_line_flows(&bad, &[0.0; 3]), Err(NetworkError::UnknownBus(9)));
    }

    #[test]
    fn balance_residuals() {
        let iso = NetworkTopology {
            buses: vec![7],
            slack_bus: 7,
            lines: vec![],
        };
        let f = compute_line_flows(&iso, &[0.0]).unwrap();
        assert_eq!(nodal_balance_residual(&iso, &f, &[0.0]), vec![0.0]);

        let t = NetworkTopology {
            buses: vec![1, 2],
            slack_bus: 1,
            lines: vec![line(1, 2, 10.0)],
        };
        let f = compute_line_flows(&t, &[0.0, -0.1]).unwrap();
        let r = nodal_balance_residual(&t, &f, &[1.0, -1.0]);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        let r = nodal_balance_residual(&t, &f, &[1.5, -1.0]);
        assert!((r[0] - 0.5).abs() < 1e-12 && r[1].abs() < 1e-12);
    }

    #[test]
    fn line_limits_are_closed() {
        let t = NetworkTopology {
            buses: vec![1, 2],
            slack_bus: 1,
            lines: vec![line(1, 2, 10.0)],
        };
        let inside = FlowState {
            theta: vec![0.0, 0.0],
            flows: vec![0.5],
        };
        assert!(check_line_limits(&t, &inside).is_empty());
        let at = FlowState {
            flows: vec![1.0],
            ..inside.clone()
        };
        assert!(check_line_limits(&t, &at).is_empty());
        let over = FlowState {
            flows: vec![1.2],
            ..inside
        };
        let v = check_line_limits(&t, &over);
        assert_eq!(v.len(), 1);
        assert!((v[0].overflow - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_reproduces_balanced_flows() {
        let t = chain();
        let s = FlowSensitivity::new(&t).unwrap();
        let inj = [-3.0, 1.0, 2.0];
        let f = s.flows(&inj);
        let r = nodal_balance_residual(&t, &f, &inj);
        assert!(r.iter().all(|v| v.abs() < 1e-12), "{r:?}");
        let g = compute_line_flows(&t, &f.theta).unwrap();
        assert!((g.flows[0] - f.flows[0]).abs() < 1e-12);
    }

    #[test]
    fn disconnected_is_rejected() {
        let t = NetworkTopology {
            buses: vec![1, 2, 3],
            slack_bus: 1,
            lines: vec![line(1, 2, 1.0)],
        };
        assert_eq!(t.check_connected(), Err(NetworkError::Disconnected(3)));
    }
}
