//! Depth-first branch-and-bound over 0/1 variables with convex relaxations.

use super::{solve_qp, Constraint, QuadraticProgram, SolveReport, SolveStatus};
use crate::error::QpError;

const INTEGRALITY_TOL: f64 = 1e-6;

/// Which variables are binary, plus the rows that tie them to the
/// continuous variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BinarySpec {
    pub indices: Vec<usize>,
    /// Extra rows such as `u·P_min ≤ P ≤ u·P_max`, added to the program.
    pub linking: Vec<Constraint>,
    /// Pairs `(a, b)` with `x_a + x_b ≤ 1`.
    pub exclusive_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct BranchOptions {
    pub max_binaries: usize,
    pub max_nodes: usize,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self {
            max_binaries: 24,
            max_nodes: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchReport {
    pub solution: SolveReport,
    /// Value of each binary in `BinarySpec::indices` order.
    pub assignment: Vec<bool>,
    pub nodes: usize,
    /// Incumbent objective after every improvement, in discovery order.
    pub incumbent_trace: Vec<f64>,
}

struct Incumbent {
    report: SolveReport,
    assignment: Vec<bool>,
}

fn augmented(p: &QuadraticProgram, bs: &BinarySpec) -> QuadraticProgram {
    let mut out = p.clone();
    out.inequalities.extend(bs.linking.iter().cloned());
    for &(a, b) in &bs.exclusive_pairs {
        out.add_inequality(vec![(a, 1.0), (b, 1.0)], f64::NEG_INFINITY, 1.0);
    }
    for &j in &bs.indices {
        out.lower[j] = out.lower[j].max(0.0);
        out.upper[j] = out.upper[j].min(1.0);
    }
    out
}

fn with_fixings(base: &QuadraticProgram, idx: &[usize], fix: &[Option<bool>]) -> QuadraticProgram {
    let mut p = base.clone();
    for (&j, f) in idx.iter().zip(fix) {
        if let Some(v) = f {
            let v = if *v { 1.0 } else { 0.0 };
            p.lower[j] = v;
            p.upper[j] = v;
        }
    }
    p
}

fn prefer(new: &Incumbent, old: &Incumbent) -> bool {
    let scale = 1.0 + old.report.objective.abs();
    let gap = new.report.objective - old.report.objective;
    if gap < -1e-9 * scale {
        true
    } else if gap > 1e-9 * scale {
        false
    } else {
        new.assignment < old.assignment
    }
}

/// Globally optimal solution over all assignments of the binaries in `bs`.
pub fn solve_with_binaries(p: &QuadraticProgram, bs: &BinarySpec, tol: f64) -> Result<BranchReport, QpError> {
    solve_with_binaries_opts(p, bs, tol, &BranchOptions::default())
}

pub fn solve_with_binaries_opts(
    p: &QuadraticProgram,
    bs: &BinarySpec,
    tol: f64,
    opts: &BranchOptions,
) -> Result<BranchReport, QpError> {
    p.check_dimensions()?;
    let nb = bs.indices.len();
    if nb > opts.max_binaries {
        return Err(QpError::TooManyBinaries {
            count: nb,
            cap: opts.max_binaries,
        });
    }
    let base = augmented(p, bs);
    base.check_dimensions()?;
    if nb == 0 {
        let solution = solve_qp(&base, tol)?;
        return Ok(BranchReport {
            solution,
            assignment: Vec::new(),
            nodes: 1,
            incumbent_trace: Vec::new(),
        });
    }

    let idx = &bs.indices;
    let mut stack: Vec<Vec<Option<bool>>> = vec![vec![None; nb]];
    let mut incumbent: Option<Incumbent> = None;
    let mut trace = Vec::new();
    let mut nodes = 0;
    let mut incomplete = false;

    let offer = |cand: Incumbent, incumbent: &mut Option<Incumbent>, trace: &mut Vec<f64>| {
        if incumbent.as_ref().is_none_or(|old| prefer(&cand, old)) {
            let improved = incumbent
                .as_ref()
                .is_none_or(|old| cand.report.objective < old.report.objective);
            if improved || trace.is_empty() {
                trace.push(cand.report.objective);
            }
            *incumbent = Some(cand);
        }
    };

    while let Some(fix) = stack.pop() {
        if nodes >= opts.max_nodes {
            incomplete = true;
            break;
        }
        nodes += 1;
        let node = with_fixings(&base, idx, &fix);
        let relax = solve_qp(&node, tol)?;
        match relax.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::IterationLimit => {
                incomplete = true;
                continue;
            }
            SolveStatus::Optimal => {}
        }
        let bound = relax.objective;
        if let Some(inc) = &incumbent {
            if bound >= inc.report.objective - 1e-9 * (1.0 + inc.report.objective.abs()) {
                continue;
            }
        }

        let values: Vec<f64> = idx.iter().map(|&j| relax.x[j]).collect();
        let fractional: Vec<usize> = (0..nb)
            .filter(|&k| {
                let v = values[k];
                v.min(1.0 - v).abs() > INTEGRALITY_TOL
            })
            .collect();

        // Candidate roundings that keep the continuous part of the relaxation.
        let mut candidates: Vec<Vec<bool>> = Vec::new();
        if fractional.is_empty() {
            candidates.push(values.iter().map(|&v| v > 0.5).collect());
        } else {
            candidates.push(values.iter().map(|&v| v > INTEGRALITY_TOL).collect());
            candidates.push(values.iter().map(|&v| v > 0.5).collect());
            candidates.dedup();
        }
        let mut solved = false;
        for assign in candidates {
            let mut probe = relax.x.clone();
            for (k, &j) in idx.iter().enumerate() {
                probe[j] = if assign[k] { 1.0 } else { 0.0 };
            }
            if !fractional.is_empty() && node.max_violation(&probe) > tol.max(1e-9) {
                continue;
            }
            let fixed: Vec<Option<bool>> = assign.iter().map(|&b| Some(b)).collect();
            let leaf = solve_qp(&with_fixings(&base, idx, &fixed), tol)?;
            if leaf.status != SolveStatus::Optimal {
                if leaf.status == SolveStatus::IterationLimit {
                    incomplete = true;
                }
                continue;
            }
            let tight = leaf.objective <= bound + 1e-9 * (1.0 + bound.abs()) + tol;
            offer(
                Incumbent {
                    report: leaf,
                    assignment: assign,
                },
                &mut incumbent,
                &mut trace,
            );
            if tight {
                solved = true;
                break;
            }
        }
        if solved || fractional.is_empty() {
            continue;
        }

        // Branch on the most fractional binary, lowest index on ties.
        let k = *fractional
            .iter()
            .min_by(|&&a, &&b| {
                let da = (values[a] - 0.5).abs();
                let db = (values[b] - 0.5).abs();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        let near_one = values[k] >= 0.5;
        let mut far = fix.clone();
        far[k] = Some(!near_one);
        let mut near = fix;
        near[k] = Some(near_one);
        stack.push(far);
        stack.push(near);
    }

    match incumbent {
        Some(inc) => {
            let mut solution = inc.report;
            if incomplete {
                solution.status = SolveStatus::IterationLimit;
            }
            Ok(BranchReport {
                solution,
                assignment: inc.assignment,
                nodes,
                incumbent_trace: trace,
            })
        }
        None => {
            let mut solution = SolveReport::infeasible(p.num_vars());
            if incomplete {
                solution.status = SolveStatus::IterationLimit;
            }
            Ok(BranchReport {
                solution,
                assignment: vec![false; nb],
                nodes,
                incumbent_trace: trace,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One-period unit: vars [P, u, buy, sell]; load 1; 2u ≤ P ≤ 5u; cost P².
    fn unit(buy: f64, sell: f64) -> (QuadraticProgram, BinarySpec) {
        let mut p = QuadraticProgram::new(4);
        p.hessian[(0, 0)] = 2.0;
        p.linear[2] = buy;
        p.linear[3] = -sell;
        p.add_equality(vec![(0, 1.0), (2, 1.0), (3, -1.0)], 1.0);
        p.set_bounds(0, 0.0, 5.0);
        p.set_bounds(2, 0.0, 10.0);
        p.set_bounds(3, 0.0, 10.0);
        let bs = BinarySpec {
            indices: vec![1],
            linking: vec![
                Constraint::new(vec![(0, 1.0), (1, -2.0)], 0.0, f64::INFINITY),
                Constraint::new(vec![(0, 1.0), (1, -5.0)], f64::NEG_INFINITY, 0.0),
            ],
            exclusive_pairs: vec![],
        };
        (p, bs)
    }

    #[test]
    fn commits_when_buying_is_expensive() {
        let (p, bs) = unit(10.0, 1.0);
        let r = solve_with_binaries(&p, &bs, 1e-9).unwrap();
        assert!(r.solution.is_optimal());
        assert_eq!(r.assignment, vec![true]);
        assert!((r.solution.x[0] - 2.0).abs() < 1e-7);
        assert!((r.solution.objective - 3.0).abs() < 1e-7);
    }

    #[test]
    fn stays_off_when_buying_is_cheap() {
        let (p, bs) = unit(1.0, 0.5);
        let r = solve_with_binaries(&p, &bs, 1e-9).unwrap();
        assert_eq!(r.assignment, vec![false]);
        assert!((r.solution.x[2] - 1.0).abs() < 1e-7);
        assert!((r.solution.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn empty_spec_matches_plain_solve() {
        let (p, _) = unit(10.0, 1.0);
        let a = solve_with_binaries(&p, &BinarySpec::default(), 1e-9).unwrap();
        let b = solve_qp(&p, 1e-9).unwrap();
        assert_eq!(a.solution.x, b.x);
        assert_eq!(a.nodes, 1);
    }

    #[test]
    fn cap_is_enforced() {
        let (p, _) = unit(1.0, 1.0);
        let bs = BinarySpec {
            indices: vec![1; 3],
            ..Default::default()
        };
        let opts = BranchOptions {
            max_binaries: 2,
            ..Default::default()
        };
        assert!(matches!(
            solve_with_binaries_opts(&p, &bs, 1e-8, &opts),
            Err(QpError::TooManyBinaries { count: 3, cap: 2 })
        ));
    }

    #[test]
    fn exclusive_pair_blocks_both() {
        // max x0 + x1 with x0 + x1 ≤ 1 ⇒ exactly one set; tie broken lexicographically.
        let mut p = QuadraticProgram::new(2);
        p.linear[0] = -1.0;
        p.linear[1] = -1.0;
        let bs = BinarySpec {
            indices: vec![0, 1],
            linking: vec![],
            exclusive_pairs: vec![(0, 1)],
        };
        let r = solve_with_binaries(&p, &bs, 1e-9).unwrap();
        assert!((r.solution.objective + 1.0).abs() < 1e-7);
        assert_eq!(r.assignment, vec![false, true]);
    }
}
