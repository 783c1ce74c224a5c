#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use vfp_core::qp::{solve_qp, BinarySpec, Constraint, QuadraticProgram, SolveStatus};
use vfp_core::scenario::{load_scenario, Scenario};

pub fn bundled(name: &str) -> Scenario {
    load_scenario(format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// `k` units with output `x_j ∈ {0} ∪ [lo_j, hi_j]` switched by `u_j`, a
/// demand row `Σ x ≥ d`, convex quadratic output cost and fixed costs.
/// Variables are `[x_0..x_k, u_0..u_k]`.
pub fn random_commitment(rng: &mut impl Rng, k: usize) -> (QuadraticProgram, BinarySpec) {
    let mut p = QuadraticProgram::new(2 * k);
    let m = DMatrix::from_fn(k, k, |_, _| rng.random_range(-0.3..0.3));
    let q = m.transpose() * &m;
    let mut cap = 0.0;
    let mut bs = BinarySpec::default();
    for j in 0..k {
        for i in 0..k {
            p.hessian[(i, j)] = q[(i, j)];
        }
        p.hessian[(j, j)] += rng.random_range(0.2..2.0);
        p.linear[j] = rng.random_range(-2.0..2.0);
        p.linear[k + j] = rng.random_range(0.0..3.0);
        let hi = rng.random_range(1.0..5.0);
        let lo = rng.random_range(0.0..0.5) * hi;
        cap += hi;
        p.set_bounds(j, 0.0, hi);
        p.set_bounds(k + j, 0.0, 1.0);
        bs.indices.push(k + j);
        bs.linking
            .push(Constraint::new(vec![(j, 1.0), (k + j, -lo)], 0.0, f64::INFINITY));
        bs.linking
            .push(Constraint::new(vec![(j, 1.0), (k + j, -hi)], f64::NEG_INFINITY, 0.0));
    }
    let demand = rng.random_range(0.1..0.6) * cap;
    p.add_inequality((0..k).map(|j| (j, 1.0)).collect(), demand, f64::INFINITY);
    (p, bs)
}

/// Best objective over every binary assignment, each leaf solved as a QP.
pub fn exhaustive_binaries(p: &QuadraticProgram, bs: &BinarySpec, tol: f64) -> Option<f64> {
    let nb = bs.indices.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << nb) {
        let mut leaf = p.clone();
        for (b, &j) in bs.indices.iter().enumerate() {
            let v = f64::from((mask >> b) & 1);
            leaf.set_bounds(j, v, v);
        }
        if bs
            .exclusive_pairs
            .iter()
            .any(|&(a, b)| leaf.lower[a] + leaf.lower[b] > 1.0)
        {
            continue;
        }
        leaf.inequalities.extend(bs.linking.iter().cloned());
        let r = solve_qp(&leaf, tol).unwrap();
        if r.status == SolveStatus::Optimal && best.is_none_or(|b| r.objective < b) {
            best = Some(r.objective);
        }
    }
    best
}

/// Strictly convex `n`-variable program with a box and a few two-sided rows.
pub fn random_small_qp(rng: &mut impl Rng, n: usize, rows: usize) -> QuadraticProgram {
    let mut p = QuadraticProgram::new(n);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    p.hessian = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    for j in 0..n {
        p.linear[j] = rng.random_range(-5.0..5.0);
        let lo = rng.random_range(-3.0..0.0);
        p.set_bounds(j, lo, lo + rng.random_range(1.0..4.0));
    }
    for _ in 0..rows {
        let terms: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-1.0..1.0))).collect();
        let mid: f64 = terms.iter().map(|&(j, a)| a * 0.5 * (p.lower[j] + p.upper[j])).sum();
        let width = rng.random_range(0.5..3.0);
        p.add_inequality(terms, mid - width, mid + rng.random_range(0.0..1.0));
    }
    p
}

/// Exact minimizer of a strictly convex program with only box and two-sided
/// rows, by enumerating active sets and checking KKT sign conditions.
pub fn active_set_oracle(p: &QuadraticProgram) -> Option<(Vec<f64>, f64)> {
    let n = p.num_vars();
    // Every side as a row `g·x ≤ b`, tagged with its source constraint.
    let mut rows: Vec<(DVector<f64>, f64, usize)> = Vec::new();
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        rows.push((-e.clone(), -p.lower[j], j));
        rows.push((e, p.upper[j], j));
    }
    for (k, c) in p.inequalities.iter().enumerate() {
        let mut g = DVector::zeros(n);
        for &(j, a) in &c.terms {
            g[j] += a;
        }
        if c.lower.is_finite() {
            rows.push((-g.clone(), -c.lower, n + k));
        }
        if c.upper.is_finite() {
            rows.push((g, c.upper, n + k));
        }
    }
    let m = rows.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut set = Vec::new();
    enumerate(&rows, m, n, 0, &mut set, &mut |active| {
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        for j in 0..n {
            rhs[j] = -p.linear[j];
        }
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = rows[i].0[j];
                kkt[(j, n + r)] = rows[i].0[j];
            }
            rhs[n + r] = rows[i].1;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { return };
        if sol.iter().any(|v| !v.is_finite()) {
            return;
        }
        let x = sol.rows(0, n).into_owned();
        if (0..k).any(|r| sol[n + r] < -1e-9) {
            return;
        }
        if rows.iter().any(|(g, b, _)| g.dot(&x) > b + 1e-9) {
            return;
        }
        let xv: Vec<f64> = x.iter().copied().collect();
        let obj = p.objective(&xv);
        if best.as_ref().is_none_or(|b| obj < b.1) {
            best = Some((xv, obj));
        }
    });
    best
}

fn enumerate(
    rows: &[(DVector<f64>, f64, usize)],
    m: usize,
    n: usize,
    from: usize,
    set: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    visit(set);
    if set.len() == n {
        return;
    }
    for i in from..m {
        if set.iter().any(|&s| rows[s].2 == rows[i].2) {
            continue;
        }
        set.push(i);
        enumerate(rows, m, n, i + 1, set, visit);
        set.pop();
    }
}
