//! Operator-splitting iteration with Ruiz equilibration and active-set polish.

use nalgebra::{DMatrix, DVector};

use super::{kkt_residual, Duals, QpSettings, QuadraticProgram, SolveReport, SolveStatus};

const RUIZ_PASSES: usize = 15;
const INF_CERT_TOL: f64 = 1e-7;
const CHECK_EVERY: usize = 5;
const ADAPT_EVERY: usize = 100;

/// Constraint data stacked as one matrix: equalities, inequalities, then box rows.
struct Stacked {
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
}

fn stack(p: &QuadraticProgram) -> Stacked {
    let n = p.num_vars();
    let m = p.equalities.len() + p.inequalities.len() + n;
    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for (i, c) in p.equalities.iter().chain(&p.inequalities).enumerate() {
        for &(j, v) in &c.terms {
            a[(i, j)] += v;
        }
        l[i] = c.lower;
        u[i] = c.upper;
    }
    let off = m - n;
    for j in 0..n {
        a[(off + j, j)] = 1.0;
        l[off + j] = p.lower[j];
        u[off + j] = p.upper[j];
    }
    Stacked { a, l, u }
}

/// Rows that cannot be satisfied by any x, detected before iterating.
fn trivially_infeasible(s: &Stacked) -> bool {
    (0..s.a.nrows()).any(|i| {
        if s.l[i] > s.u[i] {
            return true;
        }
        let empty = s.a.row(i).iter().all(|v| *v == 0.0);
        empty && (s.l[i] > 0.0 || s.u[i] < 0.0)
    })
}

struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
}

fn clamp_norm(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

fn equilibrate(pm: &mut DMatrix<f64>, q: &mut DVector<f64>, a: &mut DMatrix<f64>) -> Scaling {
    let n = pm.nrows();
    let m = a.nrows();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    for _ in 0..RUIZ_PASSES {
        let dd = DVector::from_iterator(
            n,
            (0..n).map(|j| 1.0 / clamp_norm(pm.column(j).amax().max(a.column(j).amax())).sqrt()),
        );
        let de = DVector::from_iterator(m, (0..m).map(|i| 1.0 / clamp_norm(a.row(i).amax()).sqrt()));
        for j in 0..n {
            for i in 0..n {
                pm[(i, j)] *= dd[i] * dd[j];
            }
            for i in 0..m {
                a[(i, j)] *= de[i] * dd[j];
            }
            q[j] *= dd[j];
        }
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);
    }
    let mean_col = if n > 0 {
        (0..n).map(|j| pm.column(j).amax()).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let cost = 1.0 / clamp_norm(mean_col.max(q.amax()));
    *pm *= cost;
    *q *= cost;
    Scaling { d, e, cost }
}

struct Factor {
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl Factor {
    fn new(k: DMatrix<f64>) -> Self {
        match k.clone().cholesky() {
            Some(c) => Self {
                chol: Some(c),
                lu: None,
            },
            None => Self {
                chol: None,
                lu: Some(k.lu()),
            },
        }
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match (&self.chol, &self.lu) {
            (Some(c), _) => c.solve(b),
            (None, Some(lu)) => lu.solve(b).unwrap_or_else(|| b.clone()),
            _ => unreachable!(),
        }
    }
}

fn rho_vector(base: f64, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        l.len(),
        l.iter().zip(u.iter()).map(|(&lo, &hi)| {
            if lo == hi {
                base * 1e3
            } else if lo.is_infinite() && hi.is_infinite() {
                1e-6
            } else {
                base
            }
        }),
    )
}

fn assemble(pm: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Factor {
    let mut at_r = a.transpose();
    for (i, mut col) in at_r.column_iter_mut().enumerate() {
        col *= rho[i];
    }
    let mut k = pm + at_r * a;
    for j in 0..k.nrows() {
        k[(j, j)] += sigma;
    }
    Factor::new(k)
}

/// Unscaled iterate packaged as a report candidate.
fn candidate(p: &QuadraticProgram, sc: &Scaling, xs: &DVector<f64>, ys: &DVector<f64>) -> (Vec<f64>, Duals, f64) {
    let n = p.num_vars();
    let x: Vec<f64> = (0..n).map(|j| sc.d[j] * xs[j]).collect();
    let y: Vec<f64> = (0..ys.len()).map(|i| sc.e[i] * ys[i] / sc.cost).collect();
    let me = p.equalities.len();
    let mi = p.inequalities.len();
    let duals = Duals {
        equalities: y[..me].to_vec(),
        inequalities: y[me..me + mi].to_vec(),
        bounds: y[me + mi..].to_vec(),
    };
    let res = kkt_residual(p, &x, &duals).unwrap_or(f64::INFINITY);
    (x, duals, res)
}

/// Solves the equality-constrained problem on the guessed active set.
fn polish(
    pm: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = pm.nrows();
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..a.nrows() {
        if l[i] == u[i] || z[i] - l[i] < -y[i] {
            active.push((i, l[i]));
        } else if u[i] - z[i] < y[i] {
            active.push((i, u[i]));
        }
    }
    let k = active.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(pm);
    for (r, &(i, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = a[(i, j)];
            kkt[(j, n + r)] = a[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -q[j];
    }
    for (r, &(_, b)) in active.iter().enumerate() {
        rhs[n + r] = b;
    }
    let delta = 1e-9;
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += delta;
    }
    for r in 0..k {
        reg[(n + r, n + r)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..8 {
        let resid = &rhs - &kkt * &sol;
        if resid.amax() < 1e-14 {
            break;
        }
        sol += lu.solve(&resid)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut yfull = DVector::zeros(a.nrows());
    for (r, &(i, _)) in active.iter().enumerate() {
        yfull[i] = sol[n + r];
    }
    Some((x, yfull))
}

pub(super) fn solve(p: &QuadraticProgram, tol: f64, settings: &QpSettings) -> SolveReport {
    let n = p.num_vars();
    let stacked = stack(p);
    if trivially_infeasible(&stacked) {
        return SolveReport::infeasible(n);
    }
    let Stacked { mut a, l, u } = stacked;
    let m = a.nrows();
    let mut pm = p.hessian.clone();
    let mut q = p.linear.clone();
    let sc = equilibrate(&mut pm, &mut q, &mut a);
    let ls = l.component_mul(&sc.e);
    let us = u.component_mul(&sc.e);
    let e_inv = sc.e.map(|v| 1.0 / v);
    let d_inv = sc.d.map(|v| 1.0 / v);

    let mut rho_base = settings.rho;
    let mut rho = rho_vector(rho_base, &ls, &us);
    let mut factor = assemble(&pm, &a, &rho, settings.sigma);
    let alpha = settings.relaxation;
    let sigma = settings.sigma;

    let mut x = DVector::zeros(n);
    let mut z = DVector::from_iterator(m, (0..m).map(|i| 0.0f64.clamp(ls[i].min(us[i]), us[i])));
    let mut y = DVector::zeros(m);

    let mut best: Option<(Vec<f64>, Duals, f64)> = None;
    let mut polish_level = 1e-3;
    let mut iterations = 0;

    let at = a.transpose();
    for k in 1..=settings.max_iter {
        iterations = k;
        let rhs = &x * sigma - &q + &at * (rho.component_mul(&z) - &y);
        let xt = factor.solve(&rhs);
        let zt = &a * &xt;
        let x_new = &xt * alpha + &x * (1.0 - alpha);
        let z_relax = &zt * alpha + &z * (1.0 - alpha);
        let mut z_new = &z_relax + y.component_div(&rho);
        for i in 0..m {
            z_new[i] = z_new[i].max(ls[i]).min(us[i]);
        }
        let y_new = &y + rho.component_mul(&(&z_relax - &z_new));
        let dy = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        if k % CHECK_EVERY != 0 && k != settings.max_iter {
            continue;
        }

        if primal_infeasibility_certificate(&at, &dy, &ls, &us, &sc.e, &d_inv) {
            return SolveReport {
                iterations,
                ..SolveReport::infeasible(n)
            };
        }

        let ax = &a * &x;
        let px = &pm * &x;
        let aty = &at * &y;
        let prim = (&ax - &z).component_mul(&e_inv).amax();
        let prim_scale = ax.component_mul(&e_inv).amax().max(z.component_mul(&e_inv).amax());
        let dual = (&px + &q + &aty).component_mul(&d_inv).amax() / sc.cost;
        let dual_scale = px
            .component_mul(&d_inv)
            .amax()
            .max(aty.component_mul(&d_inv).amax())
            .max(q.component_mul(&d_inv).amax())
            / sc.cost;
        let rel = (prim / (1.0 + prim_scale)).max(dual / (1.0 + dual_scale));

        if settings.polish && rel < polish_level {
            polish_level = rel * 0.1;
            if let Some((xp, yp)) = polish(&pm, &q, &a, &ls, &us, &z, &y) {
                let cand = candidate(p, &sc, &xp, &yp);
                if cand.2 <= tol {
                    return finish(p, cand, SolveStatus::Optimal, iterations);
                }
                if best.as_ref().is_none_or(|b| cand.2 < b.2) {
                    best = Some(cand);
                }
            }
        }

        if prim <= tol && dual <= tol {
            let cand = candidate(p, &sc, &x, &y);
            if cand.2 <= tol {
                return finish(p, cand, SolveStatus::Optimal, iterations);
            }
            if best.as_ref().is_none_or(|b| cand.2 < b.2) {
                best = Some(cand);
            }
        }

        if k % ADAPT_EVERY == 0 {
            let ratio = ((prim / (1e-12 + prim_scale)) / (dual / (1e-12 + dual_scale)).max(1e-30))
                .sqrt()
                .clamp(1e-3, 1e3);
            if !(0.2..=5.0).contains(&ratio) {
                rho_base = (rho_base * ratio).clamp(1e-6, 1e6);
                rho = rho_vector(rho_base, &ls, &us);
                factor = assemble(&pm, &a, &rho, settings.sigma);
            }
        }
    }

    let last = candidate(p, &sc, &x, &y);
    let pick = match best {
        Some(b) if b.2 < last.2 => b,
        _ => last,
    };
    let status = if pick.2 <= tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::IterationLimit
    };
    finish(p, pick, status, iterations)
}

fn finish(
    p: &QuadraticProgram,
    (x, duals, res): (Vec<f64>, Duals, f64),
    status: SolveStatus,
    iterations: usize,
) -> SolveReport {
    SolveReport {
        status,
        objective: p.objective(&x),
        x,
        duals,
        kkt_residual: res,
        iterations,
    }
}

fn primal_infeasibility_certificate(
    at: &DMatrix<f64>,
    dy: &DVector<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    e: &DVector<f64>,
    d_inv: &DVector<f64>,
) -> bool {
    let norm = dy.component_mul(e).amax();
    if norm < 1e-9 {
        return false;
    }
    let eps = INF_CERT_TOL * norm;
    let mut support = 0.0;
    for i in 0..dy.len() {
        let v = dy[i];
        if v > 0.0 {
            if u[i].is_infinite() {
                if v * e[i] > eps {
                    return false;
                }
            } else {
                support += u[i] * v;
            }
        } else if v < 0.0 {
            if l[i].is_infinite() {
                if -v * e[i] > eps {
                    return false;
                }
            } else {
                support += l[i] * v;
            }
        }
    }
    let aty = (at * dy).component_mul(d_inv).amax();
    aty <= eps && support < -eps
}
