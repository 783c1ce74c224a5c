//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀQx + cᵀx
//! subject to  a_i x  = b_i            (equalities)
//!             l_j ≤ g_j x ≤ u_j       (two-sided inequalities)
//!             lo ≤ x ≤ hi             (variable box)
//! ```
//!
//! [`solve_qp`] runs an operator-splitting iteration followed by an
//! active-set polish step; [`solve_with_binaries`] wraps it in a depth-first
//! branch-and-bound over a small set of 0/1 variables.
//!
//! Multipliers follow the convention `Qx + c + Σ y_i a_iᵀ + Σ z_j g_jᵀ + w = 0`,
//! so a positive multiplier marks an active upper side and a negative one an
//! active lower side.

mod admm;
mod branch;

use nalgebra::{DMatrix, DVector};

use crate::error::QpError;

pub use branch::{solve_with_binaries, solve_with_binaries_opts, BinarySpec, BranchOptions, BranchReport};

/// A sparse linear row `lower ≤ Σ coef·x[idx] ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

impl Constraint {
    pub fn new(terms: Vec<(usize, f64)>, lower: f64, upper: f64) -> Self {
        Self { terms, lower, upper }
    }

    pub fn equal(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self::new(terms, rhs, rhs)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` falls outside the row's interval.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.eval(x);
        (v - self.upper).max(self.lower - v).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadraticProgram {
    /// Largest finite magnitude among the objective and constraint data, at
    /// least 1.
    pub fn data_scale(&self) -> f64 {
        let finite = |v: f64| if v.is_finite() { v.abs() } else { 0.0 };
        let mut scale: f64 = 1.0;
        scale = scale.max(self.hessian.amax()).max(self.linear.amax());
        for j in 0..self.num_vars() {
            scale = scale.max(finite(self.lower[j])).max(finite(self.upper[j]));
        }
        for c in self.equalities.iter().chain(&self.inequalities) {
            scale = scale.max(finite(c.lower)).max(finite(c.upper));
            for &(_, a) in &c.terms {
                scale = scale.max(a.abs());
            }
        }
        scale
    }

    /// An unconstrained zero objective over `n` free variables.
    pub fn new(n: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn add_equality(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(Constraint::equal(terms, rhs));
    }

    pub fn add_inequality(&mut self, terms: Vec<(usize, f64)>, lower: f64, upper: f64) {
        self.inequalities.push(Constraint::new(terms, lower, upper));
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    /// Adds `½·weight·(Σ coef·x)²` to the objective.
    pub fn add_squared_term(&mut self, terms: &[(usize, f64)], weight: f64) {
        for &(i, a) in terms {
            for &(j, b) in terms {
                self.hessian[(i, j)] += weight * a * b;
            }
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.hessian * &xv)) + self.linear.dot(&xv)
    }

    /// Largest constraint or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.equalities.iter().chain(&self.inequalities).map(|c| c.violation(x));
        let bounds = x
            .iter()
            .enumerate()
            .map(|(j, &v)| (v - self.upper[j]).max(self.lower[j] - v).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub fn check_dimensions(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "hessian is {}x{}, expected {n}x{n}",
                self.hessian.nrows(),
                self.hessian.ncols()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::DimensionMismatch("bound vectors".into()));
        }
        for c in self.equalities.iter().chain(&self.inequalities) {
            if let Some(&(j, _)) = c.terms.iter().find(|(j, _)| *j >= n) {
                return Err(QpError::DimensionMismatch(format!(
                    "constraint references variable {j} of {n}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Multipliers for every constraint family of a [`QuadraticProgram`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Duals {
    pub equalities: Vec<f64>,
    pub inequalities: Vec<f64>,
    pub bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub duals: Duals,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub(crate) fn infeasible(n: usize) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            x: vec![0.0; n],
            duals: Duals::default(),
            objective: f64::INFINITY,
            kkt_residual: f64::INFINITY,
            iterations: 0,
        }
    }
}

/// Tuning knobs for the splitting iteration.
#[derive(Debug, Clone)]
pub struct QpSettings {
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 40_000,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            polish: true,
        }
    }
}

/// Solves `p` to KKT residual `tol` with default settings.
pub fn solve_qp(p: &QuadraticProgram, tol: f64) -> Result<SolveReport, QpError> {
    solve_qp_with(p, tol, &QpSettings::default())
}

pub fn solve_qp_with(p: &QuadraticProgram, tol: f64, settings: &QpSettings) -> Result<SolveReport, QpError> {
    p.check_dimensions()?;
    Ok(admm::solve(p, tol, settings))
}

/// Worst violation among stationarity, primal feasibility, dual feasibility
/// and complementarity at `(x, duals)`.
pub fn kkt_residual(p: &QuadraticProgram, x: &[f64], duals: &Duals) -> Result<f64, QpError> {
    p.check_dimensions()?;
    let n = p.num_vars();
    if x.len() != n
        || duals.equalities.len() != p.equalities.len()
        || duals.inequalities.len() != p.inequalities.len()
        || duals.bounds.len() != n
    {
        return Err(QpError::DimensionMismatch(format!(
            "primal {} / duals ({}, {}, {}) against program ({n}, {}, {}, {n})",
            x.len(),
            duals.equalities.len(),
            duals.inequalities.len(),
            duals.bounds.len(),
            p.equalities.len(),
            p.inequalities.len(),
        )));
    }

    let xv = DVector::from_column_slice(x);
    let mut grad = &p.hessian * &xv + &p.linear;
    for (c, &y) in p.equalities.iter().zip(&duals.equalities) {
        for &(j, a) in &c.terms {
            grad[j] += a * y;
        }
    }
    for (c, &z) in p.inequalities.iter().zip(&duals.inequalities) {
        for &(j, a) in &c.terms {
            grad[j] += a * z;
        }
    }
    for (j, &w) in duals.bounds.iter().enumerate() {
        grad[j] += w;
    }
    let mut worst = grad.amax();

    for c in &p.equalities {
        worst = worst.max((c.eval(x) - c.lower).abs());
    }
    let two_sided = p
        .inequalities
        .iter()
        .zip(&duals.inequalities)
        .map(|(c, &z)| (c.eval(x), c.lower, c.upper, z));
    let boxes = x
        .iter()
        .enumerate()
        .map(|(j, &v)| (v, p.lower[j], p.upper[j], duals.bounds[j]));
    for (v, lo, hi, z) in two_sided.chain(boxes) {
        worst = worst.max((v - hi).max(lo - v).max(0.0));
        worst = worst.max(side_residual(v, lo, hi, z));
    }
    Ok(worst)
}

/// Dual feasibility and complementarity for one two-sided row.
fn side_residual(v: f64, lo: f64, hi: f64, z: f64) -> f64 {
    if lo == hi {
        return 0.0;
    }
    if z > 0.0 {
        if hi.is_finite() {
            (z * (hi - v)).abs()
        } else {
            z
        }
    } else if z < 0.0 {
        if lo.is_finite() {
            (z * (v - lo)).abs()
        } else {
            -z
        }
    } else {
        0.0
    }
}
