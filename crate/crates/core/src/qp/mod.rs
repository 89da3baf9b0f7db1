//! Dense convex QP solver for the per-sequence subproblems.
//!
//! `minimize 1/2 z'Hz + g'z  s.t.  A_eq z = b_eq,  A_in z <= b_in`
//!
//! The engine is a dual active-set method (see [`active_set`]). Infeasibility
//! is certified separately by a phase-1 problem that minimizes the largest
//! inequality violation, so a sequence is only reported infeasible when that
//! minimum exceeds the feasibility tolerance.

mod active_set;
pub mod kkt;
pub mod sequence;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, Vector};
use crate::tolerance::Tolerances;
use active_set::{Constraints, Outcome};

pub use kkt::{kkt_factorize, kkt_solve, KktCache};
pub use sequence::{build_condensed_qp, build_sequence_qp, CondensedModel, SequenceQp};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Matrix,
    pub g: Vector,
    pub a_eq: Matrix,
    pub b_eq: Vector,
    pub a_in: Matrix,
    pub b_in: Vector,
}

impl QpProblem {
    /// Problem without constraints.
    pub fn unconstrained(h: Matrix, g: Vector) -> Self {
        let d = g.len();
        Self { h, g, a_eq: Matrix::zeros(0, d), b_eq: Vector::zeros(0), a_in: Matrix::zeros(0, d), b_in: Vector::zeros(0) }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.g.len();
        let shape = |what: &str, rows: usize, cols: usize, er: usize, ec: usize| {
            if rows != er || cols != ec {
                Err(Error::Dimension(format!("{what} is {rows}x{cols}, expected {er}x{ec}")))
            } else {
                Ok(())
            }
        };
        shape("H", self.h.nrows(), self.h.ncols(), d, d)?;
        shape("A_eq", self.a_eq.nrows(), self.a_eq.ncols(), self.b_eq.len(), d)?;
        shape("A_in", self.a_in.nrows(), self.a_in.ncols(), self.b_in.len(), d)?;
        Ok(())
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * (&self.h * z).dot(z) + self.g.dot(z)
    }

    /// `max(|A_eq z - b_eq|_inf, max_i (A_in z - b_in)_i, 0)`.
    pub fn max_violation(&self, z: &Vector) -> f64 {
        let eq = (&self.a_eq * z - &self.b_eq).amax();
        let ineq = (&self.a_in * z - &self.b_in).iter().fold(0.0_f64, |m, v| m.max(*v));
        eq.max(ineq)
    }

    /// Stationarity, primal/dual feasibility and complementarity residual for
    /// multipliers with `H z + g + A_eq' y + A_in' mu = 0`, `mu >= 0`.
    pub fn kkt_residual(&self, z: &Vector, y: &Vector, mu: &Vector) -> f64 {
        let stationarity = (&self.h * z + &self.g + self.a_eq.transpose() * y + self.a_in.transpose() * mu).amax();
        let slack = &self.a_in * z - &self.b_in;
        let complementarity = mu.iter().zip(slack.iter()).fold(0.0_f64, |m, (a, s)| m.max((a * s).abs()));
        let dual = mu.iter().fold(0.0_f64, |m, a| m.max(-a));
        stationarity.max(self.max_violation(z)).max(complementarity).max(dual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub z: Vector,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// Inequality rows in the final working set, ascending.
    pub active_set: Vec<usize>,
    /// Equality multipliers `y` and inequality multipliers `mu` with
    /// `H z + g + A_eq' y + A_in' mu = 0`.
    pub eq_multipliers: Vector,
    pub ineq_multipliers: Vector,
    /// Phase-1 certificate when infeasible, else the violation of `z`.
    pub max_violation: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tolerances: Tolerances,
    /// Pivot cap is `factor * (d + i)`.
    pub iter_cap_factor: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tolerances: Tolerances::default(), iter_cap_factor: 50 }
    }
}

impl QpSettings {
    pub fn with_tolerances(tolerances: Tolerances) -> Self {
        Self { tolerances, ..Self::default() }
    }
}

pub fn solve_qp(p: &QpProblem, warm_start: Option<&Vector>) -> Result<QpResult> {
    solve_qp_with(p, warm_start, &QpSettings::default())
}

/// Column-major normals in the solver's `n'x >= b` convention.
struct Prepared {
    eq_normals: Vec<f64>,
    eq_rhs: Vec<f64>,
    in_normals: Vec<f64>,
    in_rhs: Vec<f64>,
}

impl Prepared {
    fn new(p: &QpProblem, relax: f64) -> Self {
        let d = p.dim();
        let mut eq_normals = Vec::with_capacity(d * p.b_eq.len());
        for i in 0..p.a_eq.nrows() {
            eq_normals.extend(p.a_eq.row(i).iter());
        }
        let mut in_normals = Vec::with_capacity(d * p.b_in.len());
        for i in 0..p.a_in.nrows() {
            in_normals.extend(p.a_in.row(i).iter().map(|v| -v));
        }
        Self {
            eq_normals,
            eq_rhs: p.b_eq.iter().copied().collect(),
            in_normals,
            in_rhs: p.b_in.iter().map(|b| -(b + relax)).collect(),
        }
    }
    fn eq(&self) -> Constraints<'_> {
        Constraints { normals: &self.eq_normals, rhs: &self.eq_rhs }
    }
    fn ineq(&self) -> Constraints<'_> {
        Constraints { normals: &self.in_normals, rhs: &self.in_rhs }
    }
}

/// Cholesky of `H`, or of `H + c A_eq'A_eq` when `H` is only positive
/// definite on the equality null space. Returns the (possibly shifted) linear
/// term alongside.
fn factor_hessian(p: &QpProblem) -> Option<(Cholesky<f64, nalgebra::Dyn>, Vector)> {
    if let Some(chol) = p.h.clone().cholesky() {
        return Some((chol, p.g.clone()));
    }
    if p.a_eq.nrows() == 0 {
        return None;
    }
    let c = p.h.amax().max(1.0);
    let at = p.a_eq.transpose();
    let h = &p.h + &at * &p.a_eq * c;
    let g = &p.g - &at * &p.b_eq * c;
    let chol = h.cholesky()?;
    // reject factorizations that only exist through rounding
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let max_pivot = chol.l_dirty().diagonal().amax();
    (min_pivot > 1e-7 * max_pivot).then_some((chol, g))
}

pub fn solve_qp_with(p: &QpProblem, warm_start: Option<&Vector>, settings: &QpSettings) -> Result<QpResult> {
    p.validate()?;
    let d = p.dim();
    if let Some(ws) = warm_start {
        if ws.len() != d {
            return Err(Error::Dimension(format!("warm start has length {}, expected {d}", ws.len())));
        }
    }
    let tol = &settings.tolerances;
    let cap = settings.iter_cap_factor * (d + p.b_in.len()).max(1);

    let Some((chol, g)) = factor_hessian(p) else {
        return Ok(failure(p, QpStatus::Unbounded, Vector::zeros(d), f64::NAN, 0));
    };

    let hints: Vec<usize> = warm_start
        .map(|ws| {
            let slack = &p.a_in * ws - &p.b_in;
            (0..p.b_in.len())
                .filter(|&i| slack[i].abs() <= 1e-9 * (1.0 + p.b_in[i].abs()))
                .collect()
        })
        .unwrap_or_default();

    let prepared = Prepared::new(p, 0.0);
    let sol = active_set::solve(&chol, &g, &prepared.eq(), &prepared.ineq(), &hints, cap);
    match sol.outcome {
        Outcome::Optimal => Ok(finalize(p, sol)),
        Outcome::MaxIter => Ok(failure(p, QpStatus::MaxIter, Vector::from_vec(sol.x), f64::NAN, sol.pivots)),
        Outcome::InconsistentEqualities => {
            let certificate = phase_one(p, &prepared, cap);
            Ok(failure(p, QpStatus::Infeasible, Vector::from_vec(sol.x), certificate.max(tol.feasibility * 2.0), sol.pivots))
        }
        Outcome::Infeasible => {
            let certificate = phase_one(p, &prepared, cap);
            if certificate > tol.feasibility {
                return Ok(failure(p, QpStatus::Infeasible, Vector::from_vec(sol.x), certificate, sol.pivots));
            }
            // marginal: accept the tolerance-relaxed problem
            let relaxed = Prepared::new(p, tol.feasibility);
            let again = active_set::solve(&chol, &g, &relaxed.eq(), &relaxed.ineq(), &[], cap);
            if again.outcome == Outcome::Optimal {
                let mut res = finalize(p, again);
                res.pivots += sol.pivots;
                Ok(res)
            } else {
                Ok(failure(p, QpStatus::Infeasible, Vector::from_vec(sol.x), certificate, sol.pivots))
            }
        }
    }
}

fn failure(p: &QpProblem, status: QpStatus, z: Vector, max_violation: f64, pivots: usize) -> QpResult {
    QpResult {
        objective: f64::INFINITY,
        status,
        kkt_residual: f64::INFINITY,
        active_set: Vec::new(),
        eq_multipliers: Vector::zeros(p.b_eq.len()),
        ineq_multipliers: Vector::zeros(p.b_in.len()),
        max_violation,
        pivots,
        z,
    }
}

fn finalize(p: &QpProblem, sol: active_set::DualSolution) -> QpResult {
    let n_eq = p.b_eq.len();
    let z = Vector::from_vec(sol.x);
    let mut y = Vector::zeros(n_eq);
    let mut mu = Vector::zeros(p.b_in.len());
    let mut active_set = Vec::new();
    for (&id, &u) in sol.active.iter().zip(&sol.multipliers) {
        if id < n_eq {
            y[id] = -u;
        } else {
            mu[id - n_eq] = u;
            active_set.push(id - n_eq);
        }
    }
    active_set.sort_unstable();
    QpResult {
        objective: p.objective(&z),
        status: QpStatus::Optimal,
        kkt_residual: p.kkt_residual(&z, &y, &mu),
        active_set,
        max_violation: p.max_violation(&z),
        eq_multipliers: y,
        ineq_multipliers: mu,
        pivots: sol.pivots,
        z,
    }
}

/// Minimum over `z` with `A_eq z = b_eq` of `max(0, max_i (A_in z - b_in)_i)`,
/// or the equality residual when the equalities are inconsistent.
///
/// The LP is solved exactly by proximal-point iterations, each a strictly
/// convex QP in `(z, s)`; for a linear objective the iteration terminates
/// after finitely many steps.
fn phase_one(p: &QpProblem, prepared: &Prepared, cap: usize) -> f64 {
    const STEP: f64 = 100.0;
    const MAX_ROUNDS: usize = 200;
    let d = p.dim();
    let dim = d + 1;
    let n_in = p.b_in.len();

    let mut eq_normals = Vec::with_capacity(dim * p.b_eq.len());
    for i in 0..p.b_eq.len() {
        eq_normals.extend_from_slice(&prepared.eq_normals[i * d..(i + 1) * d]);
        eq_normals.push(0.0);
    }
    // s - a_i z >= -b_i, then s >= 0
    let mut in_normals = Vec::with_capacity(dim * (n_in + 1));
    for i in 0..n_in {
        in_normals.extend_from_slice(&prepared.in_normals[i * d..(i + 1) * d]);
        in_normals.push(1.0);
    }
    in_normals.extend(std::iter::repeat_n(0.0, d));
    in_normals.push(1.0);
    let mut in_rhs = prepared.in_rhs.clone();
    in_rhs.push(0.0);

    let eq = Constraints { normals: &eq_normals, rhs: &prepared.eq_rhs };
    let ineq = Constraints { normals: &in_normals, rhs: &in_rhs };
    let chol = (Matrix::identity(dim, dim) / STEP).cholesky().expect("scaled identity");

    let mut center = Vector::zeros(dim);
    let mut hints: Vec<usize> = Vec::new();
    let mut level = f64::INFINITY;
    for _ in 0..MAX_ROUNDS {
        let mut g = -&center / STEP;
        g[d] += 1.0;
        let sol = active_set::solve(&chol, &g, &eq, &ineq, &hints, cap);
        if sol.outcome == Outcome::InconsistentEqualities {
            let z = Vector::from_vec(sol.x[..d].to_vec());
            return (&p.a_eq * z - &p.b_eq).amax().max(f64::MIN_POSITIVE);
        }
        let next = Vector::from_vec(sol.x);
        hints = sol.active.iter().filter(|&&id| id >= p.b_eq.len()).map(|&id| id - p.b_eq.len()).collect();
        let moved = (&next - &center).amax();
        center = next;
        let z = center.rows(0, d).into_owned();
        level = level.min(p.max_violation(&z).max(0.0));
        if moved <= 1e-13 * (1.0 + center.amax()) || level == 0.0 {
            break;
        }
    }
    level
}
