//! Unconstrained discrete-time LQR via the Riccati recursion.

use crate::error::{Error, Result};
use crate::model::{Matrix, ProblemInstance, Trajectory, Vector};

/// Feedback gains `u(t) = K_t x(t)` and the cost-to-go matrix at `t = 0`.
#[derive(Debug, Clone)]
pub struct FiniteHorizonLqr {
    pub gains: Vec<Matrix>,
    pub cost_to_go: Matrix,
}

fn riccati_step(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, next: &Matrix) -> Result<(Matrix, Matrix)> {
    let bt_p = b.transpose() * next;
    let lhs = r + &bt_p * b;
    let rhs = &bt_p * a;
    let gain = -lhs
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { what: "R + B'PB", min_eig: f64::NAN })?
        .solve(&rhs);
    let at_p = a.transpose() * next;
    let mut cost = q + &at_p * a + &at_p * b * &gain;
    cost = (&cost + cost.transpose()) * 0.5;
    Ok((gain, cost))
}

/// Backward recursion with terminal weight `P` over `N` steps, ignoring the
/// trigger constraint.
pub fn finite_horizon(inst: &ProblemInstance) -> Result<FiniteHorizonLqr> {
    let mut cost = inst.p().clone();
    let mut gains = Vec::with_capacity(inst.horizon());
    for _ in 0..inst.horizon() {
        let (k, next) = riccati_step(inst.a(), inst.b(), inst.q(), inst.r(), &cost)?;
        gains.push(k);
        cost = next;
    }
    gains.reverse();
    Ok(FiniteHorizonLqr { gains, cost_to_go: cost })
}

impl FiniteHorizonLqr {
    /// Optimal unconstrained cost `x0' P_0 x0`.
    pub fn cost(&self, x0: &Vector) -> f64 {
        (&self.cost_to_go * x0).dot(x0)
    }

    pub fn trajectory(&self, inst: &ProblemInstance) -> Trajectory {
        let mut states = vec![inst.x0().clone()];
        let mut inputs = Vec::with_capacity(self.gains.len());
        for k in &self.gains {
            let x = states.last().expect("non-empty");
            let u = k * x;
            states.push(inst.a() * x + inst.b() * &u);
            inputs.push(u);
        }
        Trajectory { states, inputs }
    }
}

/// Stabilizing solution of the discrete algebraic Riccati equation and the
/// gain `K` with `u = K x`.
pub fn infinite_horizon(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<(Matrix, Matrix)> {
    const MAX_ITERS: usize = 100_000;
    let mut cost = q.clone();
    for _ in 0..MAX_ITERS {
        let (gain, next) = riccati_step(a, b, q, r, &cost)?;
        let change = (&next - &cost).amax();
        cost = next;
        if change <= 1e-13 * cost.amax().max(1.0) {
            return Ok((cost, gain));
        }
        if !change.is_finite() {
            break;
        }
    }
    Err(Error::RiccatiDivergence { iterations: MAX_ITERS })
}
