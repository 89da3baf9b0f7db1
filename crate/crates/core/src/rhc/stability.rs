//! Ultimate-bound constants for the event-triggered receding-horizon loop and
//! a numerical check of the value-function decrease they rely on.

use crate::error::{Error, Result};
use crate::exact::{solve_exact, ExactOptions};
use crate::lqr;
use crate::model::{inf_norm, max_eigenvalue, min_eigenvalue, Matrix, ProblemInstance, Vector};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StabilityOptions {
    /// Overrides the default `kappa = a3` in the bound.
    pub kappa: Option<f64>,
    /// Use `P` instead of `Q` as the terminal weight of `S_delta`.
    pub terminal_p: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConstants {
    /// Stabilizing gain with `u = K x` (infinite-horizon LQR).
    pub k_gain: Matrix,
    pub a2: f64,
    pub a3: f64,
    pub gamma: f64,
    pub eta: f64,
    pub kappa: f64,
    /// Radius of the ultimate bound `{x : |x|_inf <= mu}`.
    pub mu: f64,
    /// Every schedule (`true` = feedback applied) with its cost matrix.
    pub s_table: Vec<(Vec<bool>, Matrix)>,
}

impl StabilityConstants {
    /// `sqrt(kappa * eta) / a2`.
    pub fn mu_for(&self, kappa: f64) -> f64 {
        (kappa * self.eta).sqrt() / self.a2
    }
}

/// Cost matrix of a schedule: `x0' S x0` is the cost of applying `u = K x`
/// at the steps where `schedule` is set and `u = 0` elsewhere.
pub(crate) fn schedule_matrix(inst: &ProblemInstance, k: &Matrix, schedule: &[bool], terminal: &Matrix) -> Matrix {
    let n = inst.state_dim();
    let closed = inst.a() + inst.b() * k;
    let q_closed = inst.q() + k.transpose() * inst.r() * k;
    let mut phi = Matrix::identity(n, n);
    let mut s = Matrix::zeros(n, n);
    for &on in schedule {
        let (a, q) = if on { (&closed, &q_closed) } else { (inst.a(), inst.q()) };
        s += phi.transpose() * q * &phi;
        phi = a * phi;
    }
    s += phi.transpose() * terminal * &phi;
    (&s + s.transpose()) * 0.5
}

pub fn compute_stability_constants(inst: &ProblemInstance, opts: &StabilityOptions) -> Result<StabilityConstants> {
    let (a, q) = (inst.a(), inst.q());
    let n = inst.state_dim();
    let horizon = inst.horizon();
    if horizon >= 24 {
        return Err(Error::InvalidParameter(format!("2^{horizon} schedules are too many to enumerate")));
    }
    let a2 = min_eigenvalue(q);
    if a2 <= 0.0 {
        return Err(Error::NotPositiveDefinite { what: "Q", min_eig: a2 });
    }
    let (_, k) = lqr::infinite_horizon(a, inst.b(), q, inst.r())?;
    let terminal = if opts.terminal_p { inst.p() } else { q };

    let s_table: Vec<(Vec<bool>, Matrix)> = (0..1u32 << horizon)
        .map(|bits| {
            let schedule: Vec<bool> = (0..horizon).map(|i| bits >> i & 1 == 1).collect();
            let s = schedule_matrix(inst, &k, &schedule, terminal);
            (schedule, s)
        })
        .collect();
    let a3 = s_table.iter().map(|(_, s)| max_eigenvalue(s)).fold(f64::NEG_INFINITY, f64::max);
    let eta = max_eigenvalue(&(a.transpose() * inst.p() * a + q)) * n as f64 * inst.eps().powi(2);
    let kappa = opts.kappa.unwrap_or(a3);
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let mut constants = StabilityConstants { k_gain: k, a2, a3, gamma: 1.0 - a2 / a3, eta, kappa, mu: 0.0, s_table };
    constants.mu = constants.mu_for(kappa);
    Ok(constants)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub samples: usize,
    /// States where the decrease inequality held.
    pub holding: usize,
    /// States where the optimal value was unavailable at `x` or `x+`.
    pub undefined: usize,
    /// `(-lambda_min(Q) |x|^2 + eta) - (V(x+) - V(x))` per evaluated state.
    pub margins: Vec<f64>,
    /// Indices (into the samples) of violations.
    pub violations: Vec<usize>,
}

impl LyapunovReport {
    pub fn fraction_holding(&self) -> f64 {
        let evaluated = self.samples - self.undefined;
        if evaluated == 0 {
            return 0.0;
        }
        self.holding as f64 / evaluated as f64
    }
}

/// Checks `V(x+) - V(x) <= -lambda_min(Q) |x|_2^2 + eta` at each sample, with
/// `V` the exact optimal cost and `x+` one closed-loop step from `x`.
pub fn lyapunov_decrease_check(
    inst: &ProblemInstance,
    samples: &[Vector],
    constants: &StabilityConstants,
    opts: &ExactOptions,
) -> Result<LyapunovReport> {
    let lambda = min_eigenvalue(inst.q());
    let mut report =
        LyapunovReport { samples: samples.len(), holding: 0, undefined: 0, margins: Vec::new(), violations: Vec::new() };
    for (i, x) in samples.iter().enumerate() {
        let here = solve_exact(&inst.with_x0(x.clone())?, opts)?.best;
        if !here.status.has_solution() {
            report.undefined += 1;
            continue;
        }
        let u = if inf_norm(x) >= inst.eps() {
            here.first_input().expect("solution has a trajectory").clone()
        } else {
            Vector::zeros(inst.input_dim())
        };
        let next = inst.a() * x + inst.b() * u;
        let there = solve_exact(&inst.with_x0(next)?, opts)?.best;
        if !there.status.has_solution() {
            report.undefined += 1;
            continue;
        }
        let margin = (-lambda * x.norm_squared() + constants.eta) - (there.cost - here.cost);
        report.margins.push(margin);
        if margin >= -opts.tolerances.cost * here.cost.max(1.0) {
            report.holding += 1;
        } else {
            report.violations.push(i);
        }
    }
    Ok(report)
}
