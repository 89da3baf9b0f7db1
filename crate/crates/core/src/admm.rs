//! ADMM heuristic for the non-convex trigger constraint, followed by a
//! polishing QP.
//!
//! The stacked variable is `z = (x(0), ..., x(N), u(0), ..., u(N-1))`. The
//! quadratic step enforces the dynamics through `G z = h`, the projection step
//! zeroes `u(t)` whenever `x(t)` lies in the open box, and the duals of both
//! splittings are updated in scaled form. The best dynamics-feasible iterate
//! provides a switching sequence whose QP gives the returned trajectory.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::Evaluator;
use crate::model::{inf_norm, Label, Matrix, ProblemInstance, Solution, SolveStats, SolveStatus, SwitchSequence, Vector};
use crate::qp::{kkt_factorize, kkt_solve, KktCache};
use crate::tolerance::Tolerances;

/// Doublings of the iteration budget allowed in adaptive mode.
const MAX_DOUBLINGS: usize = 4;
/// Residual growth over [`DIVERGENCE_WINDOW`] iterations treated as divergence.
const DIVERGENCE_FACTOR: f64 = 1e3;
const DIVERGENCE_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmConfig {
    pub rho: f64,
    pub max_iter: usize,
    pub eps_tol: f64,
    /// Double the iteration budget while polishing fails. Without a
    /// dynamics-feasible iterate, the least-violating one is polished.
    pub adapt: bool,
    pub seed: u64,
    /// Standard deviation of the random starting point.
    pub sigma0: f64,
    pub restarts: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { rho: 4.8, max_iter: 300, eps_tol: 1e-4, adapt: false, seed: 0, sigma0: 1.0, restarts: 1 }
    }
}

impl AdmmConfig {
    /// Step sizes tuned for the third-order benchmark: 9.8, 5.8 and 6.9 for
    /// `eps` = 0.2, 0.4 and 0.6, and 4.8 otherwise.
    pub fn default_rho(eps: f64) -> f64 {
        const PROFILES: [(f64, f64); 3] = [(0.2, 9.8), (0.4, 5.8), (0.6, 6.9)];
        PROFILES.iter().find(|(e, _)| (e - eps).abs() < 1e-12).map_or(4.8, |(_, rho)| *rho)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.eps_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("eps_tol must be positive, got {}", self.eps_tol)));
        }
        if self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::InvalidParameter("max_iter and restarts must be at least 1".into()));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma0 must be non-negative, got {}", self.sigma0)));
        }
        Ok(())
    }
}

/// Cost and constraint data with the factorization of `F + rho (G'G + I)`.
#[derive(Debug, Clone)]
pub struct AdmmData {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Vector,
    pub rho: f64,
    n: usize,
    m: usize,
    horizon: usize,
    eps: f64,
    kkt: KktCache,
}

impl AdmmData {
    pub fn state_block(&self, z: &Vector, t: usize) -> Vector {
        z.rows(self.n * t, self.n).into_owned()
    }

    pub fn input_block(&self, z: &Vector, t: usize) -> Vector {
        z.rows(self.n * (self.horizon + 1) + self.m * t, self.m).into_owned()
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    /// Zeroes `u(t)` whenever `x(t)` is strictly inside the box.
    pub fn project(&self, z: &Vector) -> Vector {
        let mut out = z.clone();
        for t in 0..self.horizon {
            if inf_norm(&self.state_block(z, t)) < self.eps {
                out.rows_mut(self.n * (self.horizon + 1) + self.m * t, self.m).fill(0.0);
            }
        }
        out
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * (&self.f * z).dot(z)
    }

    pub fn dynamics_residual(&self, z: &Vector) -> f64 {
        (&self.g * z - &self.h).norm()
    }
}

/// `F = blkdiag(Q, ..., Q, P, R, ..., R)`; `G` holds `A x(t) - x(t+1) + B u(t) = 0`
/// for `t < N` followed by the pin `x(0) = x0`.
pub fn build_admm_data(inst: &ProblemInstance) -> (Matrix, Matrix, Vector) {
    let (n, m, horizon) = (inst.state_dim(), inst.input_dim(), inst.horizon());
    let nx = n * (horizon + 1);
    let dim = nx + m * horizon;
    let mut f = Matrix::zeros(dim, dim);
    for t in 0..=horizon {
        let w = if t == horizon { inst.p() } else { inst.q() };
        f.view_mut((n * t, n * t), (n, n)).copy_from(w);
    }
    for t in 0..horizon {
        let at = nx + m * t;
        f.view_mut((at, at), (m, m)).copy_from(inst.r());
    }
    let mut g = Matrix::zeros(n * (horizon + 1), dim);
    for t in 0..horizon {
        let row = n * t;
        g.view_mut((row, n * t), (n, n)).copy_from(inst.a());
        g.view_mut((row, n * (t + 1)), (n, n)).copy_from(&(-Matrix::identity(n, n)));
        g.view_mut((row, nx + m * t), (n, m)).copy_from(inst.b());
    }
    g.view_mut((n * horizon, 0), (n, n)).fill_with_identity();
    let mut h = Vector::zeros(n * (horizon + 1));
    h.rows_mut(n * horizon, n).copy_from(inst.x0());
    (f, g, h)
}

pub fn prepare(inst: &ProblemInstance, rho: f64) -> Result<AdmmData> {
    let (f, g, h) = build_admm_data(inst);
    let dim = f.nrows();
    let m = &f + (g.transpose() * &g + Matrix::identity(dim, dim)) * rho;
    let kkt = kkt_factorize(&m)?;
    Ok(AdmmData {
        f,
        g,
        h,
        rho,
        n: inst.state_dim(),
        m: inst.input_dim(),
        horizon: inst.horizon(),
        eps: inst.eps(),
        kkt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub z: Vector,
    /// Scaled duals of `G z = h` and of the consensus `z = y`.
    pub dual_g: Vector,
    pub dual_y: Vector,
    pub z_best: Option<Vector>,
    pub f_best: f64,
    /// Iterate with the smallest dynamics residual so far.
    pub z_least: Option<Vector>,
    pub least_residual: f64,
    pub iter: usize,
    pub primal_residuals: Vec<f64>,
    /// Half-step iterate of the last update.
    pub z_half: Vector,
}

impl AdmmState {
    pub fn new(data: &AdmmData, z0: Vector) -> Self {
        let dim = data.dim();
        Self {
            z_half: z0.clone(),
            z: z0,
            dual_g: Vector::zeros(data.g.nrows()),
            dual_y: Vector::zeros(dim),
            z_best: None,
            f_best: f64::INFINITY,
            z_least: None,
            least_residual: f64::INFINITY,
            iter: 0,
            primal_residuals: Vec::new(),
        }
    }

    /// Random start `z0 ~ N(0, sigma0^2 I)`.
    pub fn random(data: &AdmmData, sigma0: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, sigma0).expect("sigma0 is finite and non-negative");
        let z0 = Vector::from_fn(data.dim(), |_, _| normal.sample(rng));
        Self::new(data, z0)
    }
}

/// One ADMM iteration; records `z_best` when the new iterate satisfies the
/// dynamics to `eps_tol` and improves the cost.
pub fn admm_iterate(state: &mut AdmmState, data: &AdmmData, eps_tol: f64) -> Result<()> {
    let rhs = (data.g.transpose() * (&data.h - &state.dual_g) + (&state.z - &state.dual_y)) * data.rho;
    let z_half = kkt_solve(&data.kkt, &rhs)?;
    let z_next = data.project(&(&z_half + &state.dual_y));
    state.dual_g += &data.g * &z_half - &data.h;
    state.dual_y += &z_half - &z_next;
    state.z = z_next;
    state.z_half = z_half;
    state.iter += 1;

    let residual = data.dynamics_residual(&state.z);
    state.primal_residuals.push(residual);
    let cost = data.objective(&state.z);
    if residual < state.least_residual {
        state.least_residual = residual;
        state.z_least = Some(state.z.clone());
    }
    if residual <= eps_tol && cost < state.f_best {
        state.f_best = cost;
        state.z_best = Some(state.z.clone());
    }
    Ok(())
}

/// One row of the optional iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub primal_residual: f64,
    pub cost: f64,
    pub best: bool,
}

/// Labels read off an ADMM iterate: `0` inside the open box, else the region
/// label; `sigma(0)` always comes from `x0`.
fn polishing_labels(data: &AdmmData, ev: &Evaluator<'_>, inst: &ProblemInstance, z: &Vector) -> Vec<Label> {
    let rs = ev.regions();
    let mut labels: Vec<Label> = (0..data.horizon).map(|t| rs.classify(&data.state_block(z, t))).collect();
    labels[0] = rs.classify(inst.x0());
    labels
}

fn diverged(residuals: &[f64], eps_tol: f64) -> bool {
    let k = residuals.len();
    if k <= DIVERGENCE_WINDOW {
        return false;
    }
    let (now, before) = (residuals[k - 1], residuals[k - 1 - DIVERGENCE_WINDOW]);
    !now.is_finite() || (now > eps_tol && now > DIVERGENCE_FACTOR * before.max(eps_tol))
}

pub fn solve_admm(inst: &ProblemInstance, cfg: &AdmmConfig) -> Result<Solution> {
    solve_admm_traced(inst, cfg, &Tolerances::default(), false).map(|(sol, _)| sol)
}

/// Runs the heuristic; the trace (first restart only) is collected when
/// `trace` is set.
pub fn solve_admm_traced(
    inst: &ProblemInstance,
    cfg: &AdmmConfig,
    tol: &Tolerances,
    trace: bool,
) -> Result<(Solution, Vec<TraceRow>)> {
    cfg.validate()?;
    let start = Instant::now();
    let data = prepare(inst, cfg.rho)?;
    let ev = Evaluator::new(inst, *tol)?;
    let mut stats = SolveStats::default();
    let mut rows = Vec::new();
    let mut best: Option<Solution> = None;
    let mut last_status = SolveStatus::NoConvergence;
    let mut last_labels: Option<Vec<Label>> = None;

    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let mut state = AdmmState::random(&data, cfg.sigma0, &mut rng);
        let mut budget = cfg.max_iter;
        let mut polished_from: Option<Vector> = None;
        let mut doublings = 0;
        loop {
            let mut aborted = false;
            while state.iter < budget {
                admm_iterate(&mut state, &data, cfg.eps_tol)?;
                if trace && restart == 0 {
                    let residual = *state.primal_residuals.last().expect("one iteration ran");
                    rows.push(TraceRow {
                        iter: state.iter,
                        primal_residual: residual,
                        cost: data.objective(&state.z),
                        best: state.z_best.as_ref() == Some(&state.z),
                    });
                }
                if diverged(&state.primal_residuals, cfg.eps_tol) {
                    aborted = true;
                    break;
                }
            }
            // adaptive mode falls back to the least-violating iterate
            let candidate = state.z_best.clone().or_else(|| state.z_least.clone().filter(|_| cfg.adapt));
            let improved = candidate.is_some() && candidate != polished_from;
            if improved {
                let z_best = candidate.expect("checked above");
                let labels = polishing_labels(&data, &ev, inst, &z_best);
                stats.qp_count += 1;
                let sol = ev.solution(&labels, SolveStatus::Feasible, stats);
                polished_from = Some(z_best);
                last_labels = Some(labels);
                if sol.status.has_solution() {
                    if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                        best = Some(sol);
                    }
                    break;
                }
                last_status = SolveStatus::Infeasible;
            }
            if !cfg.adapt || aborted || doublings == MAX_DOUBLINGS || (!improved && polished_from.is_some()) {
                break;
            }
            doublings += 1;
            budget *= 2;
        }
        stats.iterations += state.iter as u64;
    }

    stats.wall_time = start.elapsed();
    let sol = match best {
        Some(mut sol) => {
            sol.stats = stats;
            sol
        }
        None => {
            let labels = last_labels.unwrap_or_else(|| vec![ev.regions().classify(inst.x0()); inst.horizon()]);
            Solution::failed(last_status, SwitchSequence(labels), stats)
        }
    };
    Ok((sol, rows))
}
