//! Receding-horizon control with event-triggered transmission.
//!
//! At every step the controller only acts (and transmits) when the state is
//! outside the box; it then solves the finite-horizon problem from the current
//! state and applies the first input.

mod stability;
mod tradeoff;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::admm::{solve_admm_traced, AdmmConfig};
use crate::error::{Error, Result};
use crate::exact::{solve_exact, ExactOptions};
use crate::greedy::{solve_greedy_with, GreedyOptions};
use crate::model::{inf_norm, quad_form, Matrix, ProblemInstance, Solution, SolveStats, SolveStatus, Vector};
use crate::tolerance::Tolerances;

pub use stability::{compute_stability_constants, lyapunov_decrease_check, LyapunovReport, StabilityConstants, StabilityOptions};
pub use tradeoff::{spearman, tradeoff_sweep, Spearman, TradeoffRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerSolver {
    Exact,
    Greedy,
    Admm,
}

impl FromStr for InnerSolver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "greedy" => Ok(Self::Greedy),
            "admm" => Ok(Self::Admm),
            other => Err(Error::InvalidParameter(format!("unknown solver `{other}` (exact|greedy|admm)"))),
        }
    }
}

impl fmt::Display for InnerSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Greedy => "greedy",
            Self::Admm => "admm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Use the instance's `x0`.
    Fixed,
    /// `x0 ~ N(0, cov)`, drawn from the run's random stream.
    Gaussian(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhcConfig {
    pub inner: InnerSolver,
    pub sim_len: usize,
    /// Covariance of `w(t)`; `None` for a noiseless run.
    pub noise_cov: Option<Matrix>,
    /// Disturbance input matrix (`n x n`).
    pub b_w: Matrix,
    pub seed: u64,
    pub x0: InitialState,
    pub admm: AdmmConfig,
    pub greedy: GreedyOptions,
    pub workers: Option<usize>,
    pub tolerances: Tolerances,
}

impl RhcConfig {
    pub fn noiseless(inner: InnerSolver, sim_len: usize, n: usize) -> Self {
        Self {
            inner,
            sim_len,
            noise_cov: None,
            b_w: Matrix::identity(n, n),
            seed: 0,
            x0: InitialState::Fixed,
            admm: AdmmConfig { adapt: true, ..AdmmConfig::default() },
            greedy: GreedyOptions::default(),
            workers: None,
            tolerances: Tolerances::default(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.sim_len == 0 {
            return Err(Error::InvalidParameter("simulation length must be at least 1".into()));
        }
        if self.b_w.shape() != (n, n) {
            return Err(Error::Dimension(format!("B_w is {:?}, expected {n}x{n}", self.b_w.shape())));
        }
        for (what, cov) in [("noise covariance", self.noise_cov.as_ref()), ("x0 covariance", match &self.x0 {
            InitialState::Gaussian(c) => Some(c),
            InitialState::Fixed => None,
        })] {
            if let Some(c) = cov {
                if c.shape() != (n, n) {
                    return Err(Error::Dimension(format!("{what} is {:?}, expected {n}x{n}", c.shape())));
                }
                covariance_factor(c, what, &self.tolerances)?;
            }
        }
        self.admm.validate()
    }
}

/// Symmetric square root of a PSD covariance.
fn covariance_factor(cov: &Matrix, what: &'static str, tol: &Tolerances) -> Result<Matrix> {
    if (cov - cov.transpose()).amax() > tol.psd * cov.amax().max(1.0) {
        return Err(Error::NotSymmetric { what, asymmetry: (cov - cov.transpose()).amax() });
    }
    let eig = cov.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -tol.psd {
        return Err(Error::NotPositiveSemiDefinite { what, min_eig });
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

fn gaussian(factor: &Matrix, rng: &mut ChaCha8Rng) -> Vector {
    let white = Vector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    factor * white
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub step: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhcRun {
    /// `x(0..L)` for a run of `L` completed steps.
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub transmissions: Vec<bool>,
    /// Sum of the stage costs `x'Qx + u'Ru` over the completed steps.
    pub total_cost: f64,
    pub j_inf: f64,
    pub pi_inf: f64,
    /// Solver statistics for each step that solved a problem.
    pub solver_stats: Vec<Option<SolveStats>>,
    pub failure: Option<RunFailure>,
}

impl RhcRun {
    pub fn transmission_count(&self) -> usize {
        self.transmissions.iter().filter(|&&t| t).count()
    }
}

fn solve_inner(inst: &ProblemInstance, cfg: &RhcConfig) -> Result<Solution> {
    match cfg.inner {
        InnerSolver::Exact => {
            let opts = ExactOptions { workers: cfg.workers, prune: true, record: false, tolerances: cfg.tolerances };
            solve_exact(inst, &opts).map(|r| r.best)
        }
        InnerSolver::Greedy => solve_greedy_with(inst, &GreedyOptions { tolerances: cfg.tolerances, ..cfg.greedy }),
        InnerSolver::Admm => solve_admm_traced(inst, &cfg.admm, &cfg.tolerances, false).map(|(s, _)| s),
    }
}

/// Simulates one closed-loop run on the random stream `stream` of `cfg.seed`.
pub fn run_rhc_stream(inst: &ProblemInstance, cfg: &RhcConfig, stream: u64) -> Result<RhcRun> {
    let n = inst.state_dim();
    cfg.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut x = match &cfg.x0 {
        InitialState::Fixed => inst.x0().clone(),
        InitialState::Gaussian(cov) => gaussian(&covariance_factor(cov, "x0 covariance", &cfg.tolerances)?, &mut rng),
    };
    let noise = cfg.noise_cov.as_ref().map(|c| covariance_factor(c, "noise covariance", &cfg.tolerances)).transpose()?;

    let mut run = RhcRun {
        states: vec![x.clone()],
        inputs: Vec::with_capacity(cfg.sim_len),
        transmissions: Vec::with_capacity(cfg.sim_len),
        total_cost: 0.0,
        j_inf: 0.0,
        pi_inf: 0.0,
        solver_stats: Vec::with_capacity(cfg.sim_len),
        failure: None,
    };
    for t in 0..cfg.sim_len {
        let w = noise.as_ref().map(|f| gaussian(f, &mut rng));
        let transmit = inf_norm(&x) >= inst.eps();
        let u = if transmit {
            let sol = solve_inner(&inst.with_x0(x.clone())?, cfg)?;
            match sol.first_input() {
                Some(u) if sol.status.has_solution() => {
                    run.solver_stats.push(Some(sol.stats));
                    u.clone()
                }
                _ => {
                    run.failure = Some(RunFailure { step: t, status: sol.status });
                    break;
                }
            }
        } else {
            run.solver_stats.push(None);
            Vector::zeros(inst.input_dim())
        };
        run.total_cost += quad_form(inst.q(), &x) + quad_form(inst.r(), &u);
        let mut next = inst.a() * &x + inst.b() * &u;
        if let Some(w) = w {
            next += &cfg.b_w * w;
        }
        run.transmissions.push(transmit);
        run.inputs.push(u);
        run.states.push(next.clone());
        x = next;
    }
    let steps = run.inputs.len();
    if steps > 0 {
        run.j_inf = run.total_cost / steps as f64;
        run.pi_inf = run.transmission_count() as f64 / steps as f64;
    }
    Ok(run)
}

pub fn run_rhc(inst: &ProblemInstance, cfg: &RhcConfig) -> Result<RhcRun> {
    run_rhc_stream(inst, cfg, 0)
}
