//! Monte Carlo sweep of the trigger threshold: control cost against
//! communication rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};

use super::{run_rhc_stream, RhcConfig};
use crate::error::{Error, Result};
use crate::model::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub eps: f64,
    pub mean_j_inf: f64,
    pub mean_pi_inf: f64,
    /// Runs that completed and enter the means.
    pub runs: usize,
    pub failures: usize,
}

/// Runs `mc_runs` closed-loop simulations per threshold. Run `k` uses random
/// stream `k` of `cfg.seed` for every threshold, so the thresholds are
/// compared on common noise realizations.
pub fn tradeoff_sweep(inst: &ProblemInstance, eps_list: &[f64], mc_runs: usize, cfg: &RhcConfig) -> Result<Vec<TradeoffRow>> {
    if mc_runs == 0 {
        return Err(Error::InvalidParameter("at least one Monte Carlo run is required".into()));
    }
    let instances: Vec<ProblemInstance> = eps_list.iter().map(|&e| inst.with_eps(e)).collect::<Result<_>>()?;
    let cells: Vec<(usize, u64)> = (0..eps_list.len()).flat_map(|i| (0..mc_runs as u64).map(move |k| (i, k))).collect();
    let outcomes: Vec<Option<(f64, f64)>> = cells
        .par_iter()
        .map(|&(i, k)| {
            let run = run_rhc_stream(&instances[i], cfg, k)?;
            Ok(run.failure.is_none().then_some((run.j_inf, run.pi_inf)))
        })
        .collect::<Result<_>>()?;

    Ok(eps_list
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let done: Vec<(f64, f64)> = outcomes[i * mc_runs..(i + 1) * mc_runs].iter().flatten().copied().collect();
            let runs = done.len();
            let mean = |f: fn(&(f64, f64)) -> f64| {
                if runs == 0 {
                    f64::NAN
                } else {
                    done.iter().map(f).sum::<f64>() / runs as f64
                }
            };
            TradeoffRow { eps, mean_j_inf: mean(|r| r.0), mean_pi_inf: mean(|r| r.1), runs, failures: mc_runs - runs }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value from the t approximation.
    pub p_value: f64,
}

/// Rank correlation of `x` and `y` (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::Dimension(format!("need two samples of equal length >= 3, got {} and {}", n, y.len())));
    }
    let rx = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Spearman { rho: f64::NAN, p_value: f64::NAN });
    }
    let rho = sxy / (sxx * syy).sqrt();
    let dof = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (dof / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
        2.0 * dist.cdf(-t.abs())
    };
    Ok(Spearman { rho, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use crate::model::Matrix;
    use crate::rhc::{InitialState, InnerSolver};
    use approx::assert_relative_eq;

    #[test]
    fn spearman_known_values() {
        let s = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 6.0, 7.0, 8.0, 7.0]).unwrap();
        // ranks y = 1, 2, 3.5, 5, 3.5
        assert_relative_eq!(s.rho, 0.820_782_681_668_123_7, epsilon = 1e-12);
        let perfect = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(perfect.rho, -1.0);
        assert_eq!(perfect.p_value, 0.0);
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        // t = 0.8208 * sqrt(3 / (1 - 0.6737)) = 2.489; two-sided p with 3 dof
        assert_relative_eq!(s.p_value, 0.088_587, epsilon = 1e-4);
    }

    #[test]
    fn single_run_rows_are_reproducible() {
        let inst = benchmarks::third_order(benchmarks::third_order_mpc_x0(), 1.0, 3);
        let mut cfg = RhcConfig::noiseless(InnerSolver::Greedy, 30, 3);
        cfg.noise_cov = Some(Matrix::identity(3, 3));
        cfg.x0 = InitialState::Gaussian(Matrix::identity(3, 3));
        cfg.seed = 7;
        let a = tradeoff_sweep(&inst, &[1.0, 3.0], 1, &cfg).unwrap();
        let b = tradeoff_sweep(&inst, &[1.0, 3.0], 1, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].runs + a[0].failures, 1);
        assert!(tradeoff_sweep(&inst, &[1.0], 0, &cfg).is_err());
    }

    #[test]
    fn very_large_threshold_rarely_transmits() {
        let stable = benchmarks::third_order_a() * 0.3;
        let inst = ProblemInstance::new(
            stable,
            benchmarks::third_order_b(),
            Matrix::identity(3, 3),
            Matrix::identity(1, 1),
            Matrix::identity(3, 3),
            benchmarks::third_order_mpc_x0(),
            1.0,
            3,
        )
        .unwrap();
        let mut cfg = RhcConfig::noiseless(InnerSolver::Greedy, 50, 3);
        cfg.noise_cov = Some(Matrix::identity(3, 3) * 0.01);
        cfg.x0 = InitialState::Gaussian(Matrix::identity(3, 3) * 0.01);
        let rows = tradeoff_sweep(&inst, &[1e6], 4, &cfg).unwrap();
        assert_eq!(rows[0].mean_pi_inf, 0.0);
    }
}
