//! Greedy heuristic: fix one label per step, growing the horizon.
//!
//! At step `k = 2..N` the labels `sigma(0..k-2)` are frozen and each of the
//! `2n+1` candidates for `sigma(k-1)` is scored by a QP. The cheapest feasible
//! candidate is kept (lowest label on ties). A final solve of the full
//! sequence gives the returned trajectory, for `(2n+1)(N-1) + 1` QPs in total.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::Evaluator;
use crate::model::{Label, ProblemInstance, Solution, SolveStats, SolveStatus, SwitchSequence};
use crate::tolerance::Tolerances;

/// How the steps after the current one are treated while scoring candidates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreedyTail {
    /// Horizon `k` with the terminal weight on `x(k)`.
    #[default]
    Truncated,
    /// Full horizon with unconstrained labels after step `k-1`.
    Free,
}

impl FromStr for GreedyTail {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncated" => Ok(Self::Truncated),
            "free" => Ok(Self::Free),
            other => Err(Error::InvalidParameter(format!("unknown greedy tail mode `{other}` (truncated|free)"))),
        }
    }
}

impl fmt::Display for GreedyTail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Truncated => "truncated",
            Self::Free => "free",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GreedyOptions {
    pub tail: GreedyTail,
    pub tolerances: Tolerances,
}

pub fn solve_greedy(inst: &ProblemInstance) -> Result<Solution> {
    solve_greedy_with(inst, &GreedyOptions::default())
}

pub fn solve_greedy_with(inst: &ProblemInstance, opts: &GreedyOptions) -> Result<Solution> {
    let start = Instant::now();
    let full = Evaluator::new(inst, opts.tolerances)?;
    let label_count = full.regions().label_count();
    let mut labels: Vec<Label> = vec![full.regions().classify(inst.x0())];
    let mut stats = SolveStats::default();

    for k in 2..=inst.horizon() {
        let truncated;
        let ev = match opts.tail {
            GreedyTail::Truncated => {
                truncated = inst.with_horizon(k)?;
                Evaluator::new(&truncated, opts.tolerances)?
            }
            GreedyTail::Free => Evaluator::new(inst, opts.tolerances)?,
        };
        let scores: Vec<(SolveStatus, f64, u64)> = (0..label_count)
            .into_par_iter()
            .map(|p| {
                let mut candidate = labels.clone();
                candidate.push(p);
                let cand = ev.evaluate(&candidate);
                (cand.status, cand.cost, cand.pivots)
            })
            .collect();
        stats.qp_count += label_count as u64;
        stats.iterations += scores.iter().map(|s| s.2).sum::<u64>();

        let mut best: Option<(Label, f64)> = None;
        for (p, &(status, cost, _)) in scores.iter().enumerate() {
            if !status.has_solution() {
                continue;
            }
            let better = best.is_none_or(|(_, b)| cost < b && !ev.tolerances().costs_agree(cost, b));
            if better {
                best = Some((p, cost));
            }
        }
        match best {
            Some((p, _)) => labels.push(p),
            None => {
                stats.wall_time = start.elapsed();
                let mut sigma = labels.clone();
                sigma.resize(inst.horizon(), 0);
                return Ok(Solution::failed(SolveStatus::Infeasible, SwitchSequence(sigma), stats));
            }
        }
    }

    stats.qp_count += 1;
    let mut sol = full.solution(&labels, SolveStatus::Feasible, stats);
    sol.stats.wall_time = start.elapsed();
    Ok(sol)
}
