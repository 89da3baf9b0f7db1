//! Global solver: enumerate every switching sequence, solve its QP and keep
//! the cheapest feasible one.
//!
//! `sigma(0)` is fixed by `x0`, so `(2n+1)^(N-1)` sequences are visited in
//! lexicographic order. The reduction is done sequentially over the ordered
//! results, which makes the answer independent of the number of workers.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    check_trigger_consistency_with, evaluate_cost, inf_norm, simulate, Label, ProblemInstance, RegionSet, Solution,
    SolveStats, SolveStatus, SwitchSequence, Trajectory,
};
use crate::qp::{solve_qp_with, CondensedModel, QpSettings, QpStatus};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExactOptions {
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Skip the subtree below any label prefix whose relaxed QP is already
    /// infeasible. The sequences skipped are counted as infeasible.
    pub prune: bool,
    /// Keep one record per sequence in the report.
    pub record: bool,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub sigma: SwitchSequence,
    pub status: SolveStatus,
    pub cost: f64,
    /// Phase-1 certificate for infeasible sequences, largest constraint
    /// violation of the solution otherwise.
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationReport {
    pub best: Solution,
    pub total_sequences: u64,
    pub feasible_count: u64,
    pub infeasible_count: u64,
    /// Infeasible sequences that were never solved because a prefix failed.
    pub pruned_count: u64,
    /// Ordered by sequence when requested.
    pub per_sequence: Option<Vec<SequenceRecord>>,
    pub tol_feas: f64,
}

/// Outcome of one sequence or prefix QP.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub status: SolveStatus,
    pub cost: f64,
    pub max_violation: f64,
    pub trajectory: Option<Trajectory>,
    pub pivots: u64,
}

/// Solves sequence QPs for one instance, sharing the prediction matrices.
pub(crate) struct Evaluator<'a> {
    inst: &'a ProblemInstance,
    rs: RegionSet,
    model: CondensedModel,
    settings: QpSettings,
}

impl<'a> Evaluator<'a> {
    pub fn new(inst: &'a ProblemInstance, tolerances: Tolerances) -> Result<Self> {
        let rs = RegionSet::new(inst.state_dim(), inst.eps())?;
        let model = CondensedModel::new(inst, &rs);
        Ok(Self { inst, rs, model, settings: QpSettings::with_tolerances(tolerances) })
    }

    pub fn regions(&self) -> &RegionSet {
        &self.rs
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.settings.tolerances
    }

    /// Solves the QP for `labels` (a full sequence or a prefix with a free
    /// tail). Full sequences are additionally validated against the strict
    /// trigger rule.
    pub fn evaluate(&self, labels: &[Label]) -> Candidate {
        let sq = self.model.qp_for(labels);
        let res = solve_qp_with(&sq.qp, None, &self.settings).expect("sequence QP is well formed");
        let pivots = res.pivots as u64;
        match res.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                return Candidate {
                    status: SolveStatus::Infeasible,
                    cost: f64::INFINITY,
                    max_violation: res.max_violation,
                    trajectory: None,
                    pivots,
                }
            }
            QpStatus::MaxIter | QpStatus::Unbounded => {
                return Candidate {
                    status: SolveStatus::NoConvergence,
                    cost: f64::INFINITY,
                    max_violation: f64::NAN,
                    trajectory: None,
                    pivots,
                }
            }
        }
        let traj = simulate(self.inst, &sq.inputs(&res.z)).expect("input dimensions match");
        if labels.len() == self.inst.horizon() {
            if let Some(excess) = self.schedule_violation(labels, &traj) {
                return Candidate {
                    status: SolveStatus::Infeasible,
                    cost: f64::INFINITY,
                    max_violation: excess,
                    trajectory: None,
                    pivots,
                };
            }
        }
        Candidate {
            status: SolveStatus::Optimal,
            cost: evaluate_cost(self.inst, &traj),
            max_violation: res.max_violation,
            trajectory: Some(traj),
            pivots,
        }
    }

    /// Amount by which a QP solution breaks the open-box semantics: a step
    /// labelled `0` outside the closed box, or a non-zero input strictly
    /// inside the box.
    fn schedule_violation(&self, labels: &[Label], traj: &Trajectory) -> Option<f64> {
        let tol = self.tolerances();
        let eps = self.inst.eps();
        let outside = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 0)
            .map(|(t, _)| inf_norm(&traj.states[t]) - eps)
            .fold(f64::NEG_INFINITY, f64::max);
        if outside > tol.strict {
            return Some(outside);
        }
        let (consistent, steps) = check_trigger_consistency_with(self.inst, traj, tol);
        if !consistent {
            let t = steps[0];
            return Some(eps - inf_norm(&traj.states[t]));
        }
        None
    }

    pub fn solution(&self, labels: &[Label], status: SolveStatus, stats: SolveStats) -> Solution {
        let cand = self.evaluate(labels);
        let sigma = SwitchSequence(labels.to_vec());
        match cand.trajectory {
            Some(traj) if cand.status.has_solution() => Solution {
                status,
                trajectory: Some(traj),
                cost: cand.cost,
                event_set: sigma.event_set(),
                sigma,
                stats,
            },
            _ => Solution::failed(cand.status, sigma, stats),
        }
    }
}

/// Solves the QP of a single full sequence.
pub fn solve_for_sequence(inst: &ProblemInstance, sigma: &SwitchSequence) -> Result<Solution> {
    solve_for_sequence_with(inst, sigma, &Tolerances::default())
}

pub fn solve_for_sequence_with(inst: &ProblemInstance, sigma: &SwitchSequence, tol: &Tolerances) -> Result<Solution> {
    let start = Instant::now();
    let ev = Evaluator::new(inst, *tol)?;
    sigma.validate(inst, ev.regions())?;
    let cand = ev.evaluate(sigma.labels());
    let stats = SolveStats { qp_count: 1, iterations: cand.pivots, wall_time: start.elapsed() };
    Ok(match cand.trajectory {
        Some(traj) => Solution {
            status: SolveStatus::Optimal,
            trajectory: Some(traj),
            cost: cand.cost,
            sigma: sigma.clone(),
            event_set: sigma.event_set(),
            stats,
        },
        None => Solution::failed(cand.status, sigma.clone(), stats),
    })
}

/// Result of one enumerated sequence, or of a pruned block of consecutive
/// sequences.
enum Item {
    Solved { index: u64, cand: Candidate },
    Pruned { first: u64, count: u64, certificate: f64 },
}

struct Enumeration<'e, 'a> {
    ev: &'e Evaluator<'a>,
    labels: u64,
    horizon: usize,
    initial: Label,
    prune: bool,
    /// Prefix length up to which subtrees are explored in parallel.
    split_depth: usize,
}

impl Enumeration<'_, '_> {
    fn index_of(&self, prefix: &[Label]) -> u64 {
        let mut idx = 0;
        for &l in &prefix[1..] {
            idx = idx * self.labels + l as u64;
        }
        idx * self.labels.pow((self.horizon - prefix.len()) as u32)
    }

    fn explore(&self, prefix: &[Label]) -> (Vec<Item>, u64) {
        if prefix.len() == self.horizon {
            let cand = self.ev.evaluate(prefix);
            return (vec![Item::Solved { index: self.index_of(prefix), cand }], 1);
        }
        let mut qps = 0;
        if self.prune && prefix.len() >= 2 {
            let cand = self.ev.evaluate(prefix);
            qps += 1;
            if cand.status == SolveStatus::Infeasible {
                let count = self.labels.pow((self.horizon - prefix.len()) as u32);
                let first = self.index_of(prefix);
                return (vec![Item::Pruned { first, count, certificate: cand.max_violation }], qps);
            }
        }
        let children = |label: Label| {
            let mut child = prefix.to_vec();
            child.push(label);
            self.explore(&child)
        };
        let results: Vec<(Vec<Item>, u64)> = if prefix.len() < self.split_depth {
            (0..self.labels as Label).into_par_iter().map(children).collect()
        } else {
            (0..self.labels as Label).map(children).collect()
        };
        let mut items = Vec::new();
        for (child_items, child_qps) in results {
            items.extend(child_items);
            qps += child_qps;
        }
        (items, qps)
    }

    fn labels_at(&self, index: u64) -> Vec<Label> {
        let mut labels = vec![0; self.horizon];
        labels[0] = self.initial;
        let mut rest = index;
        for t in (1..self.horizon).rev() {
            labels[t] = (rest % self.labels) as Label;
            rest /= self.labels;
        }
        labels
    }
}

pub fn solve_exact(inst: &ProblemInstance, opts: &ExactOptions) -> Result<EnumerationReport> {
    match opts.workers {
        Some(0) => Err(Error::InvalidParameter("worker count must be at least 1".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot start {w} workers: {e}")))?;
            pool.install(|| enumerate(inst, opts))
        }
        None => enumerate(inst, opts),
    }
}

fn enumerate(inst: &ProblemInstance, opts: &ExactOptions) -> Result<EnumerationReport> {
    let start = Instant::now();
    let ev = Evaluator::new(inst, opts.tolerances)?;
    let labels = ev.regions().label_count() as u64;
    let horizon = inst.horizon();
    let total = labels
        .checked_pow((horizon - 1) as u32)
        .ok_or_else(|| Error::InvalidParameter(format!("{labels}^{} sequences do not fit in 64 bits", horizon - 1)))?;
    let initial = ev.regions().classify(inst.x0());
    let en = Enumeration { ev: &ev, labels, horizon, initial, prune: opts.prune, split_depth: horizon.min(3) };
    let (items, qp_count) = en.explore(&[initial]);

    let mut feasible: Vec<(u64, f64)> = Vec::new();
    let mut pruned = 0;
    let mut pivots = 0;
    let mut records = opts.record.then(|| Vec::with_capacity(total.min(1 << 24) as usize));
    for item in &items {
        match item {
            Item::Solved { index, cand } => {
                pivots += cand.pivots;
                if cand.status.has_solution() {
                    feasible.push((*index, cand.cost));
                }
                if let Some(rec) = records.as_mut() {
                    rec.push(SequenceRecord {
                        sigma: SwitchSequence(en.labels_at(*index)),
                        status: cand.status,
                        cost: cand.cost,
                        max_violation: cand.max_violation,
                    });
                }
            }
            Item::Pruned { first, count, certificate } => {
                pruned += count;
                if let Some(rec) = records.as_mut() {
                    rec.extend((*first..first + count).map(|i| SequenceRecord {
                        sigma: SwitchSequence(en.labels_at(i)),
                        status: SolveStatus::Infeasible,
                        cost: f64::INFINITY,
                        max_violation: *certificate,
                    }));
                }
            }
        }
    }

    let tol = ev.tolerances();
    let min_cost = feasible.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
    // items are in lexicographic order, so the first near-minimal one wins
    let winner = feasible.iter().find(|(_, c)| tol.costs_agree(*c, min_cost)).map(|(i, _)| *i);
    let stats = SolveStats { qp_count, iterations: pivots, wall_time: start.elapsed() };
    let best = match winner {
        Some(index) => {
            let mut sol = ev.solution(&en.labels_at(index), SolveStatus::Optimal, stats);
            sol.stats.wall_time = start.elapsed();
            sol
        }
        None => Solution::failed(SolveStatus::Infeasible, SwitchSequence(vec![initial; horizon]), stats),
    };
    let feasible_count = feasible.len() as u64;
    Ok(EnumerationReport {
        best,
        total_sequences: total,
        feasible_count,
        infeasible_count: total - feasible_count,
        pruned_count: pruned,
        per_sequence: records,
        tol_feas: tol.feasibility,
    })
}
