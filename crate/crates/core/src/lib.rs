//! Finite-horizon LQ control with an event-triggered input constraint.
//!
//! The input must be zero whenever the state lies in the open box
//! `{x : |x|_inf < eps}`. Splitting the complement of the box into `2n`
//! polyhedra turns the problem into a disjunctive program: one convex QP per
//! switching sequence. This crate provides the exact enumeration solver, a
//! greedy and an ADMM heuristic, and a receding-horizon simulator built on
//! them.

pub mod benchmarks;
pub mod admm;
pub mod error;
pub mod exact;
pub mod greedy;
pub mod lqr;
pub mod model;
pub mod qp;
pub mod rhc;
pub mod tolerance;

pub use error::{Error, Result};
pub use model::{
    build_regions, check_trigger_consistency, classify, evaluate_cost, simulate, Label, Matrix, ProblemInstance,
    Region, RegionSet, Solution, SolveStats, SolveStatus, SwitchSequence, Trajectory, Vector,
};
pub use tolerance::Tolerances;
