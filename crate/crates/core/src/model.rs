//! Problem data, trigger geometry, trajectory simulation and cost evaluation.
//!
//! The plant is `x(t+1) = A x(t) + B u(t)` with the event-trigger rule that
//! the actuator input is zero whenever `|x(t)|_inf < eps`. The triggered region
//! `{x : |x|_inf >= eps}` is covered by `2n` closed polyhedra, one per signed
//! coordinate that dominates the infinity norm. Label `0` is the open box.

use std::fmt;
use std::time::Duration;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Region label: `0` is the trigger box, `1..=2n` the triggered polyhedra.
pub type Label = usize;

#[inline]
pub fn inf_norm(x: &Vector) -> f64 {
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn max_asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &Matrix) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

fn check_symmetric(what: &'static str, m: &Matrix) -> Result<()> {
    let asym = max_asymmetry(m);
    let scale = m.amax().max(1.0);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { what, asymmetry: asym });
    }
    Ok(())
}

fn check_square(what: &str, m: &Matrix, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// A finite-horizon event-triggered LQ problem.
///
/// Immutable once built; all invariants are checked in [`ProblemInstance::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    a: Matrix,
    b: Matrix,
    q: Matrix,
    r: Matrix,
    p: Matrix,
    x0: Vector,
    eps: f64,
    horizon: usize,
}

impl ProblemInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        b: Matrix,
        q: Matrix,
        r: Matrix,
        p: Matrix,
        x0: Vector,
        eps: f64,
        horizon: usize,
    ) -> Result<Self> {
        Self::with_tolerances(a, b, q, r, p, x0, eps, horizon, &Tolerances::default())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_tolerances(
        a: Matrix,
        b: Matrix,
        q: Matrix,
        r: Matrix,
        p: Matrix,
        x0: Vector,
        eps: f64,
        horizon: usize,
        tol: &Tolerances,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::Dimension("A must have at least one row".into()));
        }
        check_square("A", &a, n)?;
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B is {}x{}, expected {n}xm with m >= 1",
                b.nrows(),
                b.ncols()
            )));
        }
        let m = b.ncols();
        check_square("Q", &q, n)?;
        check_square("P", &p, n)?;
        check_square("R", &r, m)?;
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon N must be at least 1".into()));
        }
        check_symmetric("Q", &q)?;
        check_symmetric("R", &r)?;
        check_symmetric("P", &p)?;
        for (what, w) in [("Q", &q), ("P", &p)] {
            let min_eig = min_eigenvalue(w);
            if min_eig < -tol.psd {
                return Err(Error::NotPositiveSemiDefinite { what, min_eig });
            }
        }
        let min_eig = min_eigenvalue(&r);
        if min_eig <= tol.pd {
            return Err(Error::NotPositiveDefinite { what: "R", min_eig });
        }
        Ok(Self { a, b, q, r, p, x0, eps, horizon })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn q(&self) -> &Matrix {
        &self.q
    }
    pub fn r(&self) -> &Matrix {
        &self.r
    }
    pub fn p(&self) -> &Matrix {
        &self.p
    }
    pub fn x0(&self) -> &Vector {
        &self.x0
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Same problem from another initial state.
    pub fn with_x0(&self, x0: Vector) -> Result<Self> {
        if x0.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "x0 has length {}, expected {}",
                x0.len(),
                self.state_dim()
            )));
        }
        Ok(Self { x0, ..self.clone() })
    }

    /// Same problem with a different horizon (terminal weight unchanged).
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon N must be at least 1".into()));
        }
        Ok(Self { horizon, ..self.clone() })
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { eps, ..self.clone() })
    }

    /// PBH test for stabilizability of `(A, B)`.
    ///
    /// Diagnostic only: instances are never rejected on this basis.
    pub fn is_stabilizable(&self) -> bool {
        let n = self.state_dim();
        let m = self.input_dim();
        let eigs = self.a.clone().complex_eigenvalues();
        eigs.iter().all(|lambda| {
            if lambda.norm() < 1.0 - 1e-12 {
                return true;
            }
            let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + m);
            for i in 0..n {
                for j in 0..n {
                    let diag = if i == j { *lambda } else { Complex::new(0.0, 0.0) };
                    pencil[(i, j)] = Complex::new(self.a[(i, j)], 0.0) - diag;
                }
                for j in 0..m {
                    pencil[(i, n + j)] = Complex::new(self.b[(i, j)], 0.0);
                }
            }
            let sv = pencil.singular_values();
            let scale = sv.max().max(1.0);
            sv.iter().filter(|s| **s > 1e-10 * scale).count() == n
        })
    }
}

/// One closed polyhedron `{x : T x <= d}` of the triggered region.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub t: Matrix,
    pub d: Vector,
}

impl Region {
    pub fn contains(&self, x: &Vector, slack: f64) -> bool {
        (0..self.t.nrows()).all(|i| self.t.row(i).dot(&x.transpose()) <= self.d[i] + slack)
    }

    /// Largest row violation `max_i (T x - d)_i` (negative when strictly inside).
    pub fn violation(&self, x: &Vector) -> f64 {
        (0..self.t.nrows())
            .map(|i| self.t.row(i).dot(&x.transpose()) - self.d[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The box `C_0` (implicit) and the `2n` polyhedra covering its complement.
///
/// Region order is `+x_1, ..., +x_n, -x_1, ..., -x_n`: region `p` for the
/// signed coordinate `s x_i` is `{x : s x_i >= |x_j| for j != i, s x_i >= eps}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    n: usize,
    eps: f64,
    regions: Vec<Region>,
}

pub fn build_regions(n: usize, eps: f64) -> Result<RegionSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("state dimension must be at least 1".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let rows = 2 * n - 1;
    let mut regions = Vec::with_capacity(2 * n);
    for sign in [1.0, -1.0] {
        for i in 0..n {
            let mut t = Matrix::zeros(rows, n);
            let mut d = Vector::zeros(rows);
            let mut row = 0;
            for j in (0..n).filter(|&j| j != i) {
                // s x_i >= x_j and s x_i >= -x_j
                t[(row, i)] = -sign;
                t[(row, j)] = 1.0;
                t[(row + 1, i)] = -sign;
                t[(row + 1, j)] = -1.0;
                row += 2;
            }
            t[(row, i)] = -sign;
            d[row] = -eps;
            regions.push(Region { t, d });
        }
    }
    Ok(RegionSet { n, eps, regions })
}

impl RegionSet {
    pub fn new(n: usize, eps: f64) -> Result<Self> {
        build_regions(n, eps)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Number of labels including the box (`2n + 1`).
    pub fn label_count(&self) -> usize {
        self.regions.len() + 1
    }

    /// Polyhedron for label `p >= 1`.
    pub fn region(&self, label: Label) -> Option<&Region> {
        label.checked_sub(1).and_then(|i| self.regions.get(i))
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Label of `x`: `0` iff `|x|_inf < eps`, else the lowest-index polyhedron
    /// containing `x` (within `slack`).
    pub fn classify_with(&self, x: &Vector, slack: f64) -> Label {
        if inf_norm(x) < self.eps {
            return 0;
        }
        self.regions
            .iter()
            .position(|r| r.contains(x, slack))
            .map(|i| i + 1)
            // Unreachable for |x|_inf >= eps: the dominant signed coordinate's
            // region always contains x exactly.
            .unwrap_or_else(|| dominant_label(x))
    }

    pub fn classify(&self, x: &Vector) -> Label {
        self.classify_with(x, Tolerances::default().membership)
    }

    /// Whether `x` satisfies the (closed) constraint of `label` within `slack`.
    /// Label `0` is checked against the closed box `|x|_inf <= eps`.
    pub fn satisfies(&self, label: Label, x: &Vector, slack: f64) -> bool {
        match label {
            0 => inf_norm(x) <= self.eps + slack,
            p => self.region(p).is_some_and(|r| r.contains(x, slack)),
        }
    }
}

pub fn classify(x: &Vector, rs: &RegionSet) -> Label {
    rs.classify(x)
}

/// Label of the signed coordinate with largest magnitude (lowest index on ties,
/// positive sign before negative).
fn dominant_label(x: &Vector) -> Label {
    let n = x.len();
    let mut best = 0;
    for i in 1..n {
        if x[i].abs() > x[best].abs() {
            best = i;
        }
    }
    if x[best] >= 0.0 {
        best + 1
    } else {
        n + best + 1
    }
}

/// Per-step region labels `sigma(0..N-1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SwitchSequence(pub Vec<Label>);

impl SwitchSequence {
    pub fn new(labels: Vec<Label>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Time steps with zero control, `{t : sigma(t) = 0}`.
    pub fn event_set(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &l)| l == 0).map(|(t, _)| t).collect()
    }

    /// Checks length, label range and `sigma(0) = classify(x0)`.
    pub fn validate(&self, inst: &ProblemInstance, rs: &RegionSet) -> Result<()> {
        if self.0.len() != inst.horizon() {
            return Err(Error::Dimension(format!(
                "switching sequence has length {}, expected N = {}",
                self.0.len(),
                inst.horizon()
            )));
        }
        validate_prefix(&self.0, inst, rs)
    }
}

pub(crate) fn validate_prefix(labels: &[Label], inst: &ProblemInstance, rs: &RegionSet) -> Result<()> {
    if labels.is_empty() || labels.len() > inst.horizon() {
        return Err(Error::Dimension(format!(
            "label prefix has length {}, expected 1..={}",
            labels.len(),
            inst.horizon()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= rs.label_count()) {
        return Err(Error::LabelOutOfRange { label, regions: rs.label_count() });
    }
    let expected = rs.classify(inst.x0());
    if labels[0] != expected {
        return Err(Error::SequenceMismatch { expected, found: labels[0] });
    }
    Ok(())
}

impl fmt::Display for SwitchSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "}}")
    }
}

/// States `x(0..N)` and inputs `u(0..N-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// `max_t |x(t+1) - A x(t) - B u(t)|_inf`.
    pub fn dynamics_residual(&self, inst: &ProblemInstance) -> f64 {
        self.inputs
            .iter()
            .enumerate()
            .map(|(t, u)| inf_norm(&(&self.states[t + 1] - inst.a() * &self.states[t] - inst.b() * u)))
            .fold(0.0, f64::max)
    }

    /// Labels of `x(0..N-1)`.
    pub fn labels(&self, rs: &RegionSet) -> SwitchSequence {
        SwitchSequence(self.states[..self.inputs.len()].iter().map(|x| rs.classify(x)).collect())
    }
}

/// Rolls `x(t+1) = A x(t) + B u(t)` forward from `x0`.
pub fn simulate(inst: &ProblemInstance, inputs: &[Vector]) -> Result<Trajectory> {
    if inputs.len() != inst.horizon() {
        return Err(Error::Dimension(format!(
            "{} inputs supplied for horizon {}",
            inputs.len(),
            inst.horizon()
        )));
    }
    simulate_from(inst.a(), inst.b(), inst.x0(), inputs)
}

pub(crate) fn simulate_from(a: &Matrix, b: &Matrix, x0: &Vector, inputs: &[Vector]) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (t, u) in inputs.iter().enumerate() {
        if u.len() != b.ncols() {
            return Err(Error::Dimension(format!(
                "input u({t}) has length {}, expected {}",
                u.len(),
                b.ncols()
            )));
        }
        let next = a * &states[t] + b * u;
        states.push(next);
    }
    Ok(Trajectory { states, inputs: inputs.to_vec() })
}

#[inline]
pub(crate) fn quad_form(w: &Matrix, x: &Vector) -> f64 {
    (w * x).dot(x)
}

/// `x(N)' P x(N) + sum_t x(t)' Q x(t) + u(t)' R u(t)`.
pub fn evaluate_cost(inst: &ProblemInstance, traj: &Trajectory) -> f64 {
    let n_steps = traj.inputs.len();
    let stage: f64 = (0..n_steps)
        .map(|t| quad_form(inst.q(), &traj.states[t]) + quad_form(inst.r(), &traj.inputs[t]))
        .sum();
    stage + quad_form(inst.p(), &traj.states[n_steps])
}

/// Returns whether `u(t) = 0` at every step whose state is strictly inside the
/// box, and the offending steps.
pub fn check_trigger_consistency(inst: &ProblemInstance, traj: &Trajectory) -> (bool, Vec<usize>) {
    check_trigger_consistency_with(inst, traj, &Tolerances::default())
}

pub fn check_trigger_consistency_with(
    inst: &ProblemInstance,
    traj: &Trajectory,
    tol: &Tolerances,
) -> (bool, Vec<usize>) {
    let violations: Vec<usize> = traj
        .inputs
        .iter()
        .enumerate()
        .filter(|(t, u)| inf_norm(&traj.states[*t]) < inst.eps() - tol.strict && inf_norm(u) > tol.zero)
        .map(|(t, _)| t)
        .collect();
    (violations.is_empty(), violations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    NoConvergence,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NoConvergence => "no_convergence",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveStats {
    pub qp_count: u64,
    pub iterations: u64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    /// Present whenever `status` has a solution.
    pub trajectory: Option<Trajectory>,
    /// `+inf` when there is no trajectory.
    pub cost: f64,
    pub sigma: SwitchSequence,
    pub event_set: Vec<usize>,
    pub stats: SolveStats,
}

impl Solution {
    pub fn failed(status: SolveStatus, sigma: SwitchSequence, stats: SolveStats) -> Self {
        let event_set = sigma.event_set();
        Self { status, trajectory: None, cost: f64::INFINITY, sigma, event_set, stats }
    }

    /// First planned input, if any.
    pub fn first_input(&self) -> Option<&Vector> {
        self.trajectory.as_ref().and_then(|t| t.inputs.first())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn region_c1_matches_two_dimensional_construction() {
        let rs = build_regions(2, 0.25).unwrap();
        let c1 = rs.region(1).unwrap();
        assert_eq!(c1.t, dmatrix![-1.0, 1.0; -1.0, -1.0; -1.0, 0.0]);
        assert_eq!(c1.d, dvector![0.0, 0.0, -0.25]);
        // C2: x1 <= x2, x1 >= -x2, x2 >= eps
        let c2 = rs.region(2).unwrap();
        assert!(c2.contains(&dvector![0.1, 0.5], 0.0));
        assert!(!c2.contains(&dvector![0.5, 0.1], 0.0));
        // C3 and C4 are the negative counterparts
        assert!(rs.region(3).unwrap().contains(&dvector![-0.5, 0.1], 0.0));
        assert!(rs.region(4).unwrap().contains(&dvector![0.1, -0.5], 0.0));
    }

    #[test]
    fn scalar_regions_are_single_rows() {
        let rs = build_regions(1, 1.0).unwrap();
        assert_eq!(rs.regions().len(), 2);
        assert_eq!(rs.region(1).unwrap().t, dmatrix![-1.0]);
        assert_eq!(rs.region(1).unwrap().d, dvector![-1.0]);
        assert_eq!(rs.region(2).unwrap().t, dmatrix![1.0]);
        assert_eq!(rs.classify(&dvector![1.0]), 1);
        assert_eq!(rs.classify(&dvector![-3.0]), 2);
        assert_eq!(rs.classify(&dvector![0.999]), 0);
    }

    #[test]
    fn build_regions_rejects_bad_input() {
        assert!(build_regions(0, 1.0).is_err());
        assert!(build_regions(2, 0.0).is_err());
        assert!(build_regions(2, -1.0).is_err());
    }

    #[test]
    fn three_dimensional_membership_follows_dominance_rule() {
        let rs = build_regions(3, 0.2).unwrap();
        assert_eq!(rs.regions().len(), 6);
        assert!(rs.regions().iter().all(|r| r.t.nrows() == 5 && r.d.len() == 5));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x = dvector![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let norm = x.amax();
            let label = rs.classify(&x);
            if norm < 0.2 {
                assert_eq!(label, 0);
                continue;
            }
            let (i, v) = x.iter().enumerate().fold((0, 0.0_f64), |(bi, bv), (i, v)| {
                if v.abs() > bv.abs() { (i, *v) } else { (bi, bv) }
            });
            let expected = if v > 0.0 { i + 1 } else { 3 + i + 1 };
            assert_eq!(label, expected, "x = {x}");
        }
    }

    #[test]
    fn classify_examples() {
        let rs = build_regions(2, 0.25).unwrap();
        assert_eq!(rs.classify(&dvector![0.0, -1.0]), 4);
        assert_eq!(rs.classify(&dvector![0.0, 0.0]), 0);
        assert_eq!(rs.classify(&dvector![0.25, 0.1]), 1);
        // shared boundary x1 = x2: lowest index wins
        assert_eq!(rs.classify(&dvector![0.5, 0.5]), 1);
    }

    #[test]
    fn simulate_examples() {
        let inst = benchmarks::example2();
        let zero = vec![dvector![0.0]; 7];
        let traj = simulate(&inst, &zero).unwrap();
        assert_relative_eq!(traj.states[1], dvector![-0.2, -1.5], epsilon = 1e-15);

        let ident = ProblemInstance::new(
            Matrix::identity(2, 2),
            Matrix::zeros(2, 1),
            Matrix::identity(2, 2),
            dmatrix![1.0],
            Matrix::identity(2, 2),
            dvector![0.3, -0.7],
            0.1,
            4,
        )
        .unwrap();
        let traj = simulate(&ident, &[dvector![1.0], dvector![-2.0], dvector![3.0], dvector![0.5]]).unwrap();
        assert!(traj.states.iter().all(|x| *x == dvector![0.3, -0.7]));

        let origin = inst.with_x0(dvector![0.0, 0.0]).unwrap();
        let traj = simulate(&origin, &zero).unwrap();
        assert!(traj.states.iter().all(|x| x.amax() == 0.0));
        assert_eq!(evaluate_cost(&origin, &traj), 0.0);

        assert!(simulate(&inst, &zero[..3]).is_err());
        assert!(simulate(&inst, &vec![dvector![0.0, 1.0]; 7]).is_err());
    }

    #[test]
    fn one_step_cost_by_hand() {
        let inst = benchmarks::example2().with_horizon(1).unwrap();
        let traj = simulate(&inst, &[dvector![0.0]]).unwrap();
        assert_relative_eq!(evaluate_cost(&inst, &traj), 6.58, epsilon = 1e-12);
    }

    #[test]
    fn cost_scales_with_weights() {
        let inst = benchmarks::example2();
        let c = 3.5;
        let scaled = ProblemInstance::new(
            inst.a().clone(),
            inst.b().clone(),
            inst.q() * c,
            inst.r() * c,
            inst.p() * c,
            inst.x0().clone(),
            inst.eps(),
            inst.horizon(),
        )
        .unwrap();
        let inputs: Vec<Vector> = (0..7).map(|t| dvector![0.1 * t as f64 - 0.3]).collect();
        let j = evaluate_cost(&inst, &simulate(&inst, &inputs).unwrap());
        let js = evaluate_cost(&scaled, &simulate(&scaled, &inputs).unwrap());
        assert_relative_eq!(js, c * j, max_relative = 1e-14);
    }

    #[test]
    fn trigger_consistency_flags_inputs_inside_box() {
        let inst = benchmarks::example2();
        let zero = vec![dvector![0.0]; 7];
        let traj = simulate(&inst, &zero).unwrap();
        assert_eq!(check_trigger_consistency(&inst, &traj), (true, vec![]));

        let mut states = traj.states.clone();
        states[3] = dvector![0.125, 0.0];
        let mut inputs = zero.clone();
        inputs[3] = dvector![0.4];
        let forged = Trajectory { states, inputs };
        assert_eq!(check_trigger_consistency(&inst, &forged), (false, vec![3]));
    }

    #[test]
    fn instance_validation() {
        let inst = benchmarks::example2();
        let bad_r = ProblemInstance::new(
            inst.a().clone(),
            inst.b().clone(),
            inst.q().clone(),
            dmatrix![0.0],
            inst.p().clone(),
            inst.x0().clone(),
            0.25,
            7,
        );
        assert!(matches!(bad_r, Err(Error::NotPositiveDefinite { what: "R", .. })));
        let bad_q = ProblemInstance::new(
            inst.a().clone(),
            inst.b().clone(),
            dmatrix![1.0, 0.0; 0.0, -1.0],
            inst.r().clone(),
            inst.p().clone(),
            inst.x0().clone(),
            0.25,
            7,
        );
        assert!(matches!(bad_q, Err(Error::NotPositiveSemiDefinite { what: "Q", .. })));
        let asym = ProblemInstance::new(
            inst.a().clone(),
            inst.b().clone(),
            dmatrix![1.0, 0.5; 0.0, 1.0],
            inst.r().clone(),
            inst.p().clone(),
            inst.x0().clone(),
            0.25,
            7,
        );
        assert!(matches!(asym, Err(Error::NotSymmetric { .. })));
        assert!(inst.with_eps(0.0).is_err());
        assert!(inst.with_horizon(0).is_err());
        assert!(inst.with_x0(dvector![1.0]).is_err());
    }

    #[test]
    fn stabilizability_diagnostic() {
        assert!(benchmarks::example2().is_stabilizable());
        let unreachable = ProblemInstance::new(
            dmatrix![2.0, 0.0; 0.0, 0.5],
            dmatrix![0.0; 1.0],
            Matrix::identity(2, 2),
            dmatrix![1.0],
            Matrix::identity(2, 2),
            dvector![1.0, 1.0],
            0.1,
            3,
        )
        .unwrap();
        assert!(!unreachable.is_stabilizable());
    }

    #[test]
    fn sequence_validation_and_event_set() {
        let inst = benchmarks::example2();
        let rs = RegionSet::new(2, 0.25).unwrap();
        let sigma = SwitchSequence::new(vec![4, 4, 4, 1, 1, 0, 0]);
        sigma.validate(&inst, &rs).unwrap();
        assert_eq!(sigma.event_set(), vec![5, 6]);
        assert_eq!(sigma.to_string(), "{4,4,4,1,1,0,0}");
        let wrong = SwitchSequence::new(vec![1, 4, 4, 1, 1, 0, 0]);
        assert_eq!(wrong.validate(&inst, &rs), Err(Error::SequenceMismatch { expected: 4, found: 1 }));
        assert!(SwitchSequence::new(vec![4, 9, 0, 0, 0, 0, 0]).validate(&inst, &rs).is_err());
        assert!(SwitchSequence::new(vec![4]).validate(&inst, &rs).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn state(n: usize) -> impl Strategy<Value = Vector> {
            (prop::collection::vec(-1.0f64..1.0, n), -3i32..3)
                .prop_map(|(v, e)| Vector::from_vec(v) * 10f64.powi(e))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(2000))]

            #[test]
            fn partition_covers_complement_of_box(n in 1usize..5, eps in 0.01f64..2.0, seed in any::<u64>()) {
                let rs = build_regions(n, eps).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..50 {
                    let scale = 10f64.powi(rng.random_range(-3..3));
                    let x = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0) * scale);
                    let label = rs.classify(&x);
                    prop_assert_eq!(label == 0, x.amax() < eps);
                    if label > 0 {
                        prop_assert!(rs.region(label).unwrap().contains(&x, 1e-9));
                    } else {
                        prop_assert!(rs.regions().iter().all(|r| !r.contains(&x, 0.0)));
                    }
                }
            }

            #[test]
            fn scaling_out_of_the_box_always_triggers(x in state(3), extra in 1.0f64..100.0) {
                prop_assume!(x.amax() > 0.0);
                let rs = build_regions(3, 0.3).unwrap();
                let c = 0.3 / x.amax() * extra;
                prop_assert_ne!(rs.classify(&(x * c)), 0);
            }

            #[test]
            fn simulate_and_cost_are_deterministic(u in prop::collection::vec(-2.0f64..2.0, 7)) {
                let inst = benchmarks::example2();
                let inputs: Vec<Vector> = u.iter().map(|v| Vector::from_element(1, *v)).collect();
                let a = simulate(&inst, &inputs).unwrap();
                let b = simulate(&inst, &inputs).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(evaluate_cost(&inst, &a).to_bits(), evaluate_cost(&inst, &b).to_bits());
                prop_assert!(a.dynamics_residual(&inst) <= 1e-12);
            }
        }
    }
}
