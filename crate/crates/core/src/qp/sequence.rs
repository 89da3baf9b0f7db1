//! QP subproblem for a fixed switching sequence.
//!
//! Two equivalent formulations are provided. [`build_sequence_qp`] keeps the
//! states as variables and imposes the dynamics as equalities (block
//! bidiagonal). [`CondensedModel`] eliminates the states through the
//! prediction matrices, so each subproblem is a small inequality-constrained
//! QP in the free inputs only; it is the form used on the enumeration hot path.
//!
//! In both forms inputs at steps with label `0` are removed from the decision
//! vector, so they are exactly zero in the reconstructed trajectory.

use super::QpProblem;
use crate::error::Result;
use crate::model::{validate_prefix, Label, Matrix, ProblemInstance, RegionSet, SwitchSequence, Vector};

/// A sequence QP together with what is needed to map its solution back.
#[derive(Debug, Clone)]
pub struct SequenceQp {
    pub qp: QpProblem,
    /// Cost terms independent of the decision vector; the trajectory cost is
    /// `objective + constant`.
    pub constant: f64,
    free_inputs: Vec<usize>,
    input_offset: usize,
    input_dim: usize,
    horizon: usize,
}

impl SequenceQp {
    /// Steps whose input is a decision variable.
    pub fn free_inputs(&self) -> &[usize] {
        &self.free_inputs
    }

    /// Full input sequence `u(0..N-1)` with eliminated inputs set to zero.
    pub fn inputs(&self, z: &Vector) -> Vec<Vector> {
        let m = self.input_dim;
        let mut inputs = vec![Vector::zeros(m); self.horizon];
        for (k, &t) in self.free_inputs.iter().enumerate() {
            inputs[t].copy_from(&z.rows(self.input_offset + k * m, m));
        }
        inputs
    }
}

/// Rows `M x <= e` describing label `label`: the closed box for `0`, the
/// region polyhedron otherwise.
fn label_rows(rs: &RegionSet, label: Label) -> (Matrix, Vector) {
    let n = rs.state_dim();
    match rs.region(label) {
        Some(region) => (region.t.clone(), region.d.clone()),
        None => {
            let mut m = Matrix::zeros(2 * n, n);
            for i in 0..n {
                m[(i, i)] = 1.0;
                m[(n + i, i)] = -1.0;
            }
            (m, Vector::from_element(2 * n, rs.eps()))
        }
    }
}

fn stage_weight(inst: &ProblemInstance, t: usize) -> &Matrix {
    if t == inst.horizon() {
        inst.p()
    } else {
        inst.q()
    }
}

/// State-space formulation with `z = (x(1..N), free u)`.
pub fn build_sequence_qp(inst: &ProblemInstance, sigma: &SwitchSequence, rs: &RegionSet) -> Result<SequenceQp> {
    sigma.validate(inst, rs)?;
    let (n, m, horizon) = (inst.state_dim(), inst.input_dim(), inst.horizon());
    let labels = sigma.labels();
    let free_inputs: Vec<usize> = (0..horizon).filter(|&t| labels[t] != 0).collect();
    let nx = n * horizon;
    let dim = nx + m * free_inputs.len();

    let mut h = Matrix::zeros(dim, dim);
    for t in 1..=horizon {
        let at = n * (t - 1);
        h.view_mut((at, at), (n, n)).copy_from(&(stage_weight(inst, t) * 2.0));
    }
    for k in 0..free_inputs.len() {
        let at = nx + m * k;
        h.view_mut((at, at), (m, m)).copy_from(&(inst.r() * 2.0));
    }

    // x(t+1) - A x(t) - B u(t) = 0, with x(0) moved to the right-hand side
    let mut a_eq = Matrix::zeros(nx, dim);
    let mut b_eq = Vector::zeros(nx);
    for t in 0..horizon {
        let row = n * t;
        a_eq.view_mut((row, row), (n, n)).fill_with_identity();
        if t == 0 {
            b_eq.rows_mut(0, n).copy_from(&(inst.a() * inst.x0()));
        } else {
            a_eq.view_mut((row, n * (t - 1)), (n, n)).copy_from(&(-inst.a()));
        }
        if let Some(k) = free_inputs.iter().position(|&s| s == t) {
            a_eq.view_mut((row, nx + m * k), (n, m)).copy_from(&(-inst.b()));
        }
    }

    let blocks: Vec<(usize, Matrix, Vector)> =
        (1..horizon).map(|t| { let (mm, e) = label_rows(rs, labels[t]); (t, mm, e) }).collect();
    let rows: usize = blocks.iter().map(|(_, mm, _)| mm.nrows()).sum();
    let mut a_in = Matrix::zeros(rows, dim);
    let mut b_in = Vector::zeros(rows);
    let mut row = 0;
    for (t, mm, e) in &blocks {
        a_in.view_mut((row, n * (t - 1)), (mm.nrows(), n)).copy_from(mm);
        b_in.rows_mut(row, e.len()).copy_from(e);
        row += mm.nrows();
    }

    let g = Vector::zeros(dim);
    Ok(SequenceQp {
        qp: QpProblem { h, g, a_eq, b_eq, a_in, b_in },
        constant: crate::model::quad_form(inst.q(), inst.x0()),
        free_inputs,
        input_offset: nx,
        input_dim: m,
        horizon,
    })
}

/// Prediction-form data shared by every sequence QP of one instance.
///
/// With `U = (u(0), ..., u(N-1))`, `x(t) = phi_t + Gamma_t U`, and the cost is
/// `1/2 U' H U + g' U + c`.
#[derive(Debug, Clone)]
pub struct CondensedModel {
    n: usize,
    m: usize,
    horizon: usize,
    label_count: usize,
    initial_label: Label,
    hessian: Matrix,
    gradient: Vector,
    constant: f64,
    /// `[t * label_count + label]` for `t = 1..N-1`: `(M Gamma_t, e - M phi_t)`.
    rows: Vec<(Matrix, Vector)>,
}

impl CondensedModel {
    pub fn new(inst: &ProblemInstance, rs: &RegionSet) -> Self {
        let (n, m, horizon) = (inst.state_dim(), inst.input_dim(), inst.horizon());
        let mu = m * horizon;
        let mut phi = Vec::with_capacity(horizon + 1);
        let mut gamma = Vec::with_capacity(horizon + 1);
        phi.push(inst.x0().clone());
        gamma.push(Matrix::zeros(n, mu));
        for t in 0..horizon {
            let next_phi = inst.a() * &phi[t];
            let mut next_gamma = inst.a() * &gamma[t];
            next_gamma.view_mut((0, m * t), (n, m)).copy_from(inst.b());
            phi.push(next_phi);
            gamma.push(next_gamma);
        }

        let mut hessian = Matrix::zeros(mu, mu);
        for t in 0..horizon {
            hessian.view_mut((m * t, m * t), (m, m)).copy_from(inst.r());
        }
        let mut gradient = Vector::zeros(mu);
        let mut constant = 0.0;
        for t in 0..=horizon {
            let w = stage_weight(inst, t);
            let wg = w * &gamma[t];
            hessian += gamma[t].transpose() * &wg;
            gradient += wg.transpose() * &phi[t];
            constant += crate::model::quad_form(w, &phi[t]);
        }
        hessian *= 2.0;
        hessian = (&hessian + hessian.transpose()) * 0.5;
        gradient *= 2.0;

        let label_count = rs.label_count();
        let mut rows = Vec::with_capacity(horizon * label_count);
        for t in 0..horizon {
            for label in 0..label_count {
                if t == 0 {
                    rows.push((Matrix::zeros(0, mu), Vector::zeros(0)));
                    continue;
                }
                let (mm, e) = label_rows(rs, label);
                rows.push((&mm * &gamma[t], e - &mm * &phi[t]));
            }
        }
        Self { n, m, horizon, label_count, initial_label: rs.classify(inst.x0()), hessian, gradient, constant, rows }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// QP for a label prefix `sigma(0..L-1)`, `1 <= L <= N`.
    ///
    /// Steps `t >= L` are unconstrained and keep their inputs free, so a full
    /// length prefix gives the sequence QP and a shorter one a relaxation of
    /// every sequence extending it.
    pub fn qp_for(&self, labels: &[Label]) -> SequenceQp {
        assert!(!labels.is_empty() && labels.len() <= self.horizon, "prefix length out of range");
        debug_assert_eq!(labels[0], self.initial_label);
        let m = self.m;
        let free_inputs: Vec<usize> = (0..self.horizon).filter(|&t| t >= labels.len() || labels[t] != 0).collect();
        let dim = m * free_inputs.len();
        let columns: Vec<usize> = free_inputs.iter().flat_map(|&t| (m * t)..(m * t + m)).collect();

        let h = Matrix::from_fn(dim, dim, |i, j| self.hessian[(columns[i], columns[j])]);
        let g = Vector::from_fn(dim, |i, _| self.gradient[columns[i]]);

        let blocks: Vec<&(Matrix, Vector)> =
            (1..labels.len()).map(|t| &self.rows[t * self.label_count + labels[t]]).collect();
        let count: usize = blocks.iter().map(|(_, e)| e.len()).sum();
        let mut a_in = Matrix::zeros(count, dim);
        let mut b_in = Vector::zeros(count);
        let mut row = 0;
        for (mg, e) in blocks {
            for r in 0..e.len() {
                for (c, &col) in columns.iter().enumerate() {
                    a_in[(row + r, c)] = mg[(r, col)];
                }
                b_in[row + r] = e[r];
            }
            row += e.len();
        }
        SequenceQp {
            qp: QpProblem { h, g, a_eq: Matrix::zeros(0, dim), b_eq: Vector::zeros(0), a_in, b_in },
            constant: self.constant,
            free_inputs,
            input_offset: 0,
            input_dim: m,
            horizon: self.horizon,
        }
    }
}

/// Validated condensed QP for a full sequence or a prefix.
pub fn build_condensed_qp(inst: &ProblemInstance, labels: &[Label], rs: &RegionSet) -> Result<SequenceQp> {
    validate_prefix(labels, inst, rs)?;
    Ok(CondensedModel::new(inst, rs).qp_for(labels))
}
