//! Dual active-set method (Goldfarb-Idnani) for strictly convex QPs.
//!
//! Solves `min 1/2 x'Hx + g'x` s.t. `n_i'x = b_i` (equalities) and
//! `n_i'x >= b_i` (inequalities), starting from the unconstrained minimizer
//! and adding the most violated constraint each major step. The working set is
//! tracked through `J = L^-T Q` and an upper-triangular `R` updated with Givens
//! rotations, so each add/drop costs O(d^2).

use nalgebra::Cholesky;

use crate::model::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    MaxIter,
    /// Equality constraints are linearly dependent and inconsistent.
    InconsistentEqualities,
}

#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub x: Vec<f64>,
    pub outcome: Outcome,
    /// Active constraint ids (`0..e` equalities, `e..e+i` inequalities).
    pub active: Vec<usize>,
    /// Multipliers of `active`, in the `H x + g = sum u_k n_k` convention.
    pub multipliers: Vec<f64>,
    pub pivots: usize,
}

/// Constraint normals stored column-wise (`d x count`, column-major).
pub(crate) struct Constraints<'a> {
    pub normals: &'a [f64],
    pub rhs: &'a [f64],
}

impl Constraints<'_> {
    fn count(&self) -> usize {
        self.rhs.len()
    }
    #[inline]
    fn normal(&self, dim: usize, i: usize) -> &[f64] {
        &self.normals[i * dim..(i + 1) * dim]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Workspace {
    dim: usize,
    /// Column-major `dim x dim`.
    j: Vec<f64>,
    /// Column-major `dim x dim`, upper triangular in its first `iq` columns.
    r: Vec<f64>,
    iq: usize,
    r_norm: f64,
}

impl Workspace {
    /// `d = J' np`.
    fn project(&self, np: &[f64], d: &mut [f64]) {
        let n = self.dim;
        for (i, di) in d.iter_mut().enumerate() {
            *di = dot(&self.j[i * n..(i + 1) * n], np);
        }
    }

    /// `z = J2 d2` (primal direction in the null space of the working set).
    fn primal_direction(&self, d: &[f64], z: &mut [f64]) {
        let n = self.dim;
        z.iter_mut().for_each(|v| *v = 0.0);
        for k in self.iq..n {
            let col = &self.j[k * n..(k + 1) * n];
            let dk = d[k];
            for (zi, ci) in z.iter_mut().zip(col) {
                *zi += ci * dk;
            }
        }
    }

    /// `r = R^-1 d1` (negative dual direction).
    fn dual_direction(&self, d: &[f64], r: &mut [f64]) {
        let n = self.dim;
        for i in (0..self.iq).rev() {
            let mut sum = d[i];
            for k in (i + 1)..self.iq {
                sum -= self.r[k * n + i] * r[k];
            }
            r[i] = sum / self.r[i * n + i];
        }
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        let n = self.dim;
        for k in 0..n {
            let ja = self.j[a * n + k];
            let jb = self.j[b * n + k];
            self.j[a * n + k] = c * ja + s * jb;
            self.j[b * n + k] = -s * ja + c * jb;
        }
    }

    /// Appends the constraint whose projection is `d = J' np`.
    /// Returns `false` when it is numerically dependent on the working set.
    fn add(&mut self, d: &mut [f64]) -> bool {
        let n = self.dim;
        for k in ((self.iq + 1)..n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, c, s);
        }
        let col = self.iq;
        for i in 0..=col {
            self.r[col * n + i] = d[i];
        }
        self.iq += 1;
        let pivot = d[col].abs();
        if pivot <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(pivot);
        true
    }

    /// Removes the working-set entry at position `pos`.
    fn drop(&mut self, pos: usize) {
        let n = self.dim;
        let iq = self.iq;
        for col in pos..(iq - 1) {
            for i in 0..n {
                self.r[col * n + i] = self.r[(col + 1) * n + i];
            }
        }
        for i in 0..n {
            self.r[(iq - 1) * n + i] = 0.0;
        }
        self.iq -= 1;
        // restore triangularity: entries (j+1, j) for j >= pos
        for jc in pos..self.iq {
            let a = self.r[jc * n + jc];
            let b = self.r[jc * n + jc + 1];
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for k in jc..self.iq {
                let ra = self.r[k * n + jc];
                let rb = self.r[k * n + jc + 1];
                self.r[k * n + jc] = c * ra + s * rb;
                self.r[k * n + jc + 1] = -s * ra + c * rb;
            }
            self.r[jc * n + jc + 1] = 0.0;
            self.rotate_j(jc, jc + 1, c, s);
        }
    }
}

/// Runs the dual active-set iteration.
///
/// `chol` is the Cholesky factor of `H`. `hints` are inequality indices (into
/// `ineq`) to try first, in order, while they are violated; afterwards the
/// most violated constraint is chosen (lowest index on ties).
pub(crate) fn solve(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    g: &Vector,
    eq: &Constraints<'_>,
    ineq: &Constraints<'_>,
    hints: &[usize],
    max_pivots: usize,
) -> DualSolution {
    let n = g.len();
    let n_eq = eq.count();
    let n_in = ineq.count();

    // J = L^-T
    let l = chol.l();
    let l_inv_t = l
        .solve_lower_triangular(&Matrix::identity(n, n))
        .expect("Cholesky factor has a non-zero diagonal")
        .transpose();
    let mut ws = Workspace { dim: n, j: l_inv_t.as_slice().to_vec(), r: vec![0.0; n * n], iq: 0, r_norm: 1.0 };

    let x0 = chol.solve(g);
    let mut x: Vec<f64> = x0.iter().map(|v| -v).collect();

    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n + 1);
    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut pivots = 0;

    let finish = |x: Vec<f64>, outcome, active: Vec<usize>, u: Vec<f64>, pivots| DualSolution {
        x,
        outcome,
        active,
        multipliers: u,
        pivots,
    };

    for i in 0..n_eq {
        let np = eq.normal(n, i);
        ws.project(np, &mut d);
        ws.primal_direction(&d, &mut z);
        ws.dual_direction(&d, &mut r);
        let total: f64 = d.iter().map(|v| v * v).sum();
        let free: f64 = d[ws.iq..].iter().map(|v| v * v).sum();
        let residual = eq.rhs[i] - dot(np, &x);
        if free <= 1e-14 * total {
            // dependent on earlier equalities
            let scale = 1.0 + eq.rhs[i].abs() + np.iter().map(|v| v.abs()).sum::<f64>() * x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if residual.abs() > 1e-9 * scale {
                return finish(x, Outcome::InconsistentEqualities, active, u, pivots);
            }
            continue;
        }
        let step = residual / dot(&z, np);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += step * zi;
        }
        for (k, uk) in u.iter_mut().enumerate() {
            *uk -= step * r[k];
        }
        u.push(step);
        active.push(i);
        ws.add(&mut d);
        pivots += 1;
    }
    let n_eq_active = active.len();

    let slack_tol: Vec<f64> = (0..n_in)
        .map(|i| {
            let norm1: f64 = ineq.normal(n, i).iter().map(|v| v.abs()).sum();
            1e-11 * (1.0 + ineq.rhs[i].abs() + norm1)
        })
        .collect();
    let mut in_working = vec![false; n_in];
    let mut excluded = vec![false; n_in];
    let mut hint_cursor = 0;

    loop {
        if pivots >= max_pivots {
            return finish(x, Outcome::MaxIter, active, u, pivots);
        }
        // Step 1: pick a violated constraint.
        let xmax = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let violated = |i: usize, x: &[f64]| -> Option<f64> {
            let s = dot(ineq.normal(n, i), x) - ineq.rhs[i];
            (s < -slack_tol[i] * (1.0 + xmax)).then_some(s)
        };
        let mut chosen: Option<(usize, f64)> = None;
        while hint_cursor < hints.len() && chosen.is_none() {
            let i = hints[hint_cursor];
            hint_cursor += 1;
            if i < n_in && !in_working[i] && !excluded[i] {
                chosen = violated(i, &x).map(|s| (i, s));
            }
        }
        if chosen.is_none() {
            for i in 0..n_in {
                if in_working[i] || excluded[i] {
                    continue;
                }
                if let Some(s) = violated(i, &x) {
                    if chosen.is_none_or(|(_, best)| s < best) {
                        chosen = Some((i, s));
                    }
                }
            }
        }
        let Some((p, mut slack)) = chosen else {
            return finish(x, Outcome::Optimal, active, u, pivots);
        };
        let np = ineq.normal(n, p);
        let mut u_plus = 0.0;

        // Step 2: move until p is satisfied, dropping blocking constraints.
        loop {
            if pivots >= max_pivots {
                return finish(x, Outcome::MaxIter, active, u, pivots);
            }
            ws.project(np, &mut d);
            ws.primal_direction(&d, &mut z);
            ws.dual_direction(&d, &mut r);

            let mut partial = f64::INFINITY;
            let mut blocking = None;
            for k in n_eq_active..ws.iq {
                if r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < partial {
                        partial = ratio;
                        blocking = Some(k);
                    }
                }
            }
            let total: f64 = d.iter().map(|v| v * v).sum();
            let free: f64 = d[ws.iq..].iter().map(|v| v * v).sum();
            let curvature = dot(&z, np);
            let full = if free > 1e-14 * total && curvature > 0.0 {
                (-slack / curvature).max(0.0)
            } else {
                f64::INFINITY
            };
            let step = partial.min(full);
            if step.is_infinite() {
                return finish(x, Outcome::Infeasible, active, u, pivots);
            }
            pivots += 1;
            if full.is_infinite() {
                // dual step only
                for k in 0..ws.iq {
                    u[k] -= step * r[k];
                }
                u_plus += step;
                let pos = blocking.expect("finite partial step has a blocking constraint");
                in_working[active[pos] - n_eq] = false;
                active.remove(pos);
                u.remove(pos);
                ws.drop(pos);
                continue;
            }
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += step * zi;
            }
            for k in 0..ws.iq {
                u[k] -= step * r[k];
            }
            u_plus += step;
            if full <= partial {
                if ws.add(&mut d) {
                    active.push(n_eq + p);
                    u.push(u_plus);
                    in_working[p] = true;
                } else {
                    // numerically dependent: leave it out of the working set
                    let last = ws.iq - 1;
                    ws.drop(last);
                    excluded[p] = true;
                }
                break;
            }
            let pos = blocking.expect("partial step has a blocking constraint");
            in_working[active[pos] - n_eq] = false;
            active.remove(pos);
            u.remove(pos);
            ws.drop(pos);
            slack = dot(np, &x) - ineq.rhs[p];
        }
    }
}
