//! Symmetric indefinite factorization `P M P' = L D L'` (Bunch-Kaufman
//! pivoting) for KKT-type systems that are factored once and solved many
//! times.

use crate::error::{Error, Result};
use crate::model::{Matrix, Vector};

const PIVOT_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
enum Block {
    One(f64),
    /// Symmetric 2x2 block stored as `(a, b, c)` for `[a b; b c]`.
    Two(f64, f64, f64),
}

#[derive(Debug, Clone)]
pub struct KktCache {
    /// `perm[i]` is the original row placed at position `i`.
    perm: Vec<usize>,
    /// Unit lower-triangular factor.
    l: Matrix,
    /// Diagonal blocks in order; a `Two` covers two consecutive positions.
    blocks: Vec<Block>,
    original: Matrix,
}

impl KktCache {
    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of negative eigenvalues (by Sylvester's law of inertia).
    pub fn negative_eigenvalues(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match *b {
                Block::One(d) => usize::from(d < 0.0),
                Block::Two(a, b, c) => {
                    let det = a * c - b * b;
                    if det < 0.0 {
                        1
                    } else if a + c < 0.0 {
                        2
                    } else {
                        0
                    }
                }
            })
            .sum()
    }
}

fn swap_symmetric(w: &mut Matrix, i: usize, j: usize) {
    if i != j {
        w.swap_rows(i, j);
        w.swap_columns(i, j);
    }
}

pub fn kkt_factorize(m: &Matrix) -> Result<KktCache> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!("KKT matrix is {}x{}", n, m.ncols())));
    }
    let alpha = (1.0 + 17f64.sqrt()) / 8.0;
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let tol = PIVOT_TOL * scale;

    let mut w = m.clone();
    let mut l = Matrix::identity(n, n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut blocks = Vec::new();

    let mut k = 0;
    while k < n {
        let akk = w[(k, k)].abs();
        let (mut r, mut lambda) = (k, 0.0);
        for i in (k + 1)..n {
            if w[(i, k)].abs() > lambda {
                lambda = w[(i, k)].abs();
                r = i;
            }
        }
        if akk.max(lambda) <= tol {
            return Err(Error::Singular { pivot: akk.max(lambda), column: perm[k] });
        }

        let two_by_two = if akk >= alpha * lambda {
            false
        } else {
            let sigma = (k..n).filter(|&j| j != r).map(|j| w[(r, j)].abs()).fold(0.0, f64::max);
            if akk * sigma >= alpha * lambda * lambda {
                false
            } else if w[(r, r)].abs() >= alpha * sigma {
                swap_symmetric(&mut w, k, r);
                l.view_mut((0, 0), (n, k)).swap_rows(k, r);
                perm.swap(k, r);
                false
            } else {
                swap_symmetric(&mut w, k + 1, r);
                l.view_mut((0, 0), (n, k)).swap_rows(k + 1, r);
                perm.swap(k + 1, r);
                true
            }
        };

        if !two_by_two {
            let d = w[(k, k)];
            for i in (k + 1)..n {
                l[(i, k)] = w[(i, k)] / d;
            }
            for j in (k + 1)..n {
                let ljk = l[(j, k)];
                if ljk == 0.0 {
                    continue;
                }
                for i in j..n {
                    let v = w[(i, j)] - l[(i, k)] * d * ljk;
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
            blocks.push(Block::One(d));
            k += 1;
        } else {
            let (a, b, c) = (w[(k, k)], w[(k + 1, k)], w[(k + 1, k + 1)]);
            let det = a * c - b * b;
            if det.abs() <= tol * tol {
                return Err(Error::Singular { pivot: det.abs().sqrt(), column: perm[k] });
            }
            // rows of C E^-1
            for i in (k + 2)..n {
                let (c0, c1) = (w[(i, k)], w[(i, k + 1)]);
                l[(i, k)] = (c0 * c - c1 * b) / det;
                l[(i, k + 1)] = (c1 * a - c0 * b) / det;
            }
            for j in (k + 2)..n {
                let (cj0, cj1) = (w[(j, k)], w[(j, k + 1)]);
                for i in j..n {
                    let v = w[(i, j)] - l[(i, k)] * cj0 - l[(i, k + 1)] * cj1;
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
            blocks.push(Block::Two(a, b, c));
            k += 2;
        }
    }
    Ok(KktCache { perm, l, blocks, original: m.clone() })
}

fn apply_inverse(cache: &KktCache, rhs: &Vector) -> Vector {
    let n = cache.dim();
    let mut y = Vector::from_fn(n, |i, _| rhs[cache.perm[i]]);
    for j in 0..n {
        let yj = y[j];
        if yj != 0.0 {
            for i in (j + 1)..n {
                y[i] -= cache.l[(i, j)] * yj;
            }
        }
    }
    let mut k = 0;
    for block in &cache.blocks {
        match *block {
            Block::One(d) => {
                y[k] /= d;
                k += 1;
            }
            Block::Two(a, b, c) => {
                let det = a * c - b * b;
                let (y0, y1) = (y[k], y[k + 1]);
                y[k] = (c * y0 - b * y1) / det;
                y[k + 1] = (a * y1 - b * y0) / det;
                k += 2;
            }
        }
    }
    for j in (0..n).rev() {
        let mut s = y[j];
        for i in (j + 1)..n {
            s -= cache.l[(i, j)] * y[i];
        }
        y[j] = s;
    }
    let mut x = Vector::zeros(n);
    for i in 0..n {
        x[cache.perm[i]] = y[i];
    }
    x
}

/// Solves `M x = rhs` with up to two steps of iterative refinement.
///
/// Fails with [`Error::Singular`] if the residual stays above
/// `1e-8 * max(1, |rhs|)`.
pub fn kkt_solve(cache: &KktCache, rhs: &Vector) -> Result<Vector> {
    if rhs.len() != cache.dim() {
        return Err(Error::Dimension(format!("right-hand side has length {}, expected {}", rhs.len(), cache.dim())));
    }
    let bound = RESIDUAL_TOL * rhs.norm().max(1.0);
    let mut x = apply_inverse(cache, rhs);
    for _ in 0..2 {
        let residual = rhs - &cache.original * &x;
        if residual.norm() <= bound {
            return Ok(x);
        }
        x += apply_inverse(cache, &residual);
    }
    let residual = (rhs - &cache.original * &x).norm();
    if residual <= bound {
        Ok(x)
    } else {
        Err(Error::Singular { pivot: residual, column: 0 })
    }
}
