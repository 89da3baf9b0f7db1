//! Instance files: TOML with row-major matrices.
//!
//! ```toml
//! A = [[0.9, 0.2], [0.8, 1.5]]
//! B = [[0.6], [0.8]]
//! Q = [[2.0, 0.0], [0.0, 2.0]]
//! R = [[5.0]]
//! P = [[2.0, 0.0], [0.0, 2.0]]
//! x0 = [0.0, -1.0]
//! eps = 0.25
//! N = 7
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use etoc::{Matrix, ProblemInstance, Tolerances, Vector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub eps: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let Some(first) = rows.first() else {
        bail!("field `{field}`: matrix has no rows");
    };
    let cols = first.len();
    if cols == 0 {
        bail!("field `{field}`: row 1 is empty");
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            bail!("field `{field}`: row {} has {} entries, expected {cols}", i + 1, row.len());
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            bail!("field `{field}`: entry ({}, {}) is not finite", i + 1, j + 1);
        }
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl InstanceFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_instance(inst: &ProblemInstance) -> Self {
        Self {
            a: rows_of(inst.a()),
            b: rows_of(inst.b()),
            q: rows_of(inst.q()),
            r: rows_of(inst.r()),
            p: rows_of(inst.p()),
            x0: inst.x0().iter().copied().collect(),
            eps: inst.eps(),
            horizon: inst.horizon(),
        }
    }

    pub fn build(&self, tol: &Tolerances) -> Result<ProblemInstance> {
        let a = matrix("A", &self.a)?;
        let b = matrix("B", &self.b)?;
        let q = matrix("Q", &self.q)?;
        let r = matrix("R", &self.r)?;
        let p = matrix("P", &self.p)?;
        if let Some(i) = self.x0.iter().position(|v| !v.is_finite()) {
            bail!("field `x0`: entry {} is not finite", i + 1);
        }
        let x0 = Vector::from_column_slice(&self.x0);
        Ok(ProblemInstance::with_tolerances(a, b, q, r, p, x0, self.eps, self.horizon, tol)?)
    }
}
