//! Centralized numerical tolerances.
//!
//! Every module reads its thresholds from a [`Tolerances`] bundle so that a
//! whole run can be tightened or loosened from one place. The bundle can be
//! overridden through `ETOC_TOL_*` environment variables (see
//! [`Tolerances::from_env`]).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Smallest admissible eigenvalue of a PSD weight (`>= -psd`).
    pub psd: f64,
    /// Smallest eigenvalue of a PD weight must exceed this.
    pub pd: f64,
    /// Dynamics residual `|x(t+1) - A x(t) - B u(t)|_inf`.
    pub dynamics: f64,
    /// Slack allowed in region membership `T_p x <= d`.
    pub membership: f64,
    /// An input with `|u|_inf` below this counts as zero.
    pub zero: f64,
    /// Relative cost tolerance (cost agreement and tie-breaking).
    pub cost: f64,
    /// Margin below the threshold at which a state counts as strictly inside the box.
    pub strict: f64,
    /// Maximum constraint violation accepted as feasible.
    pub feasibility: f64,
    /// KKT residual bound for an optimal QP result.
    pub kkt: f64,
    /// Relative residual bound for a factorized linear solve.
    pub linear: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            psd: 1e-9,
            pd: 1e-12,
            dynamics: 1e-7,
            membership: 1e-9,
            zero: 1e-9,
            cost: 1e-6,
            strict: 1e-9,
            feasibility: 1e-7,
            kkt: 1e-6,
            linear: 1e-8,
        }
    }
}

impl Tolerances {
    /// Defaults, with any `ETOC_TOL_<NAME>` environment variable applied on top.
    ///
    /// Recognized names: `PSD`, `PD`, `DYNAMICS`, `MEMBERSHIP`, `ZERO`, `COST`,
    /// `STRICT`, `FEASIBILITY`, `KKT`, `LINEAR`. Unparsable values are ignored.
    pub fn from_env() -> Self {
        Self::default().with_overrides(|name| std::env::var(format!("ETOC_TOL_{name}")).ok())
    }

    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        let fields: [(&str, &mut f64); 10] = [
            ("PSD", &mut self.psd),
            ("PD", &mut self.pd),
            ("DYNAMICS", &mut self.dynamics),
            ("MEMBERSHIP", &mut self.membership),
            ("ZERO", &mut self.zero),
            ("COST", &mut self.cost),
            ("STRICT", &mut self.strict),
            ("FEASIBILITY", &mut self.feasibility),
            ("KKT", &mut self.kkt),
            ("LINEAR", &mut self.linear),
        ];
        for (name, slot) in fields {
            if let Some(v) = lookup(name).and_then(|s| s.trim().parse::<f64>().ok()) {
                if v.is_finite() && v >= 0.0 {
                    *slot = v;
                }
            }
        }
        self
    }

    /// `a` and `b` agree to the relative cost tolerance.
    pub fn costs_agree(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.cost * a.abs().max(b.abs()).max(1.0)
    }
}
