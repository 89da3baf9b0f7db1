//! Reference instances used throughout the test-suite and the CLI presets.

use nalgebra::{dmatrix, dvector};

use crate::model::{Matrix, ProblemInstance, Vector};

/// Second-order unstable plant with `x0 = [0, -1]`, `eps = 0.25`,
/// `Q = P = 2I`, `R = 5`, `N = 7`.
pub fn example2() -> ProblemInstance {
    ProblemInstance::new(
        second_order_a(),
        second_order_b(),
        Matrix::identity(2, 2) * 2.0,
        dmatrix![5.0],
        Matrix::identity(2, 2) * 2.0,
        dvector![0.0, -1.0],
        0.25,
        7,
    )
    .expect("benchmark instance is valid")
}

pub fn second_order_a() -> Matrix {
    dmatrix![0.9, 0.2; 0.8, 1.5]
}

pub fn second_order_b() -> Matrix {
    dmatrix![0.6; 0.8]
}

/// Twelve initial states `1.2 [sin(pi k / 6), cos(pi k / 6)]`, `k = 0..11`.
pub fn ring_initial_states() -> Vec<Vector> {
    (0..12)
        .map(|k| {
            let angle = std::f64::consts::PI * k as f64 / 6.0;
            dvector![1.2 * angle.sin(), 1.2 * angle.cos()]
        })
        .collect()
}

pub fn third_order_a() -> Matrix {
    dmatrix![
        0.53, -2.17, 0.62;
        0.22, -0.06, 0.51;
        -0.92, -1.01, 1.69
    ]
}

pub fn third_order_b() -> Matrix {
    dmatrix![0.4; 0.7; 0.9]
}

/// Third-order unstable plant with `Q = P = 2I`, `R = 5`.
pub fn third_order(x0: Vector, eps: f64, horizon: usize) -> ProblemInstance {
    ProblemInstance::new(
        third_order_a(),
        third_order_b(),
        Matrix::identity(3, 3) * 2.0,
        dmatrix![5.0],
        Matrix::identity(3, 3) * 2.0,
        x0,
        eps,
        horizon,
    )
    .expect("benchmark instance is valid")
}

/// Initial state of the receding-horizon reference run.
pub fn third_order_mpc_x0() -> Vector {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    dvector![0.0, h, -h]
}

/// `count` roughly equidistant unit vectors `[sin t cos p, sin t sin p, cos t]`
/// with `p` in `[0, pi]` (second coordinate non-negative).
///
/// Equal-area Fibonacci lattice on the hemisphere around the second axis.
pub fn half_sphere(count: usize) -> Vec<Vector> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = (i as f64 + 0.5) / count as f64;
            let radius = (1.0 - y * y).sqrt();
            let angle = golden * i as f64;
            dvector![radius * angle.cos(), y, radius * angle.sin()]
        })
        .collect()
}
