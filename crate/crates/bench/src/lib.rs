//! Shared fixtures for the kernel benchmarks.

use nalgebra::DMatrix;
use spacelike_core::{DomainSpec, Equation, Expr, ProblemSpec};

/// Deterministic points of the cone Γ: `λ` spread over `(0.1, 10)`.
pub fn cone_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|s| {
            let lam: Vec<f64> = (0..n)
                .map(|i| 0.1 + 9.9 * frac((s * n + i) as f64 * 0.618_033_988_75))
                .collect();
            let total = lam.iter().sum::<f64>() / (n - 1) as f64;
            lam.iter().map(|l| total - l).collect()
        })
        .collect()
}

/// Jets of the unit hyperboloid `u = sqrt(1 + |x|²)` at `count` points of the disk of radius 0.8.
pub fn hyperboloid_jets(n: usize, count: usize) -> Vec<(Vec<f64>, DMatrix<f64>)> {
    (0..count)
        .map(|s| {
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    0.8 / (n as f64).sqrt() * (2.0 * frac((s * n + i) as f64 * 0.754_877_666) - 1.0)
                })
                .collect();
            let u = (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let du = x.iter().map(|v| v / u).collect();
            let d2u = DMatrix::from_fn(
                n,
                n,
                |i, j| if i == j { 1.0 / u } else { 0.0 } - x[i] * x[j] / u.powi(3),
            );
            (du, d2u)
        })
        .collect()
}

/// The hyperboloid Dirichlet problem on the disk of radius 0.5, with the
/// right-hand side that makes the hyperboloid exact for `eq`.
pub fn hyperboloid_problem(eq: Equation) -> ProblemSpec {
    let psi = if eq == Equation::MeanCurvature {
        2.0
    } else {
        1.0
    };
    ProblemSpec::new(
        disk(),
        eq,
        Expr::constant(psi),
        Expr::parse("sqrt(1+x1^2+x2^2)").unwrap(),
    )
    .unwrap()
}

pub fn disk() -> DomainSpec {
    DomainSpec::disk(vec![0.0, 0.0], 0.5)
}

fn frac(v: f64) -> f64 {
    v - v.floor()
}
