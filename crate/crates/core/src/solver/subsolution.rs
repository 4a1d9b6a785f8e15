use std::sync::Arc;

use crate::expr::Expr;
use crate::grid::{Grid, GridField};

use super::operators::{self, Equation};
use super::{master_jet, SolveError, SolverConfig};

/// `v = φ + c·q` with `q = F/2`, `F` the domain's level function (so
/// `q = (|x|² − 1)/2` on the unit disk and `q = 0` on `∂Ω`).
#[derive(Debug, Clone)]
pub struct QuadraticSubsolution {
    pub field: GridField,
    pub c: f64,
    /// Smallest `c` with `K_η[v] ≥ psi_sup` at every equation node.
    pub c_min: f64,
    /// Largest `c` keeping `|Dv| ≤ 1 − θ_min` on nodes and boundary trace.
    pub c_max: f64,
}

fn field_for(grid: &Arc<Grid>, phi: &Expr, c: f64) -> GridField {
    let d = grid.domain();
    let values = (0..grid.node_count())
        .map(|k| {
            let x = grid.node_coords(k);
            phi.eval(&x, 0.0) + c * 0.5 * d.level(&x)
        })
        .collect();
    let bdry = grid
        .boundary_points()
        .iter()
        .map(|x| phi.eval(x, 0.0))
        .collect();
    GridField::from_parts(grid, values, bdry).expect("sizes match the grid")
}

fn spacelike(grid: &Arc<Grid>, phi: &Expr, c: f64, config: &SolverConfig) -> bool {
    let limit = 1.0 - config.theta_min;
    let n = grid.dim();
    let dphi = phi.gradient(n);
    let d = grid.domain();
    let on_boundary = grid.boundary_points().iter().all(|x| {
        let gq = d.level_gradient(x);
        let norm2: f64 = (0..n)
            .map(|i| (dphi[i].eval(x, 0.0) + 0.5 * c * gq[i]).powi(2))
            .sum();
        norm2.sqrt() <= limit
    });
    if !on_boundary {
        return false;
    }
    let f = field_for(grid, phi, c);
    let u = f.master_values();
    (0..grid.master_count()).all(|m| {
        let (du, _) = master_jet(grid, m, &u, f.boundary_values());
        du.iter().map(|v| v * v).sum::<f64>().sqrt() <= limit
    })
}

/// Smallest `K_η[v]` over equation nodes, or `None` outside the guards.
fn min_k(grid: &Arc<Grid>, phi: &Expr, c: f64, config: &SolverConfig) -> Option<f64> {
    let f = field_for(grid, phi, c);
    let u = f.master_values();
    let guards = config.guards();
    let mut best = f64::INFINITY;
    for m in 0..grid.master_count() {
        let (du, d2u) = master_jet(grid, m, &u, f.boundary_values());
        best = best.min(operators::evaluate(Equation::KEta, &du, &d2u, &guards).ok()?);
    }
    Some(best)
}

/// Tunes `c` by bisection so that `v = φ + c·q` is spacelike, admissible and
/// has `K_η[v] ≥ psi_sup`; returns the midpoint of the feasible interval.
pub fn build_quadratic_subsolution(
    grid: &Arc<Grid>,
    phi: &Expr,
    psi_sup: f64,
    config: &SolverConfig,
) -> Result<QuadraticSubsolution, SolveError> {
    config.validate()?;
    if !(psi_sup.is_finite() && psi_sup > 0.0) {
        return Err(SolveError::NoSubsolution(format!(
            "psi_sup must be positive and finite, got {psi_sup}"
        )));
    }
    if !spacelike(grid, phi, 0.0, config) {
        return Err(SolveError::NoSubsolution(
            "phi itself violates the spacelike guard".into(),
        ));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while spacelike(grid, phi, hi, config) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e8 {
            break;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if spacelike(grid, phi, mid, config) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c_max = lo;
    let ok = |c: f64| min_k(grid, phi, c, config).is_some_and(|k| k >= psi_sup);
    if !ok(c_max) {
        let reach = min_k(grid, phi, c_max, config).unwrap_or(0.0);
        return Err(SolveError::NoSubsolution(format!(
            "psi_sup = {psi_sup} exceeds the smallest K_eta = {reach} reachable while spacelike (c = {c_max})"
        )));
    }
    let (mut lo, mut hi) = (0.0, c_max);
    if ok(0.0) {
        hi = 0.0;
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let c_min = hi;
    let c = 0.5 * (c_min + c_max);
    if !(ok(c) && spacelike(grid, phi, c, config)) {
        return Err(SolveError::NoSubsolution(format!(
            "feasible set in c is not an interval between {c_min} and {c_max}"
        )));
    }
    Ok(QuadraticSubsolution {
        field: field_for(grid, phi, c),
        c,
        c_min,
        c_max,
    })
}
