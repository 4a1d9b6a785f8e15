//! Numerical checks of the a priori estimates on computed solutions.
//!
//! Every check returns [`EstimateEntry`] records `{name, lhs, rhs,
//! satisfied, slack}` with `satisfied ⇔ lhs ≤ rhs + tolerance` and
//! `slack = rhs − lhs`. Quantities whose bounding constant is not explicit
//! (the Pogorelov-type estimates) are reported with `satisfied = None`.

mod barriers;
mod boundary;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::geometry::make_jet;
use crate::grid::{boundary_geometry, fd_gradient, fd_hessian, GridField};
use crate::solver::{master_jet, operators, Equation, ProblemSpec};
use crate::symfun;

pub use barriers::{
    barrier_delta_sweep, build_barriers, check_barrier_inequalities, default_barrier_params, eta0,
    BarrierBundle, BarrierParams, BarrierPart, BarrierPoint, SweepRun,
};
pub use boundary::{boundary_normal_quantities, BoundaryQuantity};

/// One verified (or reported) inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateEntry {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `None` for report-only quantities.
    pub satisfied: Option<bool>,
    pub slack: f64,
    pub tolerance: f64,
    pub params: BTreeMap<String, f64>,
}

impl EstimateEntry {
    pub fn check(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let satisfied = lhs <= rhs + tolerance;
        Self {
            name: name.into(),
            lhs,
            rhs,
            satisfied: Some(satisfied),
            slack: rhs - lhs,
            tolerance,
            params: BTreeMap::new(),
        }
    }

    pub fn report(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            lhs: value,
            rhs: f64::NAN,
            satisfied: None,
            slack: f64::NAN,
            tolerance: 0.0,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn passed(&self) -> bool {
        self.satisfied != Some(false)
    }
}

/// A list of entries plus the constants that went into them.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EstimateReport {
    pub entries: Vec<EstimateEntry>,
    pub constants: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub fn extend(&mut self, entries: impl IntoIterator<Item = EstimateEntry>) {
        self.entries.extend(entries);
    }

    pub fn constant(&mut self, key: &str, value: f64) {
        self.constants.insert(key.to_string(), value);
    }

    /// True when no pass/fail entry failed.
    pub fn all_satisfied(&self) -> bool {
        self.entries.iter().all(EstimateEntry::passed)
    }

    pub fn get(&self, name: &str) -> Option<&EstimateEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn same_grid(a: &GridField, b: &GridField) -> Result<()> {
    if !a.same_grid(b) || a.values().len() != b.values().len() {
        return Err(Error::GridMismatch("fields live on different grids".into()));
    }
    Ok(())
}

pub(crate) fn boundary_sample_count(n: usize) -> usize {
    if n == 2 {
        64
    } else {
        200
    }
}

/// Inner-normal derivative at each sampled boundary point, by local fit.
fn normal_derivatives(u: &GridField) -> Result<Vec<f64>> {
    let domain = u.grid().domain();
    let mut out = Vec::new();
    for bp in boundary_geometry(domain, boundary_sample_count(domain.dim()))? {
        let (_, g, _) = u.local_fit(&bp.x)?;
        out.push(g.iter().zip(&bp.inner_normal).map(|(a, b)| a * b).sum());
    }
    Ok(out)
}

fn max_grad_norm(u: &GridField) -> f64 {
    fd_gradient(u)
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Sub/super ordering `u̲ ≤ u ≤ ū` at every node (tolerance
/// `1e−6(1 + ‖u‖∞)`), the inner-normal derivative ordering at sampled
/// boundary points (tolerance `1e−6(1 + max|Du|) + h²`, covering the
/// local-fit error), and the resulting `C⁰` bound.
pub fn check_comparison(
    u: &GridField,
    usub: &GridField,
    usuper: &GridField,
) -> Result<Vec<EstimateEntry>> {
    same_grid(u, usub)?;
    same_grid(u, usuper)?;
    let h = u.grid().h();
    let tol = 1e-6 * (1.0 + u.max_abs());
    let lhs = (0..u.values().len())
        .map(|k| (usub.value(k) - u.value(k)).max(u.value(k) - usuper.value(k)))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![EstimateEntry::check("comparison", lhs, 0.0, tol)];

    let (dl, du, dh) = (
        normal_derivatives(usub)?,
        normal_derivatives(u)?,
        normal_derivatives(usuper)?,
    );
    let lhs = (0..du.len())
        .map(|i| (dl[i] - du[i]).max(du[i] - dh[i]))
        .fold(f64::NEG_INFINITY, f64::max);
    let tol_n = 1e-6 * (1.0 + max_grad_norm(u)) + h * h;
    out.push(EstimateEntry::check("comparison_normal_derivative", lhs, 0.0, tol_n).with("h", h));

    let rhs = usub.max_abs().max(usuper.max_abs());
    out.push(EstimateEntry::check("c0_bound", u.max_abs(), rhs, tol));
    Ok(out)
}

/// Boundary gradient bound `sup_∂Ω |Du| ≤ max(sup_∂Ω |Du̲|, sup_∂Ω |Dū|) ≤ 1 − θ`.
pub fn check_boundary_gradient(
    u: &GridField,
    usub: &GridField,
    usuper: &GridField,
) -> Result<Vec<EstimateEntry>> {
    same_grid(u, usub)?;
    same_grid(u, usuper)?;
    let domain = u.grid().domain();
    let h = u.grid().h();
    let sup_grad = |f: &GridField| -> Result<f64> {
        let mut m: f64 = 0.0;
        for bp in boundary_geometry(domain, boundary_sample_count(domain.dim()))? {
            let (_, g, _) = f.local_fit(&bp.x)?;
            m = m.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        Ok(m)
    };
    let (a, b, c) = (sup_grad(u)?, sup_grad(usub)?, sup_grad(usuper)?);
    let rhs = b.max(c);
    Ok(vec![
        EstimateEntry::check("boundary_gradient", a, rhs, 1e-6 * (1.0 + rhs) + h * h),
        EstimateEntry::check("boundary_spacelike", rhs, 1.0, 0.0).with("theta", 1.0 - rhs),
    ])
}

/// Samples `inf ψ`, `sup ψ`, `sup |D_x ψ|` on nodes and boundary trace × nine
/// levels of `z ∈ [−μ₀, μ₀]`.
pub fn psi_bounds(u: &GridField, psi: &Expr, mu0: f64) -> (f64, f64, f64) {
    let grid = u.grid();
    let n = grid.dim();
    let dpsi = psi.gradient(n);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut g: f64 = 0.0;
    let pts = (0..grid.node_count())
        .map(|k| grid.node_coords(k))
        .chain(grid.boundary_points().iter().cloned());
    for x in pts {
        for k in 0..9 {
            let z = -mu0 + 2.0 * mu0 * k as f64 / 8.0;
            let v = psi.eval(&x, z);
            lo = lo.min(v);
            hi = hi.max(v);
            g = g.max(
                dpsi.iter()
                    .map(|d| d.eval(&x, z).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    (lo, hi, g)
}

/// The gradient bound
/// `sup_Ω̄ w̃ ≤ exp((sup|D_xψ| / (n inf ψ))·2 sup_∂Ω|φ| + diam Ω)·sup_∂Ω w̃`
/// with `w̃ = 1/√(1 − |Du|²)`, plus `θ₀ = 1 − max|Du|`.
pub fn check_gradient_bound(
    u: &GridField,
    psi: &Expr,
    phi: &Expr,
    mu0: f64,
) -> Result<Vec<EstimateEntry>> {
    let grid = u.grid();
    let domain = grid.domain();
    let n = grid.dim();
    let wt = |g: &[f64]| -> Result<f64> {
        let s: f64 = g.iter().map(|v| v * v).sum();
        if s >= 1.0 {
            return Err(Error::NotSpacelike(s.sqrt()));
        }
        Ok(1.0 / (1.0 - s).sqrt())
    };
    let mut sup_interior: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for g in fd_gradient(u) {
        sup_interior = sup_interior.max(wt(&g)?);
        max_grad = max_grad.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let mut sup_boundary: f64 = 0.0;
    let mut sup_phi: f64 = 0.0;
    for bp in boundary_geometry(domain, boundary_sample_count(n))? {
        let (_, g, _) = u.local_fit(&bp.x)?;
        sup_boundary = sup_boundary.max(wt(&g)?);
        sup_phi = sup_phi.max(phi.eval(&bp.x, 0.0).abs());
    }
    let (psi_inf, _, psi_grad) = psi_bounds(u, psi, mu0);
    if !(psi_inf > 0.0) {
        return Err(Error::Config(format!(
            "psi must be positive, inf = {psi_inf}"
        )));
    }
    let ratio = psi_grad / (n as f64 * psi_inf);
    let diam = domain.diameter();
    let rhs = (ratio * 2.0 * sup_phi + diam).exp() * sup_boundary;
    let lhs = sup_interior.max(sup_boundary);
    let theta0 = 1.0 - max_grad;
    Ok(vec![
        EstimateEntry::check("gradient_bound", lhs, rhs, 0.0)
            .with("sup_grad_psi", psi_grad)
            .with("inf_psi", psi_inf)
            .with("B", ratio)
            .with("sup_boundary_phi", sup_phi)
            .with("diam", diam)
            .with("sup_boundary_w_tilde", sup_boundary),
        EstimateEntry::check("spacelike_theta0", max_grad, 1.0, 0.0).with("theta0", theta0),
    ])
}

/// `ζ^α ‖D²u‖_max` with `ζ = φ̃ − u` for each `α`, and the global ratio
/// `sup_Ω|D²u| / (1 + sup_∂Ω|D²u|)`. Report-only.
pub fn pogorelov_report(
    u: &GridField,
    phi_tilde: &Expr,
    alphas: &[f64],
) -> Result<Vec<EstimateEntry>> {
    let grid = u.grid();
    let n = grid.dim();
    let h2 = grid.h() * grid.h();
    let grad = phi_tilde.gradient(n);
    let hess = phi_tilde.hessian(n);
    for k in 0..grid.node_count() {
        let x = grid.node_coords(k);
        let zeta = phi_tilde.eval(&x, 0.0) - u.value(k);
        if zeta < -h2 {
            return Err(Error::Config(format!(
                "phi_tilde > u fails at {x:?} (difference {zeta:e})"
            )));
        }
        let g: f64 = grad
            .iter()
            .map(|d| d.eval(&x, 0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        if g >= 1.0 {
            return Err(Error::Config(format!(
                "phi_tilde is not spacelike at {x:?}"
            )));
        }
        let hm = nalgebra::DMatrix::from_fn(n, n, |i, j| hess[i][j].eval(&x, 0.0));
        let e = hm
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if e < -1e-12 {
            return Err(Error::Config(format!("phi_tilde is not convex at {x:?}")));
        }
    }
    for (i, x) in grid.boundary_points().iter().enumerate() {
        let diff = phi_tilde.eval(x, 0.0) - u.boundary_values()[i];
        if diff.abs() > h2 {
            return Err(Error::Config(format!(
                "phi_tilde = u fails on the boundary at {x:?}"
            )));
        }
    }
    let hessians = fd_hessian(u);
    let hmax = |m: &nalgebra::DMatrix<f64>| m.amax();
    let mut out = Vec::new();
    for &alpha in alphas {
        let mut best: f64 = 0.0;
        for (m, hs) in hessians.iter().enumerate() {
            let x = grid.master_coords(m);
            let k = grid.masters()[m];
            let zeta = (phi_tilde.eval(&x, 0.0) - u.value(k)).max(0.0);
            best = best.max(zeta.powf(alpha) * hmax(hs));
        }
        out.push(
            EstimateEntry::report(format!("pogorelov_alpha_{alpha}"), best).with("alpha", alpha),
        );
    }
    let interior = hessians.iter().map(hmax).fold(0.0, f64::max);
    let mut bmax: f64 = 0.0;
    for bp in boundary_geometry(grid.domain(), boundary_sample_count(n))? {
        let (_, _, hs) = u.local_fit(&bp.x)?;
        bmax = bmax.max(hs.amax());
    }
    out.push(
        EstimateEntry::report("global_reduction", interior / (1.0 + bmax))
            .with("sup_interior_hessian", interior)
            .with("sup_boundary_hessian", bmax),
    );
    Ok(out)
}

/// Refinement stability of a report-only quantity: passes when the
/// fine/coarse ratio lies in `[0.5, 2]` (encoded as `|log₂ ratio| ≤ 1`).
pub fn refinement_check(name: &str, coarse: f64, fine: f64) -> EstimateEntry {
    let ratio = fine / coarse;
    EstimateEntry::check(format!("{name}_refinement"), ratio.log2().abs(), 1.0, 0.0)
        .with("coarse", coarse)
        .with("fine", fine)
        .with("ratio", ratio)
}

/// Nodewise `K_η^{1/n} ≤ ((n−1)/n) H` on the discrete jets.
pub fn check_am_gm(u: &GridField) -> Result<EstimateEntry> {
    let grid = u.grid();
    let n = grid.dim() as f64;
    let vals = u.master_values();
    let mut worst = f64::NEG_INFINITY;
    for m in 0..grid.master_count() {
        let (du, d2u) = master_jet(grid, m, &vals, u.boundary_values());
        let jet = make_jet(&du, &d2u)?;
        let k = symfun::f_eta(jet.kappa());
        if !symfun::in_gamma(jet.kappa()) {
            return Err(Error::OutsideCone(symfun::gamma_margin(jet.kappa())));
        }
        let hm: f64 = jet.kappa().iter().sum();
        worst = worst.max((k.powf(1.0 / n) - (n - 1.0) / n * hm) / (1.0 + hm.abs()));
    }
    Ok(EstimateEntry::check("am_gm", worst, 0.0, 1e-12))
}

/// `max |Op[u] − ψ(x, u)|` over equation nodes, for detecting corrupted
/// or unconverged fields.
pub fn check_residual(problem: &ProblemSpec, u: &GridField, tol: f64) -> Result<EstimateEntry> {
    let grid = u.grid();
    let vals = u.master_values();
    let guards = operators::Guards {
        theta_min: 1e-12,
        cone: 0.0,
    };
    let mut worst: f64 = 0.0;
    for m in 0..grid.master_count() {
        let (du, d2u) = master_jet(grid, m, &vals, u.boundary_values());
        let x = grid.master_coords(m);
        let r = match operators::evaluate(problem.equation, &du, &d2u, &guards) {
            Ok(op) => (op - problem.psi.eval(&x, vals[m])).abs(),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(r);
    }
    let name = match problem.equation {
        Equation::KEta => "residual_k_eta",
        Equation::LorentzGauss => "residual_lorentz_gauss",
        Equation::MeanCurvature => "residual_mean_curvature",
    };
    Ok(EstimateEntry::check(name, worst, tol, 0.0))
}

/// `W̃ = 1 − e^{−bW}`.
pub fn w_tilde(b: f64, w: f64) -> f64 {
    -(-b * w).exp_m1()
}

/// Checks on sampled `W` that `W̃` is nondecreasing and bounded above by 1.
pub fn check_w_tilde(b: f64, samples: &[f64]) -> EstimateEntry {
    let mut ws = samples.to_vec();
    ws.sort_by(f64::total_cmp);
    let vals: Vec<f64> = ws.iter().map(|&w| w_tilde(b, w)).collect();
    let mono = vals
        .windows(2)
        .map(|p| p[0] - p[1])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let bound = vals
        .iter()
        .map(|v| v - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    EstimateEntry::check("w_tilde_monotone_bounded", mono.max(bound), 0.0, 0.0).with("b", b)
}

/// `ψ_z` sampled at the solution, for reports.
pub fn psi_z_min(u: &GridField, psi: &Expr) -> f64 {
    let grid = u.grid();
    let dz = psi.diff(Var::Z);
    (0..grid.node_count())
        .map(|k| dz.eval(&grid.node_coords(k), u.value(k)))
        .fold(f64::INFINITY, f64::min)
}
