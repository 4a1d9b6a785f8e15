use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::expr::{self, Expr, Var};
use crate::grid::{boundary_geometry, DomainSpec, Grid, GridField};

use super::operators::{lorentz_gauss_scale, Equation};
use super::subsolution::{build_quadratic_subsolution, QuadraticSubsolution};
use super::{
    solve_k_eta, solve_lorentz_gauss, solve_mean_curvature, ProblemSpec, SolveError, SolveResult,
    SolverConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsolutionRoute {
    Quadratic,
    LorentzGauss,
}

/// Sampled data behind the existence hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub mu0: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub psi_z_min: f64,
    /// `sup |D_x ψ|` over the samples.
    pub psi_grad_max: f64,
    /// `max |∂φ|` (tangential gradient) over sampled boundary points.
    pub boundary_slope_max: f64,
}

fn boundary_samples(domain: &DomainSpec) -> usize {
    if domain.dim() == 2 {
        512
    } else {
        2000
    }
}

/// Samples `ψ > 0` and `ψ_z ≥ 0` on `Ω̄ × [−μ₀, μ₀]` (nodes, boundary trace,
/// nine levels of `z`) and `|∂φ| < 1` on `∂Ω`.
pub fn validate_hypotheses(
    grid: &Grid,
    psi: &Expr,
    phi: &Expr,
    mu0: f64,
) -> Result<HypothesisReport, SolveError> {
    let n = grid.dim();
    let psi_z = psi.diff(Var::Z);
    let dpsi = psi.gradient(n);
    let levels: Vec<f64> = (0..9).map(|k| -mu0 + 2.0 * mu0 * k as f64 / 8.0).collect();
    let points: Vec<Vec<f64>> = (0..grid.node_count())
        .map(|k| grid.node_coords(k))
        .chain(grid.boundary_points().iter().cloned())
        .collect();
    let mut rep = HypothesisReport {
        mu0,
        psi_min: f64::INFINITY,
        psi_max: f64::NEG_INFINITY,
        psi_z_min: f64::INFINITY,
        psi_grad_max: 0.0,
        boundary_slope_max: 0.0,
    };
    for x in &points {
        for &z in &levels {
            let v = psi.eval(x, z);
            let vz = psi_z.eval(x, z);
            if !(v > 0.0) {
                return Err(SolveError::Hypothesis(format!(
                    "psi > 0 fails: psi({x:?}, {z}) = {v}"
                )));
            }
            if !(vz >= 0.0) {
                return Err(SolveError::Hypothesis(format!(
                    "psi_z >= 0 fails (ψ_z ≥ 0 is required): psi_z({x:?}, {z}) = {vz}"
                )));
            }
            rep.psi_min = rep.psi_min.min(v);
            rep.psi_max = rep.psi_max.max(v);
            rep.psi_z_min = rep.psi_z_min.min(vz);
            let g: f64 = dpsi
                .iter()
                .map(|d| d.eval(x, z).powi(2))
                .sum::<f64>()
                .sqrt();
            rep.psi_grad_max = rep.psi_grad_max.max(g);
        }
    }
    let dphi = phi.gradient(n);
    for bp in boundary_geometry(grid.domain(), boundary_samples(grid.domain()))? {
        let g: Vec<f64> = dphi.iter().map(|d| d.eval(&bp.x, 0.0)).collect();
        let normal_part: f64 = g.iter().zip(&bp.inner_normal).map(|(a, b)| a * b).sum();
        let tangential: f64 = g
            .iter()
            .zip(&bp.inner_normal)
            .map(|(a, b)| (a - normal_part * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if !tangential.is_finite() || tangential >= 1.0 {
            return Err(SolveError::Hypothesis(format!(
                "|∂φ| < 1 on ∂Ω fails: tangential slope {tangential} at {:?}",
                bp.x
            )));
        }
        rep.boundary_slope_max = rep.boundary_slope_max.max(tangential);
    }
    Ok(rep)
}

/// Outputs of the supersolution → subsolution → `K_η` chain.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub grid: Arc<Grid>,
    pub supersolution: SolveResult,
    pub subsolution: GridField,
    /// Set for the Lorentz-Gauss route.
    pub subsolution_solve: Option<SolveResult>,
    /// Set for the quadratic route.
    pub quadratic: Option<QuadraticSubsolution>,
    pub solution: SolveResult,
    pub hypotheses: HypothesisReport,
}

/// Runs the full chain on `Ω` at spacing `h`:
///
/// 1. `H[ū] = (n/(n−1)) ψ^{1/n}(x, ū)` gives the supersolution;
/// 2. `μ₀ = max(‖φ‖∞, ‖ū‖∞)` and the hypotheses are rechecked;
/// 3. the subsolution comes from `det D²u/w^{n+2} = ψ/(n−1)^n` or from the
///    quadratic construction with `psi_sup = sup ψ`;
/// 4. `K_η[u] = ψ(x, u)` is solved by continuation from the subsolution.
pub fn run_pipeline(
    domain: &DomainSpec,
    psi: &Expr,
    phi: &Expr,
    h: f64,
    route: SubsolutionRoute,
    config: &SolverConfig,
) -> Result<PipelineResult, SolveError> {
    config.validate()?;
    let problem = ProblemSpec::new(domain.clone(), Equation::KEta, psi.clone(), phi.clone())?;
    let grid = Grid::build(domain, h)?;
    let n = domain.dim();

    let phi_field = GridField::from_fn(&grid, |x| phi.eval(x, 0.0));
    validate_hypotheses(&grid, psi, phi, phi_field.max_abs())?;

    let nf = n as f64;
    let rhs = expr::mul(
        Expr::constant(nf / (nf - 1.0)),
        expr::pow(psi.clone(), Expr::constant(1.0 / nf)),
    );
    let sup_problem = problem.with_equation(Equation::MeanCurvature, rhs);
    let supersolution = solve_mean_curvature(&sup_problem, &grid, config)?;

    let mu0 = phi_field.max_abs().max(supersolution.u.max_abs());
    let hypotheses = validate_hypotheses(&grid, psi, phi, mu0)?;

    let (subsolution, subsolution_solve, quadratic) = match route {
        SubsolutionRoute::LorentzGauss => {
            let scaled = expr::div(psi.clone(), Expr::constant(lorentz_gauss_scale(n)));
            let lg = solve_lorentz_gauss(
                &problem.with_equation(Equation::LorentzGauss, scaled),
                &grid,
                config,
            )?;
            (lg.u.clone(), Some(lg), None)
        }
        SubsolutionRoute::Quadratic => {
            let q = build_quadratic_subsolution(&grid, phi, hypotheses.psi_max, config)?;
            (q.field.clone(), None, Some(q))
        }
    };

    let solution = solve_k_eta(&problem, &subsolution, config)?;
    Ok(PipelineResult {
        grid,
        supersolution,
        subsolution,
        subsolution_solve,
        quadratic,
        solution,
        hypotheses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypotheses_are_enforced() {
        let d = DomainSpec::disk(vec![0.0, 0.0], 0.5);
        let grid = Grid::build(&d, 0.1).unwrap();
        let phi = Expr::parse("sqrt(1+x1^2+x2^2)").unwrap();
        let ok = validate_hypotheses(
            &grid,
            &Expr::parse("1 + 0.1*z^3 + 0.2*z").unwrap(),
            &phi,
            0.5,
        );
        assert!(ok.is_ok());
        let err =
            validate_hypotheses(&grid, &Expr::parse("2 - z").unwrap(), &phi, 1.0).unwrap_err();
        assert!(err.to_string().contains("ψ_z ≥ 0"));
        let steep = Expr::parse("2*x1").unwrap();
        let err = validate_hypotheses(&grid, &Expr::constant(1.0), &steep, 1.0).unwrap_err();
        assert!(err.to_string().contains("|∂φ| < 1 on ∂Ω"));
        let rep = validate_hypotheses(&grid, &Expr::parse("1 + x1^2").unwrap(), &phi, 1.2).unwrap();
        assert!(rep.psi_min >= 1.0 && rep.psi_max <= 1.25 + 1e-12);
        assert!(
            (rep.boundary_slope_max).abs() < 1e-12,
            "radial phi has no tangential slope"
        );
    }

    #[test]
    fn pipeline_on_the_hyperboloid() {
        let d = DomainSpec::disk(vec![0.0, 0.0], 0.5);
        let phi = Expr::parse("sqrt(1+x1^2+x2^2)").unwrap();
        let r = run_pipeline(
            &d,
            &Expr::constant(1.0),
            &phi,
            0.05,
            SubsolutionRoute::LorentzGauss,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(r.solution.converged && r.supersolution.converged);
        let scale = 1.0 + r.solution.u.max_abs();
        for k in 0..r.grid.node_count() {
            let (lo, u, hi) = (
                r.subsolution.value(k),
                r.solution.u.value(k),
                r.supersolution.u.value(k),
            );
            assert!(
                lo <= u + 1e-6 * scale && u <= hi + 1e-6 * scale,
                "{lo} {u} {hi}"
            );
        }
    }
}
