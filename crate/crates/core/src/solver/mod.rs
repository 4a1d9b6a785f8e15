//! Dirichlet solvers for the mean-curvature, Lorentz-Gauss and `K_η`
//! equations on masked grids.
//!
//! Every solve is a right-hand-side continuation from a feasible start
//! `u_0`: stage `k` of `T` solves `Op[u] = (k/T)·ψ(x, u) + (1 − k/T)·Op[u_0](x)`
//! by damped Newton, so the start is an exact discrete solution at `t = 0`.
//! Trial iterates that leave the spacelike region, the cone `Γ`, or (for
//! Lorentz-Gauss) the convex cone are rejected before the Armijo test.

mod banded;
pub mod operators;
mod pipeline;
mod subsolution;

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::expr::{Expr, Var};
use crate::grid::{hess_index, DomainSpec, Grid, GridField};

pub use banded::{BandLu, BandMatrix};
pub use operators::{Equation, Guards, Infeasible};
pub use pipeline::{
    run_pipeline, validate_hypotheses, HypothesisReport, PipelineResult, SubsolutionRoute,
};
pub use subsolution::{build_quadratic_subsolution, QuadraticSubsolution};

/// A Dirichlet problem `Op[u] = ψ(x, u)` in `Ω`, `u = φ` on `∂Ω`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub domain: DomainSpec,
    pub equation: Equation,
    pub psi: Expr,
    pub phi: Expr,
}

impl ProblemSpec {
    pub fn new(
        domain: DomainSpec,
        equation: Equation,
        psi: Expr,
        phi: Expr,
    ) -> Result<Self, Error> {
        domain.validate()?;
        let n = domain.dim();
        if psi.spatial_arity() > n {
            return Err(Error::Config(format!(
                "psi references x{} but n = {n}",
                psi.spatial_arity()
            )));
        }
        if phi.spatial_arity() > n {
            return Err(Error::Config(format!(
                "phi references x{} but n = {n}",
                phi.spatial_arity()
            )));
        }
        if phi.depends_on(Var::Z) {
            return Err(Error::Config("phi must not depend on z".into()));
        }
        Ok(Self {
            domain,
            equation,
            psi,
            phi,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn with_equation(&self, equation: Equation, psi: Expr) -> Self {
        Self {
            equation,
            psi,
            ..self.clone()
        }
    }
}

/// Newton, damping and guard parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Max-norm residual at which a stage is converged.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Backtracking factor.
    pub damping: f64,
    pub min_step: f64,
    pub continuation_steps: usize,
    /// Accepted iterates satisfy `|Du| ≤ 1 − theta_min`.
    pub theta_min: f64,
    /// Accepted `K_η` iterates have gamma margin above this.
    pub cone_guard: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton: 50,
            damping: 0.5,
            min_step: 1e-6,
            continuation_steps: 8,
            theta_min: 1e-3,
            cone_guard: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let pos = [
            self.newton_tol,
            self.min_step,
            self.theta_min,
            self.cone_guard,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "solver tolerances and guards must be positive".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Config("damping factor must lie in (0, 1)".into()));
        }
        if self.max_newton == 0 || self.continuation_steps == 0 {
            return Err(Error::Config(
                "max_newton and continuation_steps must be positive".into(),
            ));
        }
        if self.theta_min >= 1.0 {
            return Err(Error::Config("theta_min must be below 1".into()));
        }
        Ok(())
    }

    pub fn guards(&self) -> Guards {
        Guards {
            theta_min: self.theta_min,
            cone: self.cone_guard,
        }
    }
}

/// Outcome of a converged solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub equation: Equation,
    pub u: GridField,
    pub stage_iterations: Vec<usize>,
    /// Max-norm residual after each Newton iteration, per stage.
    pub residual_history: Vec<Vec<f64>>,
    pub residual: f64,
    /// `1 − max |Du|` over equation nodes.
    pub theta0: f64,
    /// Smallest gamma margin of `κ` over equation nodes.
    pub cone_margin: f64,
    pub converged: bool,
}

/// Where and when a solve failed.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDiagnostic {
    pub node: usize,
    pub x: Vec<f64>,
    pub stage: usize,
    pub t: f64,
    pub iteration: usize,
}

impl std::fmt::Display for NodeDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "node {} at x = {:?} (stage {}, t = {:.4}, iteration {})",
            self.node, self.x, self.stage, self.t, self.iteration
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("starting guess infeasible at {at}: {reason}")]
    InfeasibleStart { at: NodeDiagnostic, reason: String },

    #[error("cone exit at {at}: kappa = {kappa:?}, gamma margin {margin:e}")]
    ConeExit {
        at: NodeDiagnostic,
        kappa: Vec<f64>,
        margin: f64,
    },

    #[error("spacelike guard violated at {at}: |Du| = {grad_norm}")]
    NotSpacelike { at: NodeDiagnostic, grad_norm: f64 },

    #[error("convexity lost at {at}: smallest Hessian eigenvalue {min_eigenvalue:e}")]
    ConvexityLost {
        at: NodeDiagnostic,
        min_eigenvalue: f64,
    },

    #[error("Newton stagnated in stage {stage} (t = {t}); residual history {residuals:?}")]
    Stagnation {
        stage: usize,
        t: f64,
        residuals: Vec<f64>,
    },

    #[error("singular Jacobian at column {column} in stage {stage}")]
    Singular { stage: usize, column: usize },

    #[error("no admissible quadratic subsolution: {0}; try the lorentz_gauss subsolution route")]
    NoSubsolution(String),

    #[error("subsolution not admissible at node {node} x = {x:?}: {reason}")]
    BadSubsolution {
        node: usize,
        x: Vec<f64>,
        reason: String,
    },
}

impl SolveError {
    fn from_infeasible(at: NodeDiagnostic, why: Infeasible) -> Self {
        match why {
            Infeasible::Spacelike(g) => SolveError::NotSpacelike { at, grad_norm: g },
            Infeasible::Cone { kappa, margin } => SolveError::ConeExit { at, kappa, margin },
            Infeasible::Convexity(e) => SolveError::ConvexityLost {
                at,
                min_eigenvalue: e,
            },
        }
    }
}

fn describe(why: &Infeasible) -> String {
    match why {
        Infeasible::Spacelike(g) => format!("|Du| = {g} violates the spacelike guard"),
        Infeasible::Cone { kappa, margin } => {
            format!("kappa = {kappa:?} outside the cone (margin {margin:e})")
        }
        Infeasible::Convexity(e) => format!("Hessian not positive definite (eigenvalue {e:e})"),
    }
}

/// Discrete jet `(Du, D²u)` at master `m` from master values and boundary data.
pub(crate) fn master_jet(
    grid: &Grid,
    m: usize,
    u: &[f64],
    bdry: &[f64],
) -> (Vec<f64>, DMatrix<f64>) {
    let n = grid.dim();
    let s = grid.reduced_stencil(m);
    let du = s.grad.iter().map(|f| f.eval(u, bdry)).collect();
    let d2u = DMatrix::from_fn(n, n, |i, j| s.hess[hess_index(n, i, j)].eval(u, bdry));
    (du, d2u)
}

/// Discrete operator values at every master; first infeasible node on failure.
pub(crate) fn apply_operator(
    grid: &Grid,
    eq: Equation,
    guards: &Guards,
    u: &[f64],
    bdry: &[f64],
) -> Result<Vec<f64>, (usize, Infeasible)> {
    let vals: Vec<Result<f64, Infeasible>> = (0..grid.master_count())
        .into_par_iter()
        .map(|m| {
            let (du, d2u) = master_jet(grid, m, u, bdry);
            operators::evaluate(eq, &du, &d2u, guards)
        })
        .collect();
    let mut out = Vec::with_capacity(vals.len());
    for (m, v) in vals.into_iter().enumerate() {
        out.push(v.map_err(|e| (m, e))?);
    }
    Ok(out)
}

/// One continuation stage's discrete system.
struct Stage<'a> {
    grid: &'a Grid,
    eq: Equation,
    guards: Guards,
    psi: &'a Expr,
    psi_z: &'a Expr,
    bdry: &'a [f64],
    base: &'a [f64],
    coords: &'a [Vec<f64>],
    t: f64,
}

impl Stage<'_> {
    fn rhs(&self, m: usize, z: f64) -> f64 {
        self.t * self.psi.eval(&self.coords[m], z) + (1.0 - self.t) * self.base[m]
    }

    fn residual(&self, u: &[f64]) -> Result<Vec<f64>, (usize, Infeasible)> {
        let ops = apply_operator(self.grid, self.eq, &self.guards, u, self.bdry)?;
        Ok(ops
            .iter()
            .enumerate()
            .map(|(m, op)| op - self.rhs(m, u[m]))
            .collect())
    }

    fn jacobian(&self, u: &[f64]) -> Result<BandMatrix, (usize, Infeasible)> {
        let n = self.grid.dim();
        let rows: Vec<Result<Vec<(u32, f64)>, Infeasible>> = (0..self.grid.master_count())
            .into_par_iter()
            .map(|m| {
                let (du, d2u) = master_jet(self.grid, m, u, self.bdry);
                let lin = operators::linearize(self.eq, &du, &d2u, &self.guards)?;
                let s = self.grid.reduced_stencil(m);
                let mut row: Vec<(u32, f64)> = Vec::new();
                for (k, f) in s.grad.iter().enumerate() {
                    row.extend(f.nodes.iter().map(|&(c, w)| (c, w * lin.dp[k])));
                }
                for i in 0..n {
                    for j in i..n {
                        let coef = if i == j {
                            lin.dr[(i, i)]
                        } else {
                            lin.dr[(i, j)] + lin.dr[(j, i)]
                        };
                        row.extend(
                            s.hess[hess_index(n, i, j)]
                                .nodes
                                .iter()
                                .map(|&(c, w)| (c, w * coef)),
                        );
                    }
                }
                let dz = self.t * self.psi_z.eval(&self.coords[m], u[m]);
                row.push((m as u32, -dz));
                Ok(row)
            })
            .collect();
        let (kl, ku) = self.grid.bandwidth();
        let mut a = BandMatrix::zeros(self.grid.master_count(), kl, ku);
        for (m, row) in rows.into_iter().enumerate() {
            for (c, v) in row.map_err(|e| (m, e))? {
                a.add(m, c as usize, v);
            }
        }
        Ok(a)
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `problem` on `grid` by continuation from the feasible `start`.
/// The boundary trace is always taken from `φ`.
pub fn solve_from(
    problem: &ProblemSpec,
    grid: &Arc<Grid>,
    start: &GridField,
    config: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    config.validate()?;
    if grid.domain() != &problem.domain {
        return Err(Error::GridMismatch("grid built for a different domain".into()).into());
    }
    if start.values().len() != grid.node_count() {
        return Err(Error::GridMismatch("starting field has the wrong node count".into()).into());
    }
    let guards = config.guards();
    let bdry: Vec<f64> = grid
        .boundary_points()
        .iter()
        .map(|x| problem.phi.eval(x, 0.0))
        .collect();
    let coords: Vec<Vec<f64>> = (0..grid.master_count())
        .map(|m| grid.master_coords(m))
        .collect();
    let psi_z = problem.psi.diff(Var::Z);
    let mut u = start.master_values();

    let diag = |node: usize, stage: usize, t: f64, iteration: usize| NodeDiagnostic {
        node,
        x: coords[node].clone(),
        stage,
        t,
        iteration,
    };

    let base = apply_operator(grid, problem.equation, &guards, &u, &bdry).map_err(|(m, why)| {
        SolveError::InfeasibleStart {
            at: diag(m, 0, 0.0, 0),
            reason: describe(&why),
        }
    })?;

    let steps = config.continuation_steps;
    let mut stage_iterations = Vec::with_capacity(steps);
    let mut residual_history = Vec::with_capacity(steps);
    let mut last_residual = f64::INFINITY;
    for stage in 1..=steps {
        let t = stage as f64 / steps as f64;
        let sys = Stage {
            grid,
            eq: problem.equation,
            guards,
            psi: &problem.psi,
            psi_z: &psi_z,
            bdry: &bdry,
            base: &base,
            coords: &coords,
            t,
        };
        let mut r = sys
            .residual(&u)
            .map_err(|(m, why)| SolveError::from_infeasible(diag(m, stage, t, 0), why))?;
        let mut history = Vec::new();
        let mut iteration = 0;
        loop {
            let rn = norm_inf(&r);
            history.push(rn);
            if rn <= config.newton_tol {
                last_residual = rn;
                break;
            }
            if iteration == config.max_newton || !rn.is_finite() {
                return Err(SolveError::Stagnation {
                    stage,
                    t,
                    residuals: history,
                });
            }
            iteration += 1;
            let jac = sys.jacobian(&u).map_err(|(m, why)| {
                SolveError::from_infeasible(diag(m, stage, t, iteration), why)
            })?;
            let lu = jac
                .factor()
                .map_err(|column| SolveError::Singular { stage, column })?;
            let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
            lu.solve(&mut delta);

            let r2 = norm2(&r);
            let mut alpha = 1.0;
            let mut last_reject: Option<(usize, Infeasible)>;
            loop {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
                match sys.residual(&trial) {
                    Ok(rt) if norm2(&rt) <= (1.0 - 1e-4 * alpha) * r2 => {
                        u = trial;
                        r = rt;
                        break;
                    }
                    Ok(_) => last_reject = None,
                    Err(e) => last_reject = Some(e),
                }
                alpha *= config.damping;
                if alpha < config.min_step {
                    return Err(match last_reject {
                        Some((m, why)) => {
                            SolveError::from_infeasible(diag(m, stage, t, iteration), why)
                        }
                        None => SolveError::Stagnation {
                            stage,
                            t,
                            residuals: history,
                        },
                    });
                }
            }
        }
        stage_iterations.push(iteration);
        residual_history.push(history);
    }

    let field = GridField::from_masters(grid, &u, bdry.clone());
    let mut theta0 = f64::INFINITY;
    let mut cone_margin = f64::INFINITY;
    for m in 0..grid.master_count() {
        let (du, d2u) = master_jet(grid, m, &u, &bdry);
        theta0 = theta0.min(1.0 - du.iter().map(|v| v * v).sum::<f64>().sqrt());
        cone_margin =
            cone_margin.min(operators::cone_margin(&du, &d2u).unwrap_or(f64::NEG_INFINITY));
    }
    let converged = last_residual <= config.newton_tol && theta0 >= config.theta_min;
    Ok(SolveResult {
        equation: problem.equation,
        u: field,
        stage_iterations,
        residual_history,
        residual: last_residual,
        theta0,
        cone_margin,
        converged,
    })
}

fn require(problem: &ProblemSpec, eq: Equation) -> Result<(), SolveError> {
    if problem.equation != eq {
        return Err(Error::Config(format!(
            "problem poses the {} equation, expected {}",
            problem.equation.name(),
            eq.name()
        ))
        .into());
    }
    Ok(())
}

/// Mean-curvature solve `H[u] = ψ(x, u)` started from `φ` itself.
pub fn solve_mean_curvature(
    problem: &ProblemSpec,
    grid: &Arc<Grid>,
    config: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    require(problem, Equation::MeanCurvature)?;
    let start = GridField::from_fn(grid, |x| problem.phi.eval(x, 0.0));
    solve_from(problem, grid, &start, config)
}

/// Lorentz-Gauss solve `det D²u / w^{n+2} = ψ(x, u)` from a convex start
/// `φ + c·q`, with `q` the domain's level function.
pub fn solve_lorentz_gauss(
    problem: &ProblemSpec,
    grid: &Arc<Grid>,
    config: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    require(problem, Equation::LorentzGauss)?;
    let start = convex_start(problem, grid, config)?;
    solve_from(problem, grid, &start, config)
}

/// Smallest feasibility margin of `φ + c·q` for the Lorentz-Gauss guards,
/// or `None` if infeasible.
fn convex_margin(
    problem: &ProblemSpec,
    grid: &Arc<Grid>,
    config: &SolverConfig,
    c: f64,
) -> Option<f64> {
    let field = GridField::from_fn(grid, |x| {
        problem.phi.eval(x, 0.0) + c * 0.5 * problem.domain.level(x)
    });
    let guards = config.guards();
    let u = field.master_values();
    let mut margin = f64::INFINITY;
    for m in 0..grid.master_count() {
        let (du, d2u) = master_jet(grid, m, &u, field.boundary_values());
        operators::evaluate(Equation::LorentzGauss, &du, &d2u, &guards).ok()?;
        let lam = d2u
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let slack = 1.0 - config.theta_min - du.iter().map(|v| v * v).sum::<f64>().sqrt();
        margin = margin.min(lam.min(slack));
    }
    Some(margin)
}

fn convex_start(
    problem: &ProblemSpec,
    grid: &Arc<Grid>,
    config: &SolverConfig,
) -> Result<GridField, SolveError> {
    let scan: Vec<f64> = std::iter::once(0.0)
        .chain((0..40).map(|k| 1e-4 * 1.5f64.powi(k)))
        .collect();
    let best = scan
        .iter()
        .filter_map(|&c| convex_margin(problem, grid, config, c).map(|m| (c, m)))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((c, _)) => {
            Ok(GridField::from_fn(grid, |x| problem.phi.eval(x, 0.0) + c * 0.5 * problem.domain.level(x)))
        }
        None => Err(SolveError::InfeasibleStart {
            at: NodeDiagnostic { node: 0, x: grid.master_coords(0), stage: 0, t: 0.0, iteration: 0 },
            reason: "no convex spacelike start of the form phi + c*q; the data may not admit a convex extension"
                .into(),
        }),
    }
}

/// Main `K_η` solve by continuation from an admissible subsolution.
pub fn solve_k_eta(
    problem: &ProblemSpec,
    subsolution: &GridField,
    config: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    require(problem, Equation::KEta)?;
    let grid = subsolution.grid().clone();
    check_subsolution(problem, subsolution, config)?;
    solve_from(problem, &grid, subsolution, config)
}

/// Verifies `κ ∈ Γ`, `K_η[u̲] ≥ ψ(x, u̲) − 1e−8` at every equation node and
/// `u̲ = φ` on the boundary trace.
pub fn check_subsolution(
    problem: &ProblemSpec,
    sub: &GridField,
    config: &SolverConfig,
) -> Result<(), SolveError> {
    let grid = sub.grid();
    for (i, x) in grid.boundary_points().iter().enumerate() {
        let phi = problem.phi.eval(x, 0.0);
        if (sub.boundary_values()[i] - phi).abs() > 1e-8 * (1.0 + phi.abs()) {
            return Err(SolveError::BadSubsolution {
                node: i,
                x: x.clone(),
                reason: "boundary trace differs from phi".into(),
            });
        }
    }
    let u = sub.master_values();
    let guards = config.guards();
    for m in 0..grid.master_count() {
        let (du, d2u) = master_jet(grid, m, &u, sub.boundary_values());
        let x = grid.master_coords(m);
        let k = operators::evaluate(Equation::KEta, &du, &d2u, &guards).map_err(|why| {
            SolveError::BadSubsolution {
                node: m,
                x: x.clone(),
                reason: describe(&why),
            }
        })?;
        let psi = problem.psi.eval(&x, u[m]);
        if k < psi - 1e-8 {
            return Err(SolveError::BadSubsolution {
                node: m,
                x,
                reason: format!("K_eta = {k} below psi = {psi}"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyperboloid_problem(eq: Equation, psi: &str) -> ProblemSpec {
        ProblemSpec::new(
            DomainSpec::disk(vec![0.0, 0.0], 0.5),
            eq,
            Expr::parse(psi).unwrap(),
            Expr::parse("sqrt(1 + x1^2 + x2^2)").unwrap(),
        )
        .unwrap()
    }

    fn max_error(r: &SolveResult) -> f64 {
        let g = r.u.grid();
        (0..g.node_count())
            .map(|k| {
                let x = g.node_coords(k);
                (r.u.value(k) - (1.0 + x[0] * x[0] + x[1] * x[1]).sqrt()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            damping: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            cone_guard: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hyperboloid_all_three_equations() {
        let grid = Grid::build(&DomainSpec::disk(vec![0.0, 0.0], 0.5), 0.05).unwrap();
        let cfg = SolverConfig::default();
        let mc = solve_mean_curvature(
            &hyperboloid_problem(Equation::MeanCurvature, "2"),
            &grid,
            &cfg,
        )
        .unwrap();
        assert!(
            mc.converged && max_error(&mc) < 5e-3,
            "mc {}",
            max_error(&mc)
        );
        let lg = solve_lorentz_gauss(
            &hyperboloid_problem(Equation::LorentzGauss, "1"),
            &grid,
            &cfg,
        )
        .unwrap();
        assert!(
            lg.converged && max_error(&lg) < 5e-3,
            "lg {}",
            max_error(&lg)
        );
        let ke = solve_k_eta(&hyperboloid_problem(Equation::KEta, "1"), &lg.u, &cfg).unwrap();
        assert!(
            ke.converged && max_error(&ke) < 5e-3,
            "ke {}",
            max_error(&ke)
        );
        assert!(ke.theta0 > 0.1 && ke.cone_margin > 0.0);
    }

    #[test]
    fn wrong_equation_is_rejected() {
        let grid = Grid::build(&DomainSpec::disk(vec![0.0, 0.0], 0.5), 0.1).unwrap();
        let p = hyperboloid_problem(Equation::KEta, "1");
        assert!(matches!(
            solve_mean_curvature(&p, &grid, &SolverConfig::default()),
            Err(SolveError::Core(Error::Config(_)))
        ));
    }
}
