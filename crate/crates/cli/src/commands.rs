use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde_json::{json, Value};
use spacelike_core::estimates::{
    self, barrier_delta_sweep, build_barriers, check_barrier_inequalities, default_barrier_params,
    EstimateEntry, EstimateReport,
};
use spacelike_core::solver::operators::{self, Guards};
use spacelike_core::solver::{
    run_pipeline, solve_lorentz_gauss, solve_mean_curvature, SolveResult,
};
use spacelike_core::{Equation, Expr, Grid, GridField};

use crate::config::RunConfig;
use crate::output::{
    self, cache_dir, cache_lookup, cache_store, csv_grid_hash, grid_hash, SOLVE_FILES,
};
use crate::Failure;

const REPORT_CORE: &str = "report_core.json";

fn stage_json(r: &SolveResult) -> Value {
    json!({
        "equation": r.equation.name(),
        "iterations": r.stage_iterations,
        "residuals": r.residual_history,
        "residual": r.residual,
        "theta0": r.theta0,
        "cone_margin": r.cone_margin,
        "converged": r.converged,
    })
}

fn to_pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialize") + "\n"
}

/// Solves the configured problem; returns the output files, with the report
/// minus its per-run fields under [`REPORT_CORE`].
fn compute(cfg: &RunConfig) -> Result<Vec<(String, String)>, Failure> {
    let h = cfg.grid_step()?;
    let problem = cfg.problem()?;
    let mut files = Vec::new();
    let mut report = json!({
        "equation": cfg.equation.name(),
        "h": h,
    });
    let solution = match cfg.equation {
        Equation::KEta => {
            let r = run_pipeline(
                &cfg.domain,
                &problem.psi,
                &problem.phi,
                h,
                cfg.pipeline.subsolution,
                &cfg.solver,
            )
            .map_err(Failure::from_solve)?;
            files.push(("solution.csv".to_string(), r.solution.u.to_csv()));
            files.push(("subsolution.csv".to_string(), r.subsolution.to_csv()));
            files.push(("supersolution.csv".to_string(), r.supersolution.u.to_csv()));
            let sub = match (&r.subsolution_solve, &r.quadratic) {
                (Some(s), _) => stage_json(s),
                (_, Some(q)) => {
                    json!({"quadratic": {"c": q.c, "c_min": q.c_min, "c_max": q.c_max}})
                }
                _ => Value::Null,
            };
            report["route"] =
                serde_json::to_value(cfg.pipeline.subsolution).expect("route serializes");
            report["hypotheses"] = serde_json::to_value(&r.hypotheses).expect("report serializes");
            report["stages"] = json!({
                "supersolution": stage_json(&r.supersolution),
                "subsolution": sub,
                "solution": stage_json(&r.solution),
            });
            r.solution
        }
        Equation::MeanCurvature | Equation::LorentzGauss => {
            let grid = Grid::build(&cfg.domain, h).map_err(Failure::from_core)?;
            let r = if cfg.equation == Equation::MeanCurvature {
                solve_mean_curvature(&problem, &grid, &cfg.solver)
            } else {
                solve_lorentz_gauss(&problem, &grid, &cfg.solver)
            }
            .map_err(Failure::from_solve)?;
            files.push(("solution.csv".to_string(), r.u.to_csv()));
            report["stages"] = json!({ "solution": stage_json(&r) });
            r
        }
    };
    let grid = solution.u.grid();
    report["grid_hash"] = json!(grid_hash(grid));
    report["nodes"] = json!(grid.node_count());
    report["masters"] = json!(grid.master_count());
    report["bandwidth"] = json!(grid.bandwidth());
    report["iterations"] = json!(solution.stage_iterations);
    report["residuals"] = json!(solution.residual_history);
    report["residual"] = json!(solution.residual);
    report["theta0"] = json!(solution.theta0);
    report["cone_margin"] = json!(solution.cone_margin);
    report["converged"] = json!(solution.converged);
    files.push((REPORT_CORE.to_string(), to_pretty(&report)));
    Ok(files)
}

pub fn solve(cfg: &RunConfig, out: &Path, use_cache: bool) -> Result<(), Failure> {
    let start = Instant::now();
    let key = cfg.cache_key();
    let dir = cache_dir(out, &key);
    let cached = if use_cache { cache_lookup(&dir) } else { None };
    let cache_hit = cached.is_some();
    let files = match cached {
        Some(f) => f,
        None => {
            let files = compute(cfg)?;
            if use_cache {
                cache_store(&dir, &files)?;
            }
            files
        }
    };
    for name in SOLVE_FILES {
        let _ = std::fs::remove_file(out.join(name));
    }
    let mut report = Value::Null;
    for (name, contents) in &files {
        if name == REPORT_CORE {
            report = serde_json::from_str(contents)
                .map_err(|e| Failure::config(format!("corrupt cache entry: {e}")))?;
        } else {
            output::write(&out.join(name), contents)?;
        }
    }
    report["cache_hit"] = json!(cache_hit);
    report["wall_time_ms"] = json!(start.elapsed().as_secs_f64() * 1e3);
    output::write(&out.join("report.json"), &to_pretty(&report))?;
    println!(
        "{}: theta0 = {:.4}, residual = {:.3e}, wrote {}{}",
        cfg.equation.name(),
        report["theta0"].as_f64().unwrap_or(f64::NAN),
        report["residual"].as_f64().unwrap_or(f64::NAN),
        out.display(),
        if cache_hit { " (cached)" } else { "" }
    );
    if report["converged"] != json!(true) {
        return Err(Failure::solver(
            "solve finished without meeting the convergence criteria",
        ));
    }
    Ok(())
}

fn load_field(
    grid: &std::sync::Arc<Grid>,
    path: &Path,
    boundary: &[f64],
) -> Result<GridField, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let want = grid_hash(grid);
    let got = csv_grid_hash(&text);
    if got != want {
        return Err(Failure::config(format!(
            "{}: grid hash {} does not match the config's grid {}",
            path.display(),
            &got[..12],
            &want[..12]
        )));
    }
    GridField::from_csv(grid, &text, boundary.to_vec()).map_err(Failure::from_core)
}

/// Runs a check whose errors mean the field itself is unacceptable (for
/// example, not spacelike): the error becomes a failed entry.
fn guarded(name: &str, r: spacelike_core::Result<Vec<EstimateEntry>>) -> Vec<EstimateEntry> {
    r.unwrap_or_else(|e| {
        eprintln!("{name}: {e}");
        vec![EstimateEntry::check(name, f64::INFINITY, 0.0, 0.0)]
    })
}

pub fn verify(cfg: &RunConfig, solution: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let problem = cfg.problem()?;
    let grid = Grid::build(&cfg.domain, cfg.grid_step()?).map_err(Failure::from_core)?;
    let bdry: Vec<f64> = grid
        .boundary_points()
        .iter()
        .map(|x| problem.phi.eval(x, 0.0))
        .collect();
    let u = load_field(&grid, solution, &bdry)?;
    let dir = solution.parent().unwrap_or(Path::new("."));
    let (sub_path, sup_path) = (dir.join("subsolution.csv"), dir.join("supersolution.csv"));
    let bounds = if sub_path.exists() && sup_path.exists() {
        Some((
            load_field(&grid, &sub_path, &bdry)?,
            load_field(&grid, &sup_path, &bdry)?,
        ))
    } else {
        None
    };

    let mut report = EstimateReport::default();
    report.extend([estimates::check_residual(&problem, &u, 1e-8).map_err(Failure::from_core)?]);
    let mut mu0 = u
        .max_abs()
        .max(bdry.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
    if let Some((sub, sup)) = &bounds {
        report.extend(guarded(
            "comparison",
            estimates::check_comparison(&u, sub, sup),
        ));
        report.extend(guarded(
            "boundary_gradient",
            estimates::check_boundary_gradient(&u, sub, sup),
        ));
        mu0 = mu0.max(sub.max_abs()).max(sup.max_abs());
    }
    report.constant("mu0", mu0);
    report.extend(guarded(
        "gradient_bound",
        estimates::check_gradient_bound(&u, &problem.psi, &problem.phi, mu0),
    ));
    if cfg.equation != Equation::MeanCurvature {
        report.extend(guarded(
            "am_gm",
            estimates::check_am_gm(&u).map(|e| vec![e]),
        ));
        report.extend(guarded(
            "boundary_quantities",
            estimates::boundary_normal_quantities(&u, &cfg.domain).map(|(e, _)| e),
        ));
    }
    if let Some(src) = &cfg.phi_tilde {
        let phi_tilde = Expr::parse(src).map_err(Failure::from_core)?;
        let alphas = if cfg.alphas.is_empty() {
            vec![0.5, 1.0]
        } else {
            cfg.alphas.clone()
        };
        report.extend(guarded(
            "pogorelov",
            estimates::pogorelov_report(&u, &phi_tilde, &alphas),
        ));
    }
    let text = to_pretty(&serde_json::to_value(&report).expect("report serializes"));
    if let Some(o) = out {
        output::write(&o.join("verify.json"), &text)?;
    }
    print!("{text}");
    let failed: Vec<&str> = report
        .entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| e.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(Failure::verify(format!(
            "failed checks: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

/// The reference must be an admissible exact solution: it matches `φ` on
/// `∂Ω` and satisfies the equation pointwise with analytic derivatives.
fn check_reference(cfg: &RunConfig, reference: &Expr, grid: &Grid) -> Result<(), Failure> {
    let problem = cfg.problem()?;
    let n = grid.dim();
    let grad = reference.gradient(n);
    let hess = reference.hessian(n);
    let guards = Guards {
        theta_min: 1e-12,
        cone: 1e-8,
    };
    for x in grid.boundary_points() {
        let (r, p) = (reference.eval(x, 0.0), problem.phi.eval(x, 0.0));
        if !((r - p).abs() <= 1e-9 * (1.0 + p.abs())) {
            return Err(Failure::config(format!(
                "reference differs from phi on the boundary at {x:?}"
            )));
        }
    }
    for k in 0..grid.node_count() {
        let x = grid.node_coords(k);
        let du: Vec<f64> = grad.iter().map(|g| g.eval(&x, 0.0)).collect();
        let d2u = DMatrix::from_fn(n, n, |i, j| hess[i][j].eval(&x, 0.0));
        let val = operators::evaluate(cfg.equation, &du, &d2u, &guards).map_err(|why| {
            Failure::config(format!(
                "reference is not an admissible solution at {x:?}: {why:?}"
            ))
        })?;
        let psi = problem.psi.eval(&x, reference.eval(&x, 0.0));
        if !((val - psi).abs() <= 1e-8 * (1.0 + psi.abs())) {
            return Err(Failure::config(format!(
                "reference does not solve the equation at {x:?}: operator {val}, psi {psi}"
            )));
        }
    }
    Ok(())
}

pub fn convergence(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    if cfg.h_list.len() < 3 {
        return Err(Failure::config(
            "convergence needs an h_list with at least 3 entries",
        ));
    }
    let reference = match &cfg.reference {
        Some(s) => Expr::parse(s).map_err(Failure::from_core)?,
        None => return Err(Failure::config("convergence needs a reference solution")),
    };
    let coarse = Grid::build(&cfg.domain, cfg.h_list[0]).map_err(Failure::from_core)?;
    check_reference(cfg, &reference, &coarse)?;

    let mut rows: Vec<(f64, usize, f64, f64)> = Vec::new();
    for &h in &cfg.h_list {
        let mut run = cfg.clone();
        run.h = Some(h);
        let (solution, grid) = match cfg.equation {
            Equation::KEta => {
                let p = run.problem()?;
                let r = run_pipeline(
                    &cfg.domain,
                    &p.psi,
                    &p.phi,
                    h,
                    cfg.pipeline.subsolution,
                    &cfg.solver,
                )
                .map_err(Failure::from_solve)?;
                (r.solution.u, r.grid)
            }
            _ => {
                let grid = Grid::build(&cfg.domain, h).map_err(Failure::from_core)?;
                let p = run.problem()?;
                let r = if cfg.equation == Equation::MeanCurvature {
                    solve_mean_curvature(&p, &grid, &cfg.solver)
                } else {
                    solve_lorentz_gauss(&p, &grid, &cfg.solver)
                }
                .map_err(Failure::from_solve)?;
                (r.u, grid)
            }
        };
        let err = (0..grid.node_count())
            .map(|k| (solution.value(k) - reference.eval(&grid.node_coords(k), 0.0)).abs())
            .fold(0.0, f64::max);
        let order = match rows.last() {
            Some(&(h0, _, e0, _)) => (e0 / err).ln() / (h0 / h).ln(),
            None => f64::NAN,
        };
        rows.push((h, grid.master_count(), err, order));
    }

    let mut table = String::from("h,masters,linf_error,order\n");
    for (h, m, e, o) in &rows {
        table.push_str(&format!("{h:.6e},{m},{e:.6e},{o:.4}\n"));
    }
    output::write(&out.join("convergence.csv"), &table)?;
    print!("{table}");
    let last = rows.last().expect("at least three rows").3;
    if !(last >= 1.8) {
        return Err(Failure::verify(format!(
            "final observed order {last:.3} is below 1.8"
        )));
    }
    Ok(())
}

pub fn barriers(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Failure> {
    let bc = cfg
        .barriers
        .as_ref()
        .ok_or_else(|| Failure::config("config has no barriers section"))?;
    let n = cfg.domain.dim();
    let dir = bc.direction.clone().unwrap_or_else(|| {
        let mut d = vec![0.0; n];
        d[n - 1] = -1.0;
        d
    });
    if dir.len() != n || dir.iter().all(|v| *v == 0.0) {
        return Err(Failure::config(
            "barriers.direction must be a nonzero vector of the domain's dimension",
        ));
    }
    let x0 = cfg
        .domain
        .boundary_point_at(cfg.domain.boundary_point_toward(&dir));

    let mut runs = Vec::new();
    let mut monotone = None;
    match bc.delta {
        Some(delta) => {
            let mut params = default_barrier_params(&cfg.domain, &x0, bc.theta, bc.k, delta)
                .map_err(Failure::from_core)?;
            params.t = bc.t.unwrap_or(params.t);
            params.n_coef = bc.n_coef.unwrap_or(params.n_coef);
            let bundle = build_barriers(&cfg.domain, &x0, params).map_err(Failure::from_core)?;
            runs.push((params, check_barrier_inequalities(&bundle)));
        }
        None => {
            let (sweep, mono) = barrier_delta_sweep(&cfg.domain, &x0, bc.theta, bc.k)
                .map_err(Failure::from_core)?;
            for (delta, entries) in sweep {
                let params = default_barrier_params(&cfg.domain, &x0, bc.theta, bc.k, delta)
                    .map_err(Failure::from_core)?;
                runs.push((params, entries));
            }
            monotone = Some(mono);
        }
    }
    // a sweep only needs the smallest δ to work
    let decisive: Vec<&EstimateEntry> = match &monotone {
        Some(m) => runs
            .last()
            .map(|(_, e)| e.iter())
            .into_iter()
            .flatten()
            .chain(std::iter::once(m))
            .collect(),
        None => runs.iter().flat_map(|(_, e)| e.iter()).collect(),
    };
    let ok = decisive.iter().all(|e| e.passed());
    let value = json!({
        "base_point": x0.x,
        "inner_normal": x0.inner_normal,
        "boundary_curvatures": x0.principal_curvatures,
        "runs": runs.iter().map(|(p, e)| json!({"params": p, "entries": e})).collect::<Vec<_>>(),
        "monotone": monotone,
        "satisfied": ok,
    });
    let text = to_pretty(&value);
    if let Some(o) = out {
        output::write(&o.join("barriers.json"), &text)?;
    }
    print!("{text}");
    if !ok {
        return Err(Failure::verify("barrier inequalities fail"));
    }
    Ok(())
}
