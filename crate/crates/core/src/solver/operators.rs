//! Pointwise curvature operators `Op(Du, D²u)` and their derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{self, make_jet};
use crate::symfun;

/// Which curvature equation a problem poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    KEta,
    LorentzGauss,
    MeanCurvature,
}

impl Equation {
    pub fn name(self) -> &'static str {
        match self {
            Equation::KEta => "k_eta",
            Equation::LorentzGauss => "lorentz_gauss",
            Equation::MeanCurvature => "mean_curvature",
        }
    }
}

/// Why a jet is not acceptable for an equation.
#[derive(Debug, Clone, PartialEq)]
pub enum Infeasible {
    /// `|Du|` exceeds `1 - θ_min`.
    Spacelike(f64),
    /// `κ` has gamma margin at or below the cone guard.
    Cone { kappa: Vec<f64>, margin: f64 },
    /// `D²u` is not positive definite (smallest eigenvalue given).
    Convexity(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct Guards {
    pub theta_min: f64,
    pub cone: f64,
}

/// Value and first derivatives of `Op` at a jet. `dr[(i, j)]` differentiates
/// in `r_ij` with `r_ji` held fixed, so a symmetric perturbation of an
/// off-diagonal pair contributes `2 dr[(i, j)]`.
#[derive(Debug, Clone)]
pub struct OpLinearization {
    pub value: f64,
    pub dp: DVector<f64>,
    pub dr: DMatrix<f64>,
}

fn check_spacelike(du: &[f64], g: &Guards) -> Result<f64, Infeasible> {
    let norm = du.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm <= 1.0 - g.theta_min) {
        return Err(Infeasible::Spacelike(norm));
    }
    Ok(norm)
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Evaluates `Op` after the feasibility guards for `eq`.
pub fn evaluate(
    eq: Equation,
    du: &[f64],
    d2u: &DMatrix<f64>,
    g: &Guards,
) -> Result<f64, Infeasible> {
    check_spacelike(du, g)?;
    match eq {
        Equation::KEta => {
            let jet = make_jet(du, d2u).map_err(|_| Infeasible::Spacelike(1.0))?;
            let margin = jet.gamma_margin();
            if !(margin > g.cone) {
                return Err(Infeasible::Cone {
                    kappa: jet.kappa().to_vec(),
                    margin,
                });
            }
            Ok(geometry::k_eta_graph(&jet))
        }
        Equation::MeanCurvature => Ok(mean_curvature(du, d2u)),
        Equation::LorentzGauss => {
            let e = min_eigenvalue(d2u);
            if !(e > 0.0) {
                return Err(Infeasible::Convexity(e));
            }
            Ok(lorentz_gauss(du, d2u))
        }
    }
}

/// `H = (1/w)(tr r + pᵀ r p / w²)`.
pub fn mean_curvature(p: &[f64], r: &DMatrix<f64>) -> f64 {
    let n = p.len();
    let w2 = 1.0 - p.iter().map(|v| v * v).sum::<f64>();
    let w = w2.sqrt();
    let mut prp = 0.0;
    for i in 0..n {
        for j in 0..n {
            prp += p[i] * r[(i, j)] * p[j];
        }
    }
    (r.trace() + prp / w2) / w
}

/// `det r / w^{n+2}`.
pub fn lorentz_gauss(p: &[f64], r: &DMatrix<f64>) -> f64 {
    let n = p.len();
    let w = (1.0 - p.iter().map(|v| v * v).sum::<f64>()).sqrt();
    r.determinant() / w.powi(n as i32 + 2)
}

/// Cofactor matrix of a small square matrix.
fn cofactor(r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let minor = r.clone().remove_row(i).remove_column(j);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * if minor.nrows() == 0 {
            1.0
        } else {
            minor.determinant()
        }
    })
}

/// Linearizes `Op` at a feasible jet.
pub fn linearize(
    eq: Equation,
    du: &[f64],
    d2u: &DMatrix<f64>,
    g: &Guards,
) -> Result<OpLinearization, Infeasible> {
    let value = evaluate(eq, du, d2u, g)?;
    let n = du.len();
    let p = DVector::from_column_slice(du);
    let w2 = 1.0 - p.norm_squared();
    let w = w2.sqrt();
    match eq {
        Equation::KEta => {
            let jet = make_jet(du, d2u).map_err(|_| Infeasible::Spacelike(1.0))?;
            let lin = geometry::linearize(&jet).map_err(|_| Infeasible::Cone {
                kappa: jet.kappa().to_vec(),
                margin: jet.gamma_margin(),
            })?;
            Ok(OpLinearization {
                value,
                dp: lin.gs,
                dr: lin.gij,
            })
        }
        Equation::MeanCurvature => {
            let rp = d2u * &p;
            let prp = p.dot(&rp);
            let tr = d2u.trace();
            let w3 = w2 * w;
            let w5 = w3 * w2;
            let dp = DVector::from_fn(n, |s, _| {
                p[s] * tr / w3 + 3.0 * p[s] * prp / w5 + 2.0 * rp[s] / w3
            });
            let dr = DMatrix::from_fn(n, n, |i, j| {
                ((if i == j { 1.0 } else { 0.0 }) + p[i] * p[j] / w2) / w
            });
            Ok(OpLinearization { value, dp, dr })
        }
        Equation::LorentzGauss => {
            let scale = w.powi(n as i32 + 2);
            let dr = cofactor(d2u) / scale;
            let factor = value * (n as f64 + 2.0) / w2;
            let dp = DVector::from_fn(n, |s, _| factor * p[s]);
            Ok(OpLinearization { value, dp, dr })
        }
    }
}

/// `K_η ≥ (n−1)^n · Lorentz-Gauss` for convex jets, so scaling a
/// Lorentz-Gauss right-hand side by `(n−1)^{-n}` yields a `K_η` subsolution.
pub fn lorentz_gauss_scale(n: usize) -> f64 {
    ((n - 1) as f64).powi(n as i32)
}

/// Gamma margin of the curvature vector of a spacelike jet.
pub fn cone_margin(du: &[f64], d2u: &DMatrix<f64>) -> Option<f64> {
    make_jet(du, d2u)
        .ok()
        .map(|j| symfun::gamma_margin(j.kappa()))
}
