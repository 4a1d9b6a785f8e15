//! Boundary barriers near a point `x₀ ∈ ∂Ω`.
//!
//! In the frame with origin `x₀`, `e_n` the inner normal and `e_1..e_{n−1}`
//! the principal directions, `∂Ω` is locally the graph `x_n = ρ(x′)` and
//!
//! ```text
//! ω_δ = {ρ(x′) < x_n < ρ(x′) + δ², |x′| < δ}
//! v   = ρ(x′) − x_n − θ|x′|² + K x_n²
//! Ψ   = v − t d + (N/2) d²,     d = dist(x, ∂Ω).
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryPoint, DomainSpec};
use crate::symfun;

use super::EstimateEntry;

/// Parameters `θ, K, δ, t, N` of the barrier construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierParams {
    pub theta: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub delta: f64,
    pub t: f64,
    #[serde(rename = "N")]
    pub n_coef: f64,
}

/// Which part of `∂ω_δ` a lattice point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierPart {
    Interior,
    /// `x_n = ρ(x′)`.
    Bottom,
    /// `x_n = ρ(x′) + δ²`.
    Top,
    /// `|x′| = δ`.
    Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierPoint {
    /// `(x′, x_n)` in the boundary frame.
    pub local: Vec<f64>,
    /// Global coordinates.
    pub x: Vec<f64>,
    pub part: BarrierPart,
    pub rho: f64,
    pub v: f64,
    pub d: f64,
    pub psi: f64,
    /// `D²v` in the boundary frame.
    pub hess_v: DMatrix<f64>,
}

/// `v`, `Ψ` and `d` sampled on a lattice of `ω̄_δ`.
#[derive(Debug, Clone)]
pub struct BarrierBundle {
    pub x0: BoundaryPoint,
    pub params: BarrierParams,
    /// Columns `e_1, …, e_{n−1}, e_n` of the boundary frame.
    pub frame: DMatrix<f64>,
    pub points: Vec<BarrierPoint>,
}

/// Lattice points per unit of the `x′` and `x_n` parametrizations.
const LATTICE_2D: usize = 40;
const LATTICE_3D: usize = 16;

struct Frame<'a> {
    domain: &'a DomainSpec,
    origin: Vec<f64>,
    basis: DMatrix<f64>,
    depth: f64,
}

impl Frame<'_> {
    fn to_global(&self, local: &[f64]) -> Vec<f64> {
        let v = &self.basis * DVector::from_column_slice(local);
        self.origin
            .iter()
            .zip(v.iter())
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `ρ(x′)`: entry depth of the line `x′ = const` into `Ω`, found by
    /// exiting along `−e_n` from depth `depth`.
    fn rho(&self, xp: &[f64]) -> Result<f64> {
        let mut local = xp.to_vec();
        local.push(self.depth);
        let start = self.to_global(&local);
        if !self.domain.contains(&start) {
            return Err(Error::Config(format!(
                "the boundary is not a graph over |x'| = {:.3e} in the frame at the base point",
                xp.iter().map(|v| v * v).sum::<f64>().sqrt()
            )));
        }
        let down: Vec<f64> = self
            .basis
            .column(self.basis.ncols() - 1)
            .iter()
            .map(|v| -v)
            .collect();
        Ok(self.depth - self.domain.ray_exit(&start, &down))
    }

    /// `D²ρ(x′)` by implicit differentiation of `F(x′, ρ(x′)) = 0`.
    fn rho_hessian(&self, xp: &[f64], rho: f64) -> DMatrix<f64> {
        let n = self.basis.ncols();
        let m = n - 1;
        let mut local = xp.to_vec();
        local.push(rho);
        let y = self.to_global(&local);
        let g = self.basis.transpose() * DVector::from_vec(self.domain.level_gradient(&y));
        let hd = DMatrix::from_diagonal(&DVector::from_vec(self.domain.level_hessian_diag(&y)));
        let hl = self.basis.transpose() * hd * &self.basis;
        let gn = g[m];
        let dr: Vec<f64> = (0..m).map(|a| -g[a] / gn).collect();
        DMatrix::from_fn(m, m, |a, b| {
            -(hl[(a, b)] + hl[(a, m)] * dr[b] + hl[(b, m)] * dr[a] + hl[(m, m)] * dr[a] * dr[b])
                / gn
        })
    }
}

fn lattice_xprime(n: usize) -> Vec<(Vec<f64>, bool)> {
    // unit-ball samples in the x′ parametrization; flag = on |s| = 1
    match n {
        2 => (0..=LATTICE_2D)
            .map(|i| {
                let s = -1.0 + 2.0 * i as f64 / LATTICE_2D as f64;
                (vec![s], i == 0 || i == LATTICE_2D)
            })
            .collect(),
        _ => {
            let mut out = Vec::new();
            let m = LATTICE_3D;
            for i in 0..=m {
                for j in 0..=m {
                    let s = [
                        -1.0 + 2.0 * i as f64 / m as f64,
                        -1.0 + 2.0 * j as f64 / m as f64,
                    ];
                    if s[0] * s[0] + s[1] * s[1] < 1.0 - 1e-12 {
                        out.push((s.to_vec(), false));
                    }
                }
            }
            let ring = 4 * m;
            for k in 0..ring {
                let a = std::f64::consts::TAU * k as f64 / ring as f64;
                out.push((vec![a.cos(), a.sin()], true));
            }
            out
        }
    }
}

/// Builds `ω_δ`, `v`, `d` and `Ψ` at `x₀`.
///
/// Requires `(κ^b(x₀) − 3θ, 2K) ∈ Γ` and `ω_δ` small enough that `∂Ω` is a
/// graph over `|x′| ≤ δ`.
pub fn build_barriers(
    domain: &DomainSpec,
    x0: &BoundaryPoint,
    params: BarrierParams,
) -> Result<BarrierBundle> {
    domain.validate()?;
    let n = domain.dim();
    let BarrierParams {
        theta,
        k,
        delta,
        t,
        n_coef,
    } = params;
    for (name, v) in [("theta", theta), ("K", k), ("delta", delta)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!(
                "barrier parameter {name} must be positive, got {v}"
            )));
        }
    }
    if !(t.is_finite() && t >= 0.0 && n_coef.is_finite() && n_coef >= 0.0) {
        return Err(Error::Config(format!(
            "barrier parameters t = {t}, N = {n_coef} must be nonnegative"
        )));
    }
    let mut shifted: Vec<f64> = x0
        .principal_curvatures
        .iter()
        .map(|c| c - 3.0 * theta)
        .collect();
    shifted.push(2.0 * k);
    if !symfun::in_gamma(&shifted) {
        return Err(Error::Config(format!(
            "(kappa_b - 3 theta, 2K) = {shifted:?} is not in the cone (margin {:.3e}); decrease theta or increase K",
            symfun::gamma_margin(&shifted)
        )));
    }

    let mut basis = DMatrix::zeros(n, n);
    for (c, tvec) in x0
        .tangents
        .iter()
        .chain(std::iter::once(&x0.inner_normal))
        .enumerate()
    {
        for i in 0..n {
            basis[(i, c)] = tvec[i];
        }
    }
    let frame = Frame {
        domain,
        origin: x0.x.clone(),
        basis,
        depth: domain.inradius(),
    };

    let mut points = Vec::new();
    let layers = if n == 2 {
        LATTICE_2D / 2
    } else {
        LATTICE_3D / 2
    };
    for (s, on_side) in lattice_xprime(n) {
        let xp: Vec<f64> = s.iter().map(|v| v * delta).collect();
        let rho = frame.rho(&xp)?;
        let hrho = frame.rho_hessian(&xp, rho);
        let r2: f64 = xp.iter().map(|v| v * v).sum();
        for layer in 0..=layers {
            let tau = layer as f64 / layers as f64;
            let xn = if layer == layers {
                rho + delta * delta
            } else {
                rho + tau * delta * delta
            };
            let mut local = xp.clone();
            local.push(xn);
            let x = frame.to_global(&local);
            let part = if on_side {
                BarrierPart::Side
            } else if layer == 0 {
                BarrierPart::Bottom
            } else if layer == layers {
                BarrierPart::Top
            } else {
                BarrierPart::Interior
            };
            let v = rho - xn - theta * r2 + k * xn * xn;
            let d = if layer == 0 {
                0.0
            } else {
                domain.distance_to_boundary(&x)
            };
            let psi = v - t * d + 0.5 * n_coef * d * d;
            let mut hess_v = DMatrix::zeros(n, n);
            for a in 0..n - 1 {
                for b in 0..n - 1 {
                    hess_v[(a, b)] = hrho[(a, b)] - if a == b { 2.0 * theta } else { 0.0 };
                }
            }
            hess_v[(n - 1, n - 1)] = 2.0 * k;
            points.push(BarrierPoint {
                local,
                x,
                part,
                rho,
                v,
                d,
                psi,
                hess_v,
            });
        }
    }
    Ok(BarrierBundle {
        x0: x0.clone(),
        params,
        frame: frame.basis,
        points,
    })
}

fn shifted_in_gamma(points: &[BarrierPoint], eta: f64) -> bool {
    points.iter().all(|p| {
        let n = p.hess_v.nrows();
        let m = &p.hess_v - DMatrix::identity(n, n) * (2.0 * eta);
        symfun::in_gamma(m.symmetric_eigenvalues().as_slice())
    })
}

/// Largest `η ∈ [0, 1]` with `λ(D²v − 2ηI) ∈ Γ` at every lattice point (0 if
/// even `D²v` leaves the cone).
pub fn eta0(bundle: &BarrierBundle) -> f64 {
    let pts = &bundle.points;
    if !shifted_in_gamma(pts, 0.0) {
        return 0.0;
    }
    if shifted_in_gamma(pts, 1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if shifted_in_gamma(pts, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// The three boundary inequalities for `v`, the cone constant `η₀`, and the
/// sign conditions on `Ψ` and `−td + (N/2)d²` under `δ < 2t/N`.
pub fn check_barrier_inequalities(bundle: &BarrierBundle) -> Vec<EstimateEntry> {
    let BarrierParams {
        theta,
        delta,
        t,
        n_coef,
        k,
    } = bundle.params;
    let tol = 1e-12;
    let worst = |part: BarrierPart, bound: &dyn Fn(&BarrierPoint) -> f64| {
        bundle
            .points
            .iter()
            .filter(|p| p.part == part)
            .map(|p| p.v - bound(p))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let r2 = |p: &BarrierPoint| {
        p.local[..p.local.len() - 1]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
    };
    let tag = |e: EstimateEntry| e.with("theta", theta).with("K", k).with("delta", delta);
    let mut out = vec![
        tag(EstimateEntry::check(
            "barrier_bottom",
            worst(BarrierPart::Bottom, &|p| -0.5 * theta * r2(p)),
            0.0,
            tol,
        )),
        tag(EstimateEntry::check(
            "barrier_top",
            worst(BarrierPart::Top, &|_| -0.5 * delta * delta),
            0.0,
            tol,
        )),
        tag(EstimateEntry::check(
            "barrier_side",
            worst(BarrierPart::Side, &|_| -0.5 * theta * delta * delta),
            0.0,
            tol,
        )),
    ];
    let e0 = eta0(bundle);
    out.push(tag(EstimateEntry::check("eta0_positive", 1e-3, e0, 0.0)).with("eta0", e0));
    out.push(
        EstimateEntry::check("delta_below_2t_over_n", delta, 2.0 * t / n_coef, 0.0)
            .with("t", t)
            .with("N", n_coef),
    );
    let dist_term = bundle
        .points
        .iter()
        .map(|p| -t * p.d + 0.5 * n_coef * p.d * p.d)
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(EstimateEntry::check(
        "distance_term_nonpositive",
        dist_term,
        0.0,
        tol,
    ));
    let psi_max = bundle
        .points
        .iter()
        .map(|p| p.psi)
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(
        EstimateEntry::check("psi_nonpositive", psi_max, 0.0, tol)
            .with("t", t)
            .with("N", n_coef),
    );
    out
}

/// Default `t, N` for given `θ, K, δ`: `N = η₀/(4δ)` and `t = 1.1·Nδ/2`, so
/// that `Nδ + t < η₀/2` and `δ < 2t/N`.
pub fn default_barrier_params(
    domain: &DomainSpec,
    x0: &BoundaryPoint,
    theta: f64,
    k: f64,
    delta: f64,
) -> Result<BarrierParams> {
    let probe = build_barriers(
        domain,
        x0,
        BarrierParams {
            theta,
            k,
            delta,
            t: 0.0,
            n_coef: 0.0,
        },
    )?;
    let e0 = eta0(&probe);
    if e0 <= 0.0 {
        return Err(Error::Config(format!(
            "D^2 v leaves the cone on omega_delta for delta = {delta}"
        )));
    }
    let n_coef = e0 / (4.0 * delta);
    Ok(BarrierParams {
        theta,
        k,
        delta,
        t: 1.1 * n_coef * delta / 2.0,
        n_coef,
    })
}

/// One sweep step: `δ` and the barrier entries at that `δ`.
pub type SweepRun = (f64, Vec<EstimateEntry>);

/// Runs the barrier checks for `δ ∈ {0.2, 0.1, 0.05, 0.025}·inradius` and
/// appends a monotonicity entry: once the three inequalities for `v` hold at
/// some `δ` they must hold for every smaller `δ`.
pub fn barrier_delta_sweep(
    domain: &DomainSpec,
    x0: &BoundaryPoint,
    theta: f64,
    k: f64,
) -> Result<(Vec<SweepRun>, EstimateEntry)> {
    let mut runs = Vec::new();
    for f in [0.2, 0.1, 0.05, 0.025] {
        let delta = f * domain.inradius();
        let params = default_barrier_params(domain, x0, theta, k, delta)?;
        let bundle = build_barriers(domain, x0, params)?;
        runs.push((delta, check_barrier_inequalities(&bundle)));
    }
    let holds: Vec<bool> = runs
        .iter()
        .map(|(_, e)| e[..3].iter().all(EstimateEntry::passed))
        .collect();
    let violations = holds.windows(2).filter(|w| w[0] && !w[1]).count();
    let entry = EstimateEntry::check("barrier_delta_monotone", violations as f64, 0.0, 0.0);
    Ok((runs, entry))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_bottom() -> (DomainSpec, BoundaryPoint) {
        let d = DomainSpec::disk(vec![0.0, 0.0], 1.0);
        let bp = d.boundary_point_at(vec![0.0, -1.0]);
        (d, bp)
    }

    fn params(delta: f64) -> BarrierParams {
        BarrierParams {
            theta: 0.1,
            k: 1.0,
            delta,
            t: 0.5,
            n_coef: 1.0,
        }
    }

    #[test]
    fn disk_rho_and_v_at_origin() {
        let (d, bp) = disk_bottom();
        let b = build_barriers(&d, &bp, params(0.05)).unwrap();
        for p in &b.points {
            // ρ(x′) = 1 − sqrt(1 − x′²) on the unit disk
            let xp = p.local[0];
            assert!((p.rho - (1.0 - (1.0 - xp * xp).sqrt())).abs() < 1e-14);
            let rho2 = 1.0 / (1.0 - xp * xp).powf(1.5);
            assert!((p.hess_v[(0, 0)] - (rho2 - 0.2)).abs() < 1e-12);
            assert_eq!(p.hess_v[(1, 1)], 2.0);
        }
        let origin = b
            .points
            .iter()
            .find(|p| p.local[0] == 0.0 && p.part == BarrierPart::Bottom)
            .unwrap();
        assert!(origin.v.abs() < 1e-15 && origin.psi.abs() < 1e-15);
    }

    #[test]
    fn disk_inequalities_small_and_large_delta() {
        let (d, bp) = disk_bottom();
        let p = default_barrier_params(&d, &bp, 0.1, 1.0, 0.05).unwrap();
        let e = check_barrier_inequalities(&build_barriers(&d, &bp, p).unwrap());
        assert!(e.iter().all(EstimateEntry::passed), "{e:#?}");
        let p = default_barrier_params(&d, &bp, 0.1, 1.0, 0.5).unwrap();
        let e = check_barrier_inequalities(&build_barriers(&d, &bp, p).unwrap());
        assert!(e[..3].iter().any(|x| !x.passed() && x.slack < 0.0));
    }

    #[test]
    fn eta0_for_the_disk() {
        // D²v = diag(ρ'' − 2θ, 2K) with ρ'' ≥ 1; both entries must stay positive,
        // so η₀ = (min ρ'' − 2θ)/2 = 0.4 at x′ = 0.
        let (d, bp) = disk_bottom();
        let b = build_barriers(&d, &bp, params(0.05)).unwrap();
        assert!((eta0(&b) - 0.4).abs() < 1e-9, "{}", eta0(&b));
    }

    #[test]
    fn cone_precondition() {
        let (d, bp) = disk_bottom();
        let bad = BarrierParams {
            theta: 0.5,
            ..params(0.05)
        };
        // (1 − 1.5, 2) has λ = (2, −0.5)
        assert!(build_barriers(&d, &bp, bad).is_err());
    }

    #[test]
    fn ellipse_rho_matches_parametrization() {
        let d = DomainSpec::ellipse(vec![0.0, 0.0], vec![2.0, 1.0]);
        let bp = d.boundary_point_at(vec![2.0, 0.0]);
        let b = build_barriers(
            &d,
            &bp,
            BarrierParams {
                delta: 0.1,
                ..params(0.1)
            },
        )
        .unwrap();
        for p in b.points.iter().filter(|p| p.part == BarrierPart::Bottom) {
            let y = &p.x;
            assert!((y[0] * y[0] / 4.0 + y[1] * y[1] - 1.0).abs() < 1e-12);
            // ρ'' at the vertex is the curvature a/b² = 2
            if p.local[0] == 0.0 {
                assert!((p.hess_v[(0, 0)] + 0.2 - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sweep_is_monotone_on_disks() {
        let (d, bp) = disk_bottom();
        let (runs, mono) = barrier_delta_sweep(&d, &bp, 0.1, 1.0).unwrap();
        assert_eq!(runs.len(), 4);
        assert!(mono.passed());
        assert!(runs.last().unwrap().1.iter().all(EstimateEntry::passed));
    }

    #[test]
    fn ball_in_three_dimensions() {
        let d = DomainSpec::disk(vec![0.0, 0.0, 0.0], 1.0);
        let bp = d.boundary_point_at(vec![0.0, 0.0, -1.0]);
        let p = default_barrier_params(&d, &bp, 0.1, 1.0, 0.05).unwrap();
        let b = build_barriers(&d, &bp, p).unwrap();
        assert!(b.points.iter().any(|p| p.part == BarrierPart::Side));
        assert!(check_barrier_inequalities(&b)
            .iter()
            .all(EstimateEntry::passed));
    }
}
