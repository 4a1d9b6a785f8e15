//! Convex domains, masked finite-difference grids and discrete derivatives.
//!
//! Nodes of the bounding box that fall inside `Ω` carry values. Each stencil
//! arm that would leave `Ω` is cut at the exact boundary intersection
//! (Shortley–Weller), where the Dirichlet data lives. Nodes closer than
//! [`MIN_ARM_FRACTION`] of a step to the boundary along some stencil
//! direction are *pinned*: they carry no equation, and in solves their value
//! is extrapolated from the boundary point and the two nodes behind them.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::sorted_eigen;
use crate::symfun;

/// Arms shorter than this fraction of the step make a node pinned.
pub const MIN_ARM_FRACTION: f64 = 0.25;

const INSIDE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Disk,
    Ellipse,
    Superellipse,
}

/// `Ω = {x : Σ |(x_i - c_i)/a_i|^p < 1}` with `p = 2` for disks and ellipses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub center: Vec<f64>,
    pub semi_axes: Vec<f64>,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_exponent() -> f64 {
    2.0
}

impl DomainSpec {
    pub fn disk(center: Vec<f64>, radius: f64) -> Self {
        let n = center.len();
        Self {
            kind: DomainKind::Disk,
            center,
            semi_axes: vec![radius; n],
            exponent: 2.0,
        }
    }

    pub fn ellipse(center: Vec<f64>, semi_axes: Vec<f64>) -> Self {
        Self {
            kind: DomainKind::Ellipse,
            center,
            semi_axes,
            exponent: 2.0,
        }
    }

    pub fn superellipse(center: Vec<f64>, semi_axes: Vec<f64>, exponent: f64) -> Self {
        Self {
            kind: DomainKind::Superellipse,
            center,
            semi_axes,
            exponent,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if !(2..=3).contains(&n) {
            return Err(Error::Config(format!(
                "domain dimension {n} not supported (2 or 3)"
            )));
        }
        if self.semi_axes.len() != n {
            return Err(Error::Config(
                "semi_axes length differs from center length".into(),
            ));
        }
        if self.semi_axes.iter().any(|a| !(a.is_finite() && *a > 0.0))
            || self.center.iter().any(|c| !c.is_finite())
        {
            return Err(Error::Config(
                "semi-axes must be positive and finite".into(),
            ));
        }
        match self.kind {
            DomainKind::Disk => {
                if self.semi_axes.iter().any(|a| *a != self.semi_axes[0]) {
                    return Err(Error::Config("disk needs equal semi-axes".into()));
                }
                if self.exponent != 2.0 {
                    return Err(Error::Config("disk exponent must be 2".into()));
                }
            }
            DomainKind::Ellipse => {
                if self.exponent != 2.0 {
                    return Err(Error::Config("ellipse exponent must be 2".into()));
                }
            }
            DomainKind::Superellipse => {
                if !(self.exponent.is_finite() && self.exponent >= 2.0) {
                    return Err(Error::Config("superellipse exponent must be >= 2".into()));
                }
            }
        }
        Ok(())
    }

    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .zip(&self.semi_axes)
            .map(|((x, c), a)| (x - c) / a)
            .collect()
    }

    /// Level-set function, negative inside.
    pub fn level(&self, x: &[f64]) -> f64 {
        let p = self.exponent;
        self.scaled(x).iter().map(|y| y.abs().powf(p)).sum::<f64>() - 1.0
    }

    pub fn level_gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = self.exponent;
        self.scaled(x)
            .iter()
            .zip(&self.semi_axes)
            .map(|(y, a)| p * y.abs().powf(p - 1.0) * y.signum() / a)
            .collect()
    }

    /// Diagonal of the level-set Hessian (it is diagonal).
    pub fn level_hessian_diag(&self, x: &[f64]) -> Vec<f64> {
        let p = self.exponent;
        self.scaled(x)
            .iter()
            .zip(&self.semi_axes)
            .map(|(y, a)| p * (p - 1.0) * y.abs().powf(p - 2.0) / (a * a))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.level(x) < -INSIDE_TOL
    }

    /// Distance from an interior point to `∂Ω` along the unit direction `dir`.
    pub fn ray_exit(&self, x: &[f64], dir: &[f64]) -> f64 {
        if self.exponent == 2.0 {
            let y = self.scaled(x);
            let d: Vec<f64> = dir
                .iter()
                .zip(&self.semi_axes)
                .map(|(d, a)| d / a)
                .collect();
            let a: f64 = d.iter().map(|v| v * v).sum();
            let b: f64 = 2.0 * y.iter().zip(&d).map(|(y, d)| y * d).sum::<f64>();
            let c: f64 = y.iter().map(|v| v * v).sum::<f64>() - 1.0;
            let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
            // roots q/a and c/q; c < 0 inside so exactly one is positive
            let q = -0.5 * (b + b.signum() * disc);
            let r1 = q / a;
            let r2 = if q != 0.0 { c / q } else { r1 };
            return r1.max(r2);
        }
        let at = |t: f64| {
            let p: Vec<f64> = x.iter().zip(dir).map(|(x, d)| x + t * d).collect();
            self.level(&p)
        };
        let mut hi = self.semi_axes.iter().copied().fold(0.0, f64::max);
        while at(hi) < 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if at(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Boundary point in the direction of the unit vector `u` (superquadric map).
    pub fn boundary_point_toward(&self, u: &[f64]) -> Vec<f64> {
        let e = 2.0 / self.exponent;
        u.iter()
            .zip(&self.center)
            .zip(&self.semi_axes)
            .map(|((u, c), a)| c + a * u.signum() * u.abs().powf(e))
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        let amax = self.semi_axes.iter().copied().fold(0.0, f64::max);
        if self.exponent == 2.0 {
            return 2.0 * amax;
        }
        // symmetric about the center: diameter = 2 max |x - c| over ∂Ω
        let radius = |u: &[f64]| {
            let b = self.boundary_point_toward(u);
            b.iter()
                .zip(&self.center)
                .map(|(b, c)| (b - c).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        match self.dim() {
            2 => {
                let f = |t: f64| radius(&[t.cos(), t.sin()]);
                let m = 4096;
                let step = std::f64::consts::TAU / m as f64;
                let best = (0..m)
                    .map(|k| k as f64 * step)
                    .max_by(|a, b| f(*a).total_cmp(&f(*b)))
                    .unwrap();
                2.0 * golden_max(f, best - step, best + step)
            }
            _ => {
                let pts = fibonacci_sphere(20000);
                2.0 * pts.iter().map(|u| radius(u)).fold(0.0, f64::max)
            }
        }
    }

    /// Radius of the largest inscribed ball (the smallest semi-axis, since
    /// these domains are symmetric about their center).
    pub fn inradius(&self) -> f64 {
        self.semi_axes.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Outward unit normal at a boundary point.
    pub fn outer_normal(&self, x: &[f64]) -> Vec<f64> {
        let g = self.level_gradient(x);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        g.iter().map(|v| v / norm).collect()
    }

    /// Euclidean distance from a point of `Ω̄` to `∂Ω`.
    ///
    /// Closed form for disks. Otherwise the nearest point is found by the
    /// fixed-point iteration `y ← x + t(y)·ν_out(y)` (ray exit along the
    /// normal at the current foot point), which contracts for points closer
    /// to the boundary than the smallest radius of curvature.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        if self.kind == DomainKind::Disk {
            let r: f64 = x
                .iter()
                .zip(&self.center)
                .map(|(a, c)| (a - c).powi(2))
                .sum::<f64>()
                .sqrt();
            return (self.semi_axes[0] - r).max(0.0);
        }
        if self.level(x) >= 0.0 {
            return 0.0;
        }
        let mut dir = self.outer_normal(x);
        let mut dist = self.ray_exit(x, &dir);
        for _ in 0..200 {
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + dist * d).collect();
            let next = self.outer_normal(&y);
            let change: f64 = next
                .iter()
                .zip(&dir)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            dir = next;
            dist = self.ray_exit(x, &dir);
            if change < 1e-15 {
                break;
            }
        }
        dist
    }

    /// Closed-form boundary geometry at a point of `∂Ω`.
    pub fn boundary_point_at(&self, x: Vec<f64>) -> BoundaryPoint {
        let n = self.dim();
        let g = self.level_gradient(&x);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let normal: Vec<f64> = g.iter().map(|v| -v / gnorm).collect();
        let hd = self.level_hessian_diag(&x);
        let basis = tangent_basis(&normal);
        // shape operator on the tangent space: Tᵀ Hess(F) T / |∇F|
        let m = n - 1;
        let s = DMatrix::from_fn(m, m, |a, b| {
            (0..n)
                .map(|i| basis[a][i] * hd[i] * basis[b][i])
                .sum::<f64>()
                / gnorm
        });
        let (curv, frame) = sorted_eigen(&s);
        let tangents: Vec<Vec<f64>> = (0..m)
            .map(|c| {
                (0..n)
                    .map(|i| (0..m).map(|a| basis[a][i] * frame[(a, c)]).sum())
                    .collect()
            })
            .collect();
        BoundaryPoint {
            x,
            inner_normal: normal,
            principal_curvatures: curv,
            tangents,
        }
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    for _ in 0..100 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    f(0.5 * (a + b))
}

fn fibonacci_sphere(m: usize) -> Vec<Vec<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..m)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * k as f64;
            vec![r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

/// Orthonormal basis of the complement of the unit vector `nrm`.
fn tangent_basis(nrm: &[f64]) -> Vec<Vec<f64>> {
    let n = nrm.len();
    if n == 2 {
        return vec![vec![-nrm[1], nrm[0]]];
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut axes: Vec<usize> = (0..n).collect();
    axes.sort_by(|&i, &j| nrm[i].abs().total_cmp(&nrm[j].abs()));
    for &ax in &axes {
        if basis.len() == n - 1 {
            break;
        }
        let mut v = vec![0.0; n];
        v[ax] = 1.0;
        for b in std::iter::once(nrm).chain(basis.iter().map(|b| b.as_slice())) {
            let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            for i in 0..n {
                v[i] -= dot * b[i];
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.iter().map(|a| a / norm).collect());
        }
    }
    basis
}

/// A point of `∂Ω` with its inner unit normal and principal curvatures.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint {
    pub x: Vec<f64>,
    pub inner_normal: Vec<f64>,
    /// Ascending `κ^b_1 ≤ … ≤ κ^b_{n-1}`.
    pub principal_curvatures: Vec<f64>,
    /// Unit principal directions matching `principal_curvatures`.
    pub tangents: Vec<Vec<f64>>,
}

/// Samples `∂Ω`: uniform in angle for `n = 2`, a Fibonacci lattice for `n = 3`.
pub fn boundary_geometry(domain: &DomainSpec, samples: usize) -> Result<Vec<BoundaryPoint>> {
    domain.validate()?;
    if samples < 8 {
        return Err(Error::Config(format!(
            "need at least 8 boundary samples, got {samples}"
        )));
    }
    let dirs: Vec<Vec<f64>> = match domain.dim() {
        2 => (0..samples)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / samples as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => fibonacci_sphere(samples),
    };
    Ok(dirs
        .iter()
        .map(|u| domain.boundary_point_at(domain.boundary_point_toward(u)))
        .collect())
}

/// Whether `(κ^b(x), K) ∈ Γ` at every sampled boundary point; returns the
/// smallest gamma margin seen.
pub fn admissible_domain_check(domain: &DomainSpec, k: f64, samples: usize) -> Result<(bool, f64)> {
    if !(k > 0.0) {
        return Err(Error::Config("K must be positive".into()));
    }
    let mut margin = f64::INFINITY;
    for bp in boundary_geometry(domain, samples)? {
        let mut v = bp.principal_curvatures.clone();
        v.push(k);
        margin = margin.min(symfun::gamma_margin(&v));
    }
    Ok((margin > 0.0, margin))
}

/// Per-node classification written to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeMask {
    Interior,
    BoundaryAdjacent,
    Exterior,
}

impl NodeMask {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeMask::Interior => "interior",
            NodeMask::BoundaryAdjacent => "boundary-adjacent",
            NodeMask::Exterior => "exterior",
        }
    }
}

/// A linear combination of node values and boundary-trace values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Form {
    pub nodes: Vec<(u32, f64)>,
    pub bdry: Vec<(u32, f64)>,
}

impl Form {
    fn push_node(&mut self, i: usize, c: f64) {
        self.nodes.push((i as u32, c));
    }

    fn push_bdry(&mut self, i: usize, c: f64) {
        self.bdry.push((i as u32, c));
    }

    fn scaled_into(&self, s: f64, out: &mut Form) {
        out.nodes
            .extend(self.nodes.iter().map(|&(i, c)| (i, s * c)));
        out.bdry.extend(self.bdry.iter().map(|&(i, c)| (i, s * c)));
    }

    fn compact(mut self) -> Form {
        fn merge(v: &mut Vec<(u32, f64)>) {
            v.sort_by_key(|e| e.0);
            let mut out: Vec<(u32, f64)> = Vec::with_capacity(v.len());
            for &(i, c) in v.iter() {
                match out.last_mut() {
                    Some(last) if last.0 == i => last.1 += c,
                    _ => out.push((i, c)),
                }
            }
            *v = out;
        }
        merge(&mut self.nodes);
        merge(&mut self.bdry);
        self
    }

    pub fn eval(&self, nodes: &[f64], bdry: &[f64]) -> f64 {
        let a: f64 = self.nodes.iter().map(|&(i, c)| c * nodes[i as usize]).sum();
        let b: f64 = self.bdry.iter().map(|&(i, c)| c * bdry[i as usize]).sum();
        a + b
    }
}

/// Gradient and Hessian stencils of one equation node.
#[derive(Debug, Clone, Default)]
pub struct NodeStencil {
    pub grad: Vec<Form>,
    /// Upper triangle, row-major: (0,0), (0,1), …, (n-1,n-1).
    pub hess: Vec<Form>,
}

#[derive(Debug, Clone, Copy)]
enum Arm {
    Node(usize),
    Boundary(usize),
}

/// A masked grid over a convex domain.
#[derive(Debug)]
pub struct Grid {
    domain: DomainSpec,
    h: f64,
    dims: Vec<usize>,
    origin: Vec<f64>,
    /// bbox index of each node carrying a value, lexicographic.
    node_bbox: Vec<usize>,
    node_mask: Vec<NodeMask>,
    node_of_bbox: Vec<u32>,
    /// Node index of every equation node.
    masters: Vec<usize>,
    master_of_node: Vec<u32>,
    /// Pinned node values as forms over master and boundary values.
    pinned_forms: Vec<(usize, Form)>,
    bpoints: Vec<Vec<f64>>,
    stencils: Vec<NodeStencil>,
    reduced: Vec<NodeStencil>,
    lower_bw: usize,
    upper_bw: usize,
}

const NONE: u32 = u32::MAX;

impl Grid {
    /// Builds the grid skeleton for `domain` at spacing `h`.
    pub fn build(domain: &DomainSpec, h: f64) -> Result<Arc<Grid>> {
        domain.validate()?;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Config(format!(
                "grid spacing must be positive, got {h}"
            )));
        }
        let n = domain.dim();
        let half: Vec<usize> = domain
            .semi_axes
            .iter()
            .map(|a| (a / h).ceil() as usize + 2)
            .collect();
        let dims: Vec<usize> = half.iter().map(|k| 2 * k + 1).collect();
        let total: usize = dims.iter().product();
        if total > 60_000_000 {
            return Err(Error::Config(format!(
                "grid with {total} bounding nodes is too large"
            )));
        }
        let origin: Vec<f64> = domain
            .center
            .iter()
            .zip(&half)
            .map(|(c, k)| c - *k as f64 * h)
            .collect();
        let strides = strides(&dims);
        let coords = |idx: usize| -> Vec<f64> {
            let mut rem = idx;
            (0..n)
                .map(|k| {
                    let i = rem / strides[k];
                    rem %= strides[k];
                    origin[k] + i as f64 * h
                })
                .collect()
        };

        let inside: Vec<bool> = (0..total).map(|i| domain.contains(&coords(i))).collect();
        let dirs = directions(n);

        // Offsets in bbox index for each direction; all nodes considered are
        // at least two cells away from the bbox edge.
        let offsets: Vec<isize> = dirs
            .iter()
            .map(|d| {
                d.iter()
                    .zip(&strides)
                    .map(|(s, st)| *s as isize * *st as isize)
                    .sum()
            })
            .collect();

        let node_bbox: Vec<usize> = (0..total).filter(|&i| inside[i]).collect();
        let mut node_of_bbox = vec![NONE; total];
        for (k, &b) in node_bbox.iter().enumerate() {
            node_of_bbox[b] = k as u32;
        }

        // Exit distance of every clipped direction, as a fraction of the step.
        let mut clipped: Vec<Vec<(usize, f64)>> = vec![Vec::new(); node_bbox.len()];
        for (k, &b) in node_bbox.iter().enumerate() {
            let x = coords(b);
            for (di, d) in dirs.iter().enumerate() {
                let nb = (b as isize + offsets[di]) as usize;
                if inside[nb] {
                    continue;
                }
                let len = step_len(d);
                let unit: Vec<f64> = d.iter().map(|&s| s as f64 / len).collect();
                let t = domain.ray_exit(&x, &unit) / (len * h);
                clipped[k].push((di, t.min(1.0)));
            }
        }

        let mut master_of_node = vec![NONE; node_bbox.len()];
        let mut masters = Vec::new();
        for k in 0..node_bbox.len() {
            if clipped[k].iter().all(|&(_, t)| t >= MIN_ARM_FRACTION) {
                master_of_node[k] = masters.len() as u32;
                masters.push(k);
            }
        }
        if masters.is_empty() {
            return Err(Error::Config(format!(
                "spacing h = {h} leaves no interior nodes"
            )));
        }
        // at least three equation nodes along each axis through the center
        for ax in 0..n {
            let count = masters
                .iter()
                .filter(|&&k| {
                    let x = coords(node_bbox[k]);
                    (0..n).all(|j| j == ax || (x[j] - domain.center[j]).abs() < 0.5 * h)
                })
                .count();
            if count < 3 {
                return Err(Error::Config(format!(
                    "spacing h = {h} is too coarse: {count} interior nodes along axis {}",
                    ax + 1
                )));
            }
        }

        let mut bpoints: Vec<Vec<f64>> = Vec::new();
        let mut add_bpoint = |x: &[f64], d: &[i8], frac: f64| -> usize {
            let len = step_len(d) * h * frac;
            let norm = step_len(d);
            bpoints.push(
                x.iter()
                    .zip(d)
                    .map(|(x, &s)| x + len * s as f64 / norm)
                    .collect(),
            );
            bpoints.len() - 1
        };

        let node_mask: Vec<NodeMask> = (0..node_bbox.len())
            .map(|k| {
                if clipped[k].is_empty() {
                    NodeMask::Interior
                } else {
                    NodeMask::BoundaryAdjacent
                }
            })
            .collect();

        // stencils at masters, in node values
        let mut stencils = Vec::with_capacity(masters.len());
        for &k in &masters {
            let b = node_bbox[k];
            let x = coords(b);
            let mut arms: Vec<(Arm, f64)> = Vec::with_capacity(dirs.len());
            for (di, d) in dirs.iter().enumerate() {
                let len = step_len(d) * h;
                match clipped[k].iter().find(|c| c.0 == di) {
                    Some(&(_, frac)) => {
                        let bi = add_bpoint(&x, d, frac);
                        arms.push((Arm::Boundary(bi), frac * len));
                    }
                    None => {
                        let nb = (b as isize + offsets[di]) as usize;
                        arms.push((Arm::Node(node_of_bbox[nb] as usize), len));
                    }
                }
            }
            let far = |di: usize| -> Option<usize> {
                let nb = (b as isize + 2 * offsets[di]) as usize;
                let id = node_of_bbox.get(nb).copied().unwrap_or(NONE);
                (id != NONE).then_some(id as usize)
            };
            stencils.push(master_stencil(n, k, &dirs, &arms, h, far));
        }

        // pinned nodes: extrapolate along the shortest arm from the boundary
        // point and the two nodes behind
        let mut pinned_forms = Vec::new();
        for k in 0..node_bbox.len() {
            if master_of_node[k] != NONE {
                continue;
            }
            let b = node_bbox[k];
            let x = coords(b);
            let &(di, frac) = clipped[k]
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("pinned nodes have a clipped arm");
            let d = &dirs[di];
            let bi = add_bpoint(&x, d, frac);
            let back = |m: isize| -> Option<usize> {
                let nb = (b as isize - m * offsets[di]) as usize;
                let id = node_of_bbox.get(nb).copied().unwrap_or(NONE);
                (id != NONE && master_of_node[id as usize] != NONE)
                    .then_some(master_of_node[id as usize] as usize)
            };
            let mut f = Form::default();
            match (back(1), back(2)) {
                (Some(m1), Some(m2)) => {
                    let w = fornberg(0.0, &[frac, -1.0, -2.0], 0);
                    f.push_bdry(bi, w[0][0]);
                    f.push_node(m1, w[0][1]);
                    f.push_node(m2, w[0][2]);
                }
                (Some(m1), None) => {
                    let w = fornberg(0.0, &[frac, -1.0], 0);
                    f.push_bdry(bi, w[0][0]);
                    f.push_node(m1, w[0][1]);
                }
                _ => f.push_bdry(bi, 1.0),
            }
            pinned_forms.push((k, f));
        }

        // reduce stencils to master + boundary unknowns
        let mut pinned_lookup: Vec<Option<usize>> = vec![None; node_bbox.len()];
        for (p, (k, _)) in pinned_forms.iter().enumerate() {
            pinned_lookup[*k] = Some(p);
        }
        let reduce = |f: &Form| -> Form {
            let mut out = Form {
                nodes: Vec::new(),
                bdry: f.bdry.clone(),
            };
            for &(node, c) in &f.nodes {
                let m = master_of_node[node as usize];
                if m != NONE {
                    out.nodes.push((m, c));
                } else {
                    let p = pinned_lookup[node as usize].expect("non-master nodes are pinned");
                    pinned_forms[p].1.scaled_into(c, &mut out);
                }
            }
            out.compact()
        };
        let reduced: Vec<NodeStencil> = stencils
            .iter()
            .map(|s| NodeStencil {
                grad: s.grad.iter().map(reduce).collect(),
                hess: s.hess.iter().map(reduce).collect(),
            })
            .collect();

        let (mut lower_bw, mut upper_bw) = (0usize, 0usize);
        for (row, s) in reduced.iter().enumerate() {
            for f in s.grad.iter().chain(&s.hess) {
                for &(col, _) in &f.nodes {
                    let col = col as usize;
                    if col < row {
                        lower_bw = lower_bw.max(row - col);
                    } else {
                        upper_bw = upper_bw.max(col - row);
                    }
                }
            }
        }

        Ok(Arc::new(Grid {
            domain: domain.clone(),
            h,
            dims,
            origin,
            node_bbox,
            node_mask,
            node_of_bbox,
            masters,
            master_of_node,
            pinned_forms,
            bpoints,
            stencils,
            reduced,
            lower_bw,
            upper_bw,
        }))
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn bbox_dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of nodes carrying values (equation nodes plus pinned nodes).
    pub fn node_count(&self) -> usize {
        self.node_bbox.len()
    }

    pub fn master_count(&self) -> usize {
        self.masters.len()
    }

    pub fn masters(&self) -> &[usize] {
        &self.masters
    }

    pub fn master_of_node(&self, node: usize) -> Option<usize> {
        let m = self.master_of_node[node];
        (m != NONE).then_some(m as usize)
    }

    pub fn is_pinned(&self, node: usize) -> bool {
        self.master_of_node[node] == NONE
    }

    pub fn mask(&self, node: usize) -> NodeMask {
        self.node_mask[node]
    }

    /// Mask of an arbitrary bounding-box node.
    pub fn bbox_mask(&self, bbox: usize) -> NodeMask {
        match self.node_of_bbox[bbox] {
            NONE => NodeMask::Exterior,
            k => self.node_mask[k as usize],
        }
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        self.bbox_coords(self.node_bbox[node])
    }

    pub fn bbox_coords(&self, bbox: usize) -> Vec<f64> {
        let st = strides(&self.dims);
        let mut rem = bbox;
        (0..self.dim())
            .map(|k| {
                let i = rem / st[k];
                rem %= st[k];
                self.origin[k] + i as f64 * self.h
            })
            .collect()
    }

    pub fn master_coords(&self, m: usize) -> Vec<f64> {
        self.node_coords(self.masters[m])
    }

    pub fn boundary_points(&self) -> &[Vec<f64>] {
        &self.bpoints
    }

    /// Stencils in terms of node values (for arbitrary fields).
    pub fn stencil(&self, m: usize) -> &NodeStencil {
        &self.stencils[m]
    }

    /// Stencils in terms of master unknowns and boundary values.
    pub fn reduced_stencil(&self, m: usize) -> &NodeStencil {
        &self.reduced[m]
    }

    pub fn pinned_forms(&self) -> &[(usize, Form)] {
        &self.pinned_forms
    }

    /// `(lower, upper)` bandwidth of the reduced stencils in master ordering.
    pub fn bandwidth(&self) -> (usize, usize) {
        (self.lower_bw, self.upper_bw)
    }

    /// Index into the upper-triangular Hessian storage.
    pub fn hess_index(&self, i: usize, j: usize) -> usize {
        hess_index(self.dim(), i, j)
    }
}

pub(crate) fn hess_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let n = dims.len();
    let mut st = vec![1; n];
    for k in (0..n - 1).rev() {
        st[k] = st[k + 1] * dims[k + 1];
    }
    st
}

/// Stencil directions: `±e_i`, then `±(e_i + e_j)`, `±(e_i - e_j)` for `i < j`.
fn directions(n: usize) -> Vec<Vec<i8>> {
    let mut dirs = Vec::new();
    for i in 0..n {
        for s in [1i8, -1] {
            let mut d = vec![0i8; n];
            d[i] = s;
            dirs.push(d);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for (si, sj) in [(1i8, 1i8), (-1, -1), (1, -1), (-1, 1)] {
                let mut d = vec![0i8; n];
                d[i] = si;
                d[j] = sj;
                dirs.push(d);
            }
        }
    }
    dirs
}

fn step_len(d: &[i8]) -> f64 {
    (d.iter().map(|&s| (s as f64).powi(2)).sum::<f64>()).sqrt()
}

fn dir_index(n: usize, d: &[i8]) -> usize {
    directions(n)
        .iter()
        .position(|e| e.as_slice() == d)
        .expect("known direction")
}

/// Fornberg finite-difference weights at `z` on nodes `x` for derivative
/// orders `0..=m`; `c[k][j]` weights `x[j]` for the `k`-th derivative.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let np = x.len();
    let mut c = vec![vec![0.0; np]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..np {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// First and second derivative forms along one line through node `k`.
fn line_derivatives(
    k: usize,
    plus: (Arm, f64),
    minus: (Arm, f64),
    far_plus: Option<usize>,
    far_minus: Option<usize>,
    step: f64,
) -> (Form, Form) {
    let push = |f: &mut Form, arm: Arm, c: f64| match arm {
        Arm::Node(i) => f.push_node(i, c),
        Arm::Boundary(i) => f.push_bdry(i, c),
    };
    let (hp, hm) = (plus.1, minus.1);

    let mut d1 = Form::default();
    let w1 = fornberg(0.0, &[hp, 0.0, -hm], 1);
    push(&mut d1, plus.0, w1[1][0]);
    d1.push_node(k, w1[1][1]);
    push(&mut d1, minus.0, w1[1][2]);

    let mut d2 = Form::default();
    let plus_cut = matches!(plus.0, Arm::Boundary(_));
    let minus_cut = matches!(minus.0, Arm::Boundary(_));
    match (plus_cut, minus_cut, far_plus, far_minus) {
        (true, false, _, Some(fm)) => {
            let w = fornberg(0.0, &[hp, 0.0, -step, -2.0 * step], 2);
            push(&mut d2, plus.0, w[2][0]);
            d2.push_node(k, w[2][1]);
            push(&mut d2, minus.0, w[2][2]);
            d2.push_node(fm, w[2][3]);
        }
        (false, true, Some(fp), _) => {
            let w = fornberg(0.0, &[-hm, 0.0, step, 2.0 * step], 2);
            push(&mut d2, minus.0, w[2][0]);
            d2.push_node(k, w[2][1]);
            push(&mut d2, plus.0, w[2][2]);
            d2.push_node(fp, w[2][3]);
        }
        _ => {
            let w = fornberg(0.0, &[hp, 0.0, -hm], 2);
            push(&mut d2, plus.0, w[2][0]);
            d2.push_node(k, w[2][1]);
            push(&mut d2, minus.0, w[2][2]);
        }
    }
    (d1, d2)
}

fn master_stencil(
    n: usize,
    k: usize,
    dirs: &[Vec<i8>],
    arms: &[(Arm, f64)],
    h: f64,
    far: impl Fn(usize) -> Option<usize>,
) -> NodeStencil {
    let along = |dp: &[i8]| -> (Form, Form) {
        let dm: Vec<i8> = dp.iter().map(|s| -s).collect();
        let ip = dir_index(n, dp);
        let im = dir_index(n, &dm);
        let step = step_len(&dirs[ip]) * h;
        let fp = matches!(arms[ip].0, Arm::Node(_))
            .then(|| far(ip))
            .flatten();
        let fm = matches!(arms[im].0, Arm::Node(_))
            .then(|| far(im))
            .flatten();
        line_derivatives(k, arms[ip], arms[im], fp, fm, step)
    };
    let mut grad = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let mut d = vec![0i8; n];
        d[i] = 1;
        let (d1, d2) = along(&d);
        grad.push(d1.compact());
        diag.push(d2);
    }
    let mut hess = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            if i == j {
                hess.push(diag[i].clone().compact());
                continue;
            }
            let mut dd = vec![0i8; n];
            dd[i] = 1;
            dd[j] = 1;
            let mut de = vec![0i8; n];
            de[i] = 1;
            de[j] = -1;
            let (_, sdd) = along(&dd);
            let (_, see) = along(&de);
            // u_ij = (D_dd - D_ee)/2 along unit diagonals
            let mut f = Form::default();
            sdd.scaled_into(0.5, &mut f);
            see.scaled_into(-0.5, &mut f);
            hess.push(f.compact());
        }
    }
    NodeStencil { grad, hess }
}

/// Values on the nodes of a [`Grid`] plus the boundary trace.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    boundary: Vec<f64>,
}

impl GridField {
    /// Samples `f` at every node and boundary-trace point.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|k| f(&grid.node_coords(k)))
            .collect();
        let boundary = grid.bpoints.iter().map(|x| f(x)).collect();
        Self {
            grid: grid.clone(),
            values,
            boundary,
        }
    }

    pub fn from_parts(grid: &Arc<Grid>, values: Vec<f64>, boundary: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() || boundary.len() != grid.bpoints.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} node and {} boundary values, got {} and {}",
                grid.node_count(),
                grid.bpoints.len(),
                values.len(),
                boundary.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
            boundary,
        })
    }

    /// Builds a field from master unknowns; pinned values are extrapolated.
    pub fn from_masters(grid: &Arc<Grid>, masters: &[f64], boundary: Vec<f64>) -> Self {
        let mut values = vec![0.0; grid.node_count()];
        for (m, &k) in grid.masters.iter().enumerate() {
            values[k] = masters[m];
        }
        for (k, f) in &grid.pinned_forms {
            values[*k] = f.eval(masters, &boundary);
        }
        Self {
            grid: grid.clone(),
            values,
            boundary,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.boundary
    }

    pub fn master_values(&self) -> Vec<f64> {
        self.grid.masters.iter().map(|&k| self.values[k]).collect()
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .chain(&self.boundary)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &GridField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
            || (self.grid.domain == other.grid.domain && self.grid.h == other.grid.h)
    }

    pub fn gradient_at(&self, m: usize) -> Vec<f64> {
        self.grid.stencils[m]
            .grad
            .iter()
            .map(|f| f.eval(&self.values, &self.boundary))
            .collect()
    }

    pub fn hessian_at(&self, m: usize) -> DMatrix<f64> {
        let n = self.grid.dim();
        let s = &self.grid.stencils[m];
        DMatrix::from_fn(n, n, |i, j| {
            s.hess[hess_index(n, i, j)].eval(&self.values, &self.boundary)
        })
    }

    /// Writes `x_1,…,x_n,value,mask` rows in lexicographic node order.
    pub fn to_csv(&self) -> String {
        let n = self.grid.dim();
        let mut out = String::new();
        let header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        writeln!(out, "{},value,mask", header.join(",")).unwrap();
        for k in 0..self.grid.node_count() {
            for c in self.grid.node_coords(k) {
                write!(out, "{c:.16e},").unwrap();
            }
            writeln!(
                out,
                "{:.16e},{}",
                self.values[k],
                self.grid.node_mask[k].as_str()
            )
            .unwrap();
        }
        out
    }

    /// Parses CSV written by [`Self::to_csv`] against `grid`; node
    /// coordinates must match exactly. The boundary trace is supplied by the
    /// caller since it is not stored in the file.
    pub fn from_csv(grid: &Arc<Grid>, text: &str, boundary: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Io("empty CSV".into()))?;
        let want: Vec<String> = (1..=n)
            .map(|i| format!("x_{i}"))
            .chain(["value".into(), "mask".into()])
            .collect();
        if header.trim() != want.join(",") {
            return Err(Error::GridMismatch(format!("unexpected header '{header}'")));
        }
        let mut values = Vec::with_capacity(grid.node_count());
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != n + 2 {
                return Err(Error::Io(format!(
                    "row {}: expected {} columns",
                    row + 1,
                    n + 2
                )));
            }
            if row >= grid.node_count() {
                return Err(Error::GridMismatch("more rows than grid nodes".into()));
            }
            let x = grid.node_coords(row);
            for i in 0..n {
                let c: f64 = cols[i]
                    .parse()
                    .map_err(|_| Error::Io(format!("row {}: bad number", row + 1)))?;
                if c != x[i] {
                    return Err(Error::GridMismatch(format!(
                        "row {}: node coordinates differ",
                        row + 1
                    )));
                }
            }
            let v: f64 = cols[n]
                .parse()
                .map_err(|_| Error::Io(format!("row {}: bad value", row + 1)))?;
            if cols[n + 1] != grid.node_mask[row].as_str() {
                return Err(Error::GridMismatch(format!(
                    "row {}: mask differs",
                    row + 1
                )));
            }
            values.push(v);
        }
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "CSV has {} rows, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Self::from_parts(grid, values, boundary)
    }

    /// Value, gradient and Hessian at an arbitrary point of `Ω̄` from a
    /// least-squares cubic fit to nearby nodes and boundary-trace points.
    pub fn local_fit(&self, x0: &[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let n = self.grid.dim();
        let h = self.grid.h;
        let monos = monomials(n, 3);
        let mut radius = 3.0 * h;
        loop {
            let mut pts: Vec<(Vec<f64>, f64)> = Vec::new();
            let near = |x: &[f64]| {
                x.iter()
                    .zip(x0)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    <= radius
            };
            for k in 0..self.grid.node_count() {
                let x = self.grid.node_coords(k);
                if near(&x) {
                    pts.push((x, self.values[k]));
                }
            }
            for (i, x) in self.grid.bpoints.iter().enumerate() {
                if near(x) {
                    pts.push((x.clone(), self.boundary[i]));
                }
            }
            if pts.len() >= 2 * monos.len() || radius > 6.0 * h {
                if pts.len() < monos.len() {
                    return Err(Error::Config(
                        "not enough data near the point for a local fit".into(),
                    ));
                }
                let a = DMatrix::from_fn(pts.len(), monos.len(), |r, c| {
                    let y: Vec<f64> = pts[r].0.iter().zip(x0).map(|(a, b)| (a - b) / h).collect();
                    monos[c]
                        .iter()
                        .zip(&y)
                        .map(|(&e, y)| y.powi(e as i32))
                        .product()
                });
                let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
                let coef = a
                    .svd(true, true)
                    .solve(&b, 1e-12)
                    .map_err(|e| Error::Config(format!("local fit failed: {e}")))?;
                let find = |e: &[u8]| monos.iter().position(|m| m.as_slice() == e).unwrap();
                let mut grad = vec![0.0; n];
                let mut hess = DMatrix::zeros(n, n);
                let mut e = vec![0u8; n];
                for i in 0..n {
                    e[i] = 1;
                    grad[i] = coef[find(&e)] / h;
                    e[i] = 0;
                }
                for i in 0..n {
                    for j in 0..n {
                        e[i] += 1;
                        e[j] += 1;
                        let c = coef[find(&e)];
                        hess[(i, j)] = if i == j { 2.0 * c } else { c } / (h * h);
                        e[i] -= 1;
                        e[j] -= 1;
                    }
                }
                return Ok((coef[0], grad, hess));
            }
            radius += h;
        }
    }
}

fn monomials(n: usize, deg: u8) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut e = vec![0u8; n];
    fn rec(i: usize, left: u8, e: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if i == e.len() {
            out.push(e.clone());
            return;
        }
        for k in 0..=left {
            e[i] = k;
            rec(i + 1, left - k, e, out);
        }
        e[i] = 0;
    }
    rec(0, deg, &mut e, &mut out);
    out.sort_by_key(|m| m.iter().map(|&v| v as u32).sum::<u32>());
    out
}

/// Discrete gradient at every equation node.
pub fn fd_gradient(field: &GridField) -> Vec<Vec<f64>> {
    (0..field.grid.master_count())
        .map(|m| field.gradient_at(m))
        .collect()
}

/// Discrete Hessian at every equation node.
pub fn fd_hessian(field: &GridField) -> Vec<DMatrix<f64>> {
    (0..field.grid.master_count())
        .map(|m| field.hessian_at(m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_disk() -> DomainSpec {
        DomainSpec::disk(vec![0.0, 0.0], 1.0)
    }

    #[test]
    fn unit_disk_coarse_enumeration() {
        let g = Grid::build(&unit_disk(), 0.5).unwrap();
        assert_eq!(g.bbox_dims(), &[9, 9]);
        // direct enumeration: lattice points of spacing 0.5 strictly inside
        let mut count = 0;
        for i in -4i32..=4 {
            for j in -4i32..=4 {
                let (x, y) = (0.5 * i as f64, 0.5 * j as f64);
                if x * x + y * y < 1.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(g.node_count(), count);
        assert!(g.node_count() >= 5);
    }

    #[test]
    fn ellipse_node_count_tracks_area() {
        let d = DomainSpec::ellipse(vec![0.0, 0.0], vec![2.0, 1.0]);
        let g = Grid::build(&d, 0.1).unwrap();
        let area = std::f64::consts::PI * 2.0 * 1.0;
        let expect = area / 0.01;
        let rel = (g.node_count() as f64 - expect).abs() / expect;
        assert!(rel < 0.15, "{} vs {expect}", g.node_count());
    }

    #[test]
    fn too_coarse_is_rejected() {
        assert!(matches!(
            Grid::build(&unit_disk(), 0.9),
            Err(Error::Config(_))
        ));
        assert!(Grid::build(&unit_disk(), -0.1).is_err());
    }

    #[test]
    fn ray_exit_matches_disk_geometry() {
        let d = unit_disk();
        let x = [0.3, -0.2];
        let u = [0.6, 0.8];
        let t = d.ray_exit(&x, &u);
        let p = [x[0] + t * u[0], x[1] + t * u[1]];
        assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-14);
        let s = DomainSpec::superellipse(vec![0.0, 0.0], vec![1.0, 1.0], 4.0);
        let t = s.ray_exit(&x, &u);
        let p = [x[0] + t * u[0], x[1] + t * u[1]];
        assert!((p[0].powi(4) + p[1].powi(4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_fields_are_reproduced() {
        for d in [
            unit_disk(),
            DomainSpec::ellipse(vec![0.1, -0.2], vec![1.5, 0.7]),
        ] {
            let g = Grid::build(&d, 0.07).unwrap();
            let u = GridField::from_fn(&g, |x| 0.3 + 1.5 * x[0] - 0.7 * x[1]);
            for m in 0..g.master_count() {
                let gr = u.gradient_at(m);
                assert!(
                    (gr[0] - 1.5).abs() < 1e-11 && (gr[1] + 0.7).abs() < 1e-11,
                    "{gr:?}"
                );
                assert!(u.hessian_at(m).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn quadratics_are_exact() {
        let g = Grid::build(&DomainSpec::ellipse(vec![0.0, 0.0], vec![1.2, 0.8]), 0.05).unwrap();
        let u = GridField::from_fn(&g, |x| {
            0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.3 * x[0] * x[1]
        });
        for m in 0..g.master_count() {
            let hs = u.hessian_at(m);
            let full = g.mask(g.masters()[m]) == NodeMask::Interior;
            let tol = if full { 1e-10 } else { 1e-7 };
            assert!((hs[(0, 0)] - 1.0).abs() < tol && (hs[(1, 1)] - 1.0).abs() < tol);
            assert!((hs[(0, 1)] - 0.3).abs() < tol && (hs[(1, 0)] - 0.3).abs() < tol);
        }
    }

    #[test]
    fn quadratics_are_exact_in_3d() {
        let g = Grid::build(&DomainSpec::disk(vec![0.0; 3], 1.0), 0.2).unwrap();
        let u = GridField::from_fn(&g, |x| x[0] * x[0] + 0.5 * x[1] * x[2] - x[2] * x[2]);
        let exact = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.5, -2.0]);
        for m in 0..g.master_count() {
            assert!((u.hessian_at(m) - &exact).amax() < 1e-8);
        }
    }

    fn hessian_error(h: f64) -> (f64, f64) {
        let g = Grid::build(&unit_disk(), h).unwrap();
        let f = |x: &[f64]| (1.0 + x[0] * x[0] + x[1] * x[1]).sqrt();
        let u = GridField::from_fn(&g, f);
        let (mut eg, mut eh) = (0.0f64, 0.0f64);
        for m in 0..g.master_count() {
            let x = g.master_coords(m);
            let w = f(&x);
            let gr = u.gradient_at(m);
            for i in 0..2 {
                eg = eg.max((gr[i] - x[i] / w).abs());
            }
            let hs = u.hessian_at(m);
            for i in 0..2 {
                for j in 0..2 {
                    let ex = (if i == j { 1.0 } else { 0.0 }) / w - x[i] * x[j] / w.powi(3);
                    eh = eh.max((hs[(i, j)] - ex).abs());
                }
            }
        }
        (eg, eh)
    }

    #[test]
    fn second_order_refinement() {
        let (g1, h1) = hessian_error(0.04);
        let (g2, h2) = hessian_error(0.02);
        let og = (g1 / g2).log2();
        let oh = (h1 / h2).log2();
        assert!(og >= 1.8, "gradient order {og}");
        assert!(oh >= 1.8, "hessian order {oh}");
        let ratio = h1 / h2;
        assert!((ratio - 4.0).abs() <= 0.8, "hessian error ratio {ratio}");
    }

    #[test]
    fn boundary_adjacent_nodes_hug_the_boundary() {
        let d = DomainSpec::superellipse(vec![0.0, 0.0], vec![1.0, 0.6], 4.0);
        let g = Grid::build(&d, 0.05).unwrap();
        for k in 0..g.node_count() {
            if g.mask(k) == NodeMask::BoundaryAdjacent {
                let x = g.node_coords(k);
                let dist = (0..360)
                    .map(|a| {
                        let t = a as f64 * std::f64::consts::TAU / 360.0;
                        let u = [t.cos(), t.sin()];
                        d.ray_exit(&x, &u)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(dist <= 0.05 * 2f64.sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn disk_curvature_is_one() {
        for bp in boundary_geometry(&unit_disk(), 16).unwrap() {
            assert!((bp.principal_curvatures[0] - 1.0).abs() < 1e-12);
            let r: f64 = bp.x.iter().zip(&bp.inner_normal).map(|(x, n)| x * n).sum();
            assert!((r + 1.0).abs() < 1e-12);
        }
        assert!(boundary_geometry(&unit_disk(), 4).is_err());
    }

    #[test]
    fn ellipse_vertex_curvature() {
        let (a, b) = (2.0, 0.5);
        let d = DomainSpec::ellipse(vec![0.0, 0.0], vec![a, b]);
        let bp = d.boundary_point_at(vec![a, 0.0]);
        assert!((bp.principal_curvatures[0] - a / (b * b)).abs() < 1e-12);
        // and at a generic point against the parametric formula
        let t: f64 = 0.7;
        let bp = d.boundary_point_at(vec![a * t.cos(), b * t.sin()]);
        let oracle = a * b / (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).powf(1.5);
        assert!((bp.principal_curvatures[0] - oracle).abs() < 1e-12);
        let s = DomainSpec::superellipse(vec![0.0, 0.0], vec![a, b], 2.0);
        let sp = s.boundary_point_at(vec![a * t.cos(), b * t.sin()]);
        assert!((sp.principal_curvatures[0] - bp.principal_curvatures[0]).abs() < 1e-14);
    }

    #[test]
    fn ellipsoid_curvatures_and_admissibility() {
        let (a, b, c) = (1.0, 2.0, 3.0);
        let d = DomainSpec::ellipse(vec![0.0; 3], vec![a, b, c]);
        let bp = d.boundary_point_at(vec![a, 0.0, 0.0]);
        let mut want = [a / (b * b), a / (c * c)];
        want.sort_by(f64::total_cmp);
        assert!((bp.principal_curvatures[0] - want[0]).abs() < 1e-12);
        assert!((bp.principal_curvatures[1] - want[1]).abs() < 1e-12);

        let k = 5.0;
        let (ok, margin) = admissible_domain_check(&d, k, 2000).unwrap();
        assert!(ok);
        // direct λ evaluation at the sampled points
        let mut oracle = f64::INFINITY;
        for bp in boundary_geometry(&d, 2000).unwrap() {
            let (k1, k2) = (bp.principal_curvatures[0], bp.principal_curvatures[1]);
            oracle = oracle.min((k2 + k).min(k1 + k).min(k1 + k2));
        }
        assert!((margin - oracle).abs() < 1e-12);
    }

    #[test]
    fn planar_domains_are_always_admissible() {
        for d in [
            unit_disk(),
            DomainSpec::ellipse(vec![0.0, 0.0], vec![1.0, 2.0]),
        ] {
            for k in [1e-3, 1.0, 50.0] {
                assert!(admissible_domain_check(&d, k, 64).unwrap().0);
            }
        }
    }

    #[test]
    fn flat_superellipse_vertices_sit_on_the_cone_edge() {
        // κ^b vanishes at the axis vertices once p > 2
        let d = DomainSpec::superellipse(vec![0.0, 0.0], vec![1.0, 2.0], 6.0);
        let (ok, margin) = admissible_domain_check(&d, 1.0, 64).unwrap();
        assert!(!ok);
        assert!(margin.abs() < 1e-12);
    }

    #[test]
    fn distance_matches_closed_forms() {
        let d = unit_disk();
        assert!((d.distance_to_boundary(&[0.3, 0.4]) - 0.5).abs() < 1e-15);
        // the same disk posed as an ellipse goes through the iteration
        let e = DomainSpec::ellipse(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!((e.distance_to_boundary(&[0.3, 0.4]) - 0.5).abs() < 1e-12);
        // ellipse: points on the minor axis are nearest to the co-vertex
        let e = DomainSpec::ellipse(vec![0.0, 0.0], vec![2.0, 1.0]);
        assert!((e.distance_to_boundary(&[0.0, 0.9]) - 0.1).abs() < 1e-12);
        // generic point near the boundary against brute-force minimization
        let x = [1.2, 0.75];
        let brute = (0..200000)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 200000.0;
                ((2.0 * t.cos() - x[0]).powi(2) + (t.sin() - x[1]).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        // sampling can only overestimate the minimum
        let d = e.distance_to_boundary(&x);
        assert!(d <= brute + 1e-15 && brute - d < 2e-8, "{d} {brute}");
        assert_eq!(e.inradius(), 1.0);
    }

    #[test]
    fn diameters() {
        assert!((unit_disk().diameter() - 2.0).abs() < 1e-15);
        let s = DomainSpec::superellipse(vec![0.0, 0.0], vec![1.0, 1.0], 4.0);
        // square-like superellipse: farthest points on the diagonals, r = 2^{1/2-1/p}
        assert!((s.diameter() - 2.0 * 2f64.powf(0.25)).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = Grid::build(&DomainSpec::ellipse(vec![0.1, 0.0], vec![1.0, 0.7]), 0.1).unwrap();
        let u = GridField::from_fn(&g, |x| (x[0] * 3.3).sin() / 7.0 + x[1].exp());
        let text = u.to_csv();
        assert!(text.starts_with("x_1,x_2,value,mask\n"));
        let back = GridField::from_csv(&g, &text, u.boundary_values().to_vec()).unwrap();
        assert!(back
            .values()
            .iter()
            .zip(u.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let other =
            Grid::build(&DomainSpec::ellipse(vec![0.1, 0.0], vec![1.0, 0.7]), 0.11).unwrap();
        assert!(GridField::from_csv(&other, &text, vec![]).is_err());
    }

    #[test]
    fn pinned_nodes_extrapolate_smooth_fields() {
        let g = Grid::build(&unit_disk(), 0.03).unwrap();
        assert!(!g.pinned_forms().is_empty());
        let f = |x: &[f64]| x[0] * x[0] - 2.0 * x[1] * x[0] + 0.5 * x[1];
        let u = GridField::from_fn(&g, f);
        let rebuilt = GridField::from_masters(&g, &u.master_values(), u.boundary_values().to_vec());
        for (k, _) in g.pinned_forms() {
            assert!((rebuilt.value(*k) - u.value(*k)).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_stencils_agree_with_node_stencils() {
        let g = Grid::build(&DomainSpec::ellipse(vec![0.0, 0.0], vec![1.0, 0.6]), 0.04).unwrap();
        let f = |x: &[f64]| x[0].powi(2) + 0.3 * x[1] - x[0] * x[1];
        let u = GridField::from_fn(&g, f);
        let masters = u.master_values();
        for m in 0..g.master_count() {
            let s = g.reduced_stencil(m);
            let a = s.hess[1].eval(&masters, u.boundary_values());
            assert!((a - u.hessian_at(m)[(0, 1)]).abs() < 1e-7);
        }
        let (lo, hi) = g.bandwidth();
        assert!(lo > 0 && hi > 0 && lo < g.master_count());
    }

    #[test]
    fn local_fit_recovers_jets_at_the_boundary() {
        let g = Grid::build(&unit_disk(), 0.02).unwrap();
        let f = |x: &[f64]| (1.0 + x[0] * x[0] + x[1] * x[1]).sqrt();
        let u = GridField::from_fn(&g, f);
        let x0 = [0.6, 0.8];
        let (v, gr, hs) = u.local_fit(&x0).unwrap();
        let w = 2f64.sqrt();
        assert!((v - w).abs() < 1e-6);
        assert!((gr[0] - 0.6 / w).abs() < 1e-5 && (gr[1] - 0.8 / w).abs() < 1e-5);
        let exact = 1.0 / w - 0.36 / w.powi(3);
        assert!((hs[(0, 1)] + 0.48 / w.powi(3)).abs() < 2e-3);
        assert!(
            (hs[(0, 0)] - exact).abs() < 2e-3,
            "{} {}",
            hs[(0, 0)],
            exact
        );
    }

    #[test]
    fn fornberg_weights_match_textbook() {
        let c = fornberg(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(c[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(c[2], vec![1.0, -2.0, 1.0]);
    }
}
