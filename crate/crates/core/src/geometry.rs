//! Pointwise geometry of a spacelike graph `x_{n+1} = u(x)` in Minkowski space.
//!
//! A [`GraphJet`] packages `(Du, D²u)` at one point together with the derived
//! quantities: `w = sqrt(1 - |Du|²)`, the matrices `γ^{ik}` and `γ_{ij}`, the
//! symmetric curvature matrix `a_ij = (1/w) γ^{ik} u_kl γ^{lj}` and its
//! eigenvalues (the principal curvatures).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::symfun::{self, symmetrize, CurvatureVector};

/// Gradients with `|Du| >= 1 - SPACELIKE_CUTOFF` are rejected.
pub const SPACELIKE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GraphJet {
    du: DVector<f64>,
    d2u: DMatrix<f64>,
    w: f64,
    gamma_up: DMatrix<f64>,
    gamma_down: DMatrix<f64>,
    a: DMatrix<f64>,
    kappa: Vec<f64>,
    frame: DMatrix<f64>,
}

impl GraphJet {
    pub fn new(du: &[f64], d2u: &DMatrix<f64>) -> Result<Self> {
        make_jet(du, d2u)
    }

    pub fn du(&self) -> &DVector<f64> {
        &self.du
    }

    pub fn d2u(&self) -> &DMatrix<f64> {
        &self.d2u
    }

    pub fn dim(&self) -> usize {
        self.du.len()
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// `γ^{ik} = δ_ik + u_i u_k / (w(1+w))`.
    pub fn gamma_up(&self) -> &DMatrix<f64> {
        &self.gamma_up
    }

    /// `γ_ij = δ_ij - u_i u_j / (1+w)`, the square root of `g`.
    pub fn gamma_down(&self) -> &DMatrix<f64> {
        &self.gamma_down
    }

    /// Induced metric `g_ij = δ_ij - u_i u_j`.
    pub fn metric(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::identity(n, n) - &self.du * self.du.transpose()
    }

    /// Second fundamental form `h_ij = u_ij / w`.
    pub fn second_fundamental_form(&self) -> DMatrix<f64> {
        &self.d2u / self.w
    }

    pub fn curvature_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Principal curvatures in ascending order.
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn curvature_vector(&self) -> CurvatureVector {
        CurvatureVector::new(self.kappa.clone()).expect("jet curvatures are finite")
    }

    /// Orthonormal eigenvectors of `A`, one per column, matching [`Self::kappa`].
    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn gamma_margin(&self) -> f64 {
        symfun::gamma_margin(&self.kappa)
    }

    pub fn normal(&self) -> UnitNormal {
        let n = self.dim();
        let mut nu = DVector::zeros(n + 1);
        for i in 0..n {
            nu[i] = self.du[i] / self.w;
        }
        nu[n] = 1.0 / self.w;
        UnitNormal { nu }
    }
}

/// Builds a jet from a gradient and a (symmetric) Hessian.
pub fn make_jet(du: &[f64], d2u: &DMatrix<f64>) -> Result<GraphJet> {
    let n = du.len();
    if n < 2 {
        return Err(Error::Dimension(n));
    }
    if d2u.nrows() != n || d2u.ncols() != n {
        return Err(Error::Shape(format!(
            "Hessian is {}x{}, gradient has length {n}",
            d2u.nrows(),
            d2u.ncols()
        )));
    }
    if let Some(i) = du.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if let Some(i) = d2u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let asym = (d2u - d2u.transpose()).amax();
    if asym > 1e-10 * d2u.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let du = DVector::from_column_slice(du);
    let norm2 = du.norm_squared();
    if norm2.sqrt() >= 1.0 - SPACELIKE_CUTOFF {
        return Err(Error::NotSpacelike(norm2.sqrt()));
    }
    let w = (1.0 - norm2).sqrt();
    let outer = &du * du.transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let gamma_up = &id + &outer / (w * (1.0 + w));
    let gamma_down = &id - &outer / (1.0 + w);

    let mut d2u = d2u.clone();
    symmetrize(&mut d2u);
    let mut a = (&gamma_up * &d2u * &gamma_up) / w;
    symmetrize(&mut a);
    let (kappa, frame) = sorted_eigen(&a);
    Ok(GraphJet {
        du,
        d2u,
        w,
        gamma_up,
        gamma_down,
        a,
        kappa,
        frame,
    })
}

/// Ascending eigen-decomposition with each eigenvector's first non-negligible
/// component made positive.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut frame = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut v = eig.eigenvectors.column(src).clone_owned();
        if let Some(lead) = v.iter().copied().find(|c| c.abs() > 1e-12) {
            if lead < 0.0 {
                v.neg_mut();
            }
        }
        frame.set_column(col, &v);
    }
    (values, frame)
}

/// `K_η = f(κ)`.
pub fn k_eta_graph(jet: &GraphJet) -> f64 {
    symfun::f_eta(&jet.kappa)
}

/// `H = σ_1(κ) = tr A`.
pub fn mean_curvature(jet: &GraphJet) -> f64 {
    jet.a.trace()
}

/// Gauss curvature `det(D²u) / w^{n+2}`.
pub fn gauss_curvature(jet: &GraphJet) -> f64 {
    jet.d2u.determinant() / jet.w.powi(jet.dim() as i32 + 2)
}

/// Upward timelike unit normal `ν = (Du, 1)/w`.
#[derive(Debug, Clone)]
pub struct UnitNormal {
    pub nu: DVector<f64>,
}

impl UnitNormal {
    /// `1/w`, the last component of `ν`.
    pub fn w_tilde(&self) -> f64 {
        self.nu[self.nu.len() - 1]
    }
}

/// `⟨a, b⟩ = Σ_{i≤n} a_i b_i - a_{n+1} b_{n+1}`.
pub fn minkowski_inner(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let m = a.len();
    let space: f64 = (0..m - 1).map(|i| a[i] * b[i]).sum();
    space - a[m - 1] * b[m - 1]
}

/// First derivatives of `G(r, p) = f(λ(A))` at a jet.
#[derive(Debug, Clone)]
pub struct LinearizedCoeffs {
    /// `∂G/∂r_ij`, treating `r_ij` and `r_ji` as independent entries.
    pub gij: DMatrix<f64>,
    /// `∂G/∂p_s`.
    pub gs: DVector<f64>,
    /// `∂f(λ(A))/∂a_ij`.
    pub fij: DMatrix<f64>,
}

/// Linearizes `G(D²u, Du) = f(λ(A[u]))` at an admissible jet.
///
/// `F = Q diag(f_i) Qᵀ` in the eigenframe of `A`; this is well defined at
/// repeated eigenvalues because `f` is symmetric (so `f_i = f_j` there).
pub fn linearize(jet: &GraphJet) -> Result<LinearizedCoeffs> {
    let margin = jet.gamma_margin();
    if margin <= 0.0 {
        return Err(Error::OutsideCone(margin));
    }
    let n = jet.dim();
    let grad = symfun::grad_f_eta(&jet.kappa);
    let q = &jet.frame;
    let mut fij = q * DMatrix::from_diagonal(&DVector::from_vec(grad.clone())) * q.transpose();
    symmetrize(&mut fij);

    let w = jet.w;
    let gu = &jet.gamma_up;
    let mut gij = (gu * &fij * gu) / w;
    symmetrize(&mut gij);

    let u = &jet.du;
    let a = &jet.a;
    let euler: f64 = grad.iter().zip(&jet.kappa).map(|(f, k)| f * k).sum();
    // Σ_i F^{ij} a_it = (F A)_{jt}
    let fa = &fij * a;
    let coef = 2.0 / (w * (1.0 + w));
    let mut gs = DVector::zeros(n);
    for s in 0..n {
        let mut acc = 0.0;
        for t in 0..n {
            for j in 0..n {
                acc += fa[(j, t)] * (w * u[t] * gu[(s, j)] + u[j] * gu[(t, s)]);
            }
        }
        gs[s] = u[s] / (w * w) * euler + coef * acc;
    }
    Ok(LinearizedCoeffs { gij, gs, fij })
}

/// Evaluates `G(r, p) = f(λ(A))` with `A = (1/w) γ r γ` directly from `(r, p)`.
pub fn g_of(r: &DMatrix<f64>, p: &[f64]) -> Result<f64> {
    Ok(k_eta_graph(&make_jet(p, r)?))
}
