//! Symmetric-function algebra on principal-curvature vectors.
//!
//! Everything here is a pure function of its inputs. The cone `Γ` is the set
//! of `κ` whose partial sums `λ_i = Σ_{j≠i} κ_j` are all positive, and the
//! curvature function is `f(κ) = Π λ_i`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A point `κ ∈ R^n` of principal curvatures, `n >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureVector(Vec<f64>);

impl CurvatureVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::Dimension(entries.len()));
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn sigma(&self, k: usize) -> Result<f64> {
        elementary_symmetric(&self.0, k)
    }

    pub fn lambda(&self) -> LambdaVector {
        lambda_transform(&self.0)
    }

    pub fn in_gamma(&self) -> bool {
        in_gamma(&self.0)
    }

    pub fn gamma_margin(&self) -> f64 {
        gamma_margin(&self.0)
    }

    pub fn f_eta(&self) -> f64 {
        f_eta(&self.0)
    }

    pub fn grad_f_eta(&self) -> Vec<f64> {
        grad_f_eta(&self.0)
    }
}

/// The partial sums `λ_i = Σ_{j≠i} κ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaVector(Vec<f64>);

impl LambdaVector {
    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Inverts the transform: `κ_i = Σ_j λ_j / (n-1) - λ_i`.
    pub fn to_kappa(&self) -> Result<CurvatureVector> {
        CurvatureVector::new(kappa_from_lambda(&self.0))
    }
}

impl From<Vec<f64>> for LambdaVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A symmetric matrix `r` together with a gradient-like vector `p`, `|p| < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPair {
    r: DMatrix<f64>,
    p: DVector<f64>,
}

impl MatrixPair {
    pub fn new(r: DMatrix<f64>, p: DVector<f64>) -> Result<Self> {
        let n = p.len();
        if r.nrows() != n || r.ncols() != n {
            return Err(Error::Shape(format!(
                "r is {}x{}, p has length {}",
                r.nrows(),
                r.ncols(),
                n
            )));
        }
        let scale = r.amax().max(1.0);
        let asym = (&r - r.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let norm = p.norm();
        if norm >= 1.0 {
            return Err(Error::NotSpacelike(norm));
        }
        Ok(Self { r, p })
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// `(r(i), p(i))`: row and column `i` of `r` and entry `i` of `p` zeroed.
    pub fn restricted(&self, i: usize) -> Result<Self> {
        let n = self.dim();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        let mut r = self.r.clone();
        r.row_mut(i).fill(0.0);
        r.column_mut(i).fill(0.0);
        let mut p = self.p.clone();
        p[i] = 0.0;
        Ok(Self { r, p })
    }

    /// Eigenvalues of `(I + p⊗p/(1-|p|²)) r`, ascending.
    ///
    /// The product is similar to `γ r γ` with `γ = I + p⊗p/(w(1+w))`,
    /// `w = sqrt(1-|p|²)`, which is symmetric.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let w = (1.0 - self.p.norm_squared()).sqrt();
        let n = self.dim();
        let gamma =
            DMatrix::<f64>::identity(n, n) + (&self.p * self.p.transpose()) / (w * (1.0 + w));
        let mut b = &gamma * &self.r * &gamma;
        symmetrize(&mut b);
        let mut ev: Vec<f64> = SymmetricEigen::new(b).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// All elementary symmetric functions `σ_0, …, σ_n` of `x`.
///
/// Peels one variable at a time: after processing `x_1..x_m`, `e[k]` holds
/// `σ_k(x_1, …, x_m)`.
pub fn sigmas(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for (m, &xi) in x.iter().enumerate() {
        for k in (1..=m + 1).rev() {
            e[k] += xi * e[k - 1];
        }
    }
    e
}

/// `σ_k(κ)`, with `σ_0 = 1`.
pub fn elementary_symmetric(kappa: &[f64], k: usize) -> Result<f64> {
    let n = kappa.len();
    if k > n {
        return Err(Error::OrderOutOfRange { k, n });
    }
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (m, &xi) in kappa.iter().enumerate() {
        for j in (1..=(m + 1).min(k)).rev() {
            e[j] += xi * e[j - 1];
        }
    }
    Ok(e[k])
}

/// `σ_k` of `κ` with the listed (0-based) entries set to zero.
pub fn sigma_restricted(kappa: &[f64], k: usize, excluded: &[usize]) -> Result<f64> {
    let n = kappa.len();
    let mut seen = vec![false; n];
    for &i in excluded {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if seen[i] {
            return Err(Error::DuplicateIndex(i));
        }
        seen[i] = true;
    }
    let masked: Vec<f64> = kappa
        .iter()
        .zip(&seen)
        .map(|(&v, &drop)| if drop { 0.0 } else { v })
        .collect();
    elementary_symmetric(&masked, k)
}

pub fn lambda_transform(kappa: &[f64]) -> LambdaVector {
    let s: f64 = kappa.iter().sum();
    LambdaVector(kappa.iter().map(|&k| s - k).collect())
}

pub fn kappa_from_lambda(lambda: &[f64]) -> Vec<f64> {
    let n = lambda.len() as f64;
    let s: f64 = lambda.iter().sum::<f64>() / (n - 1.0);
    lambda.iter().map(|&l| s - l).collect()
}

pub fn gamma_margin(kappa: &[f64]) -> f64 {
    lambda_transform(kappa).min()
}

pub fn in_gamma(kappa: &[f64]) -> bool {
    gamma_margin(kappa) > 0.0
}

/// `f(κ) = Π_i λ_i`.
pub fn f_eta(kappa: &[f64]) -> f64 {
    lambda_transform(kappa).0.iter().product()
}

/// `∂f/∂κ_i = Σ_{m≠i} Π_{k≠m} λ_k`, computed division-free.
pub fn grad_f_eta(kappa: &[f64]) -> Vec<f64> {
    let lambda = lambda_transform(kappa).0;
    let others = products_except_each(&lambda);
    let total: f64 = others.iter().sum();
    others.iter().map(|&p| total - p).collect()
}

/// `out[m] = Π_{k≠m} v_k` via prefix and suffix products.
fn products_except_each(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![1.0; n];
    let mut acc = 1.0;
    for m in 0..n {
        out[m] = acc;
        acc *= v[m];
    }
    acc = 1.0;
    for m in (0..n).rev() {
        out[m] *= acc;
        acc *= v[m];
    }
    out
}

/// `Σ_{i=2}^n (-1)^i σ_1^{n-i} σ_i`, which equals `Π λ_i` identically.
pub fn k_eta_expansion(kappa: &[f64]) -> f64 {
    let n = kappa.len();
    let e = sigmas(kappa);
    let s1 = e[1];
    (2..=n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * s1.powi((n - i) as i32) * e[i]
        })
        .sum()
}

/// `S_k(r, p) = σ_k(λ(r, p))`.
pub fn sk_of_matrix(mp: &MatrixPair, k: usize) -> Result<f64> {
    elementary_symmetric(&mp.eigenvalues(), k)
}

/// `S_{k;i}(r, p) = S_k(r(i), p(i))` (0-based `i`).
pub fn sk_restricted(mp: &MatrixPair, k: usize, i: usize) -> Result<f64> {
    sk_of_matrix(&mp.restricted(i)?, k)
}

/// Smallest `R >= 0` with `f(κ_1, …, κ_{n-1}, κ_n + R) >= a`, to within `1e-8`.
pub fn growth_witness(kappa: &[f64], a: f64) -> Result<f64> {
    let margin = gamma_margin(kappa);
    if margin <= 0.0 {
        return Err(Error::OutsideCone(margin));
    }
    let n = kappa.len();
    let shifted = |r: f64| {
        let mut k = kappa.to_vec();
        k[n - 1] += r;
        f_eta(&k)
    };
    if shifted(0.0) >= a {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while shifted(hi) < a {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if shifted(mid) >= a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
