//! Banded LU with partial pivoting (column-major band storage, as in
//! LAPACK's `gbtrf`/`gbtrs`).

/// A square matrix with `kl` sub- and `ku` super-diagonals, with room for
/// the `kl` extra super-diagonals that pivoting creates.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    /// Adds `v` at `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j <= i + self.ku && i <= j + self.kl,
            "entry ({i}, {j}) outside band"
        );
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i + self.ku || i > j + self.kl {
            return 0.0;
        }
        self.data[self.idx(i, j)]
    }

    /// `y = A x` (before factorization).
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.data[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    /// Factorizes in place. Returns the first zero pivot column on failure.
    pub fn factor(mut self) -> Result<BandLu, usize> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.data[self.idx(j, j)].abs();
            for r in 1..=km {
                let v = self.data[self.idx(j + r, j)].abs();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 || !best.is_finite() {
                return Err(j);
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + jp, c);
                    self.data.swap(a, b);
                }
            }
            let piv = self.data[self.idx(j, j)];
            for r in 1..=km {
                let k = self.idx(j + r, j);
                self.data[k] /= piv;
            }
            for c in (j + 1)..=ju {
                let ajc = self.data[self.idx(j, c)];
                if ajc != 0.0 {
                    for r in 1..=km {
                        let l = self.data[self.idx(j + r, j)];
                        let k = self.idx(j + r, c);
                        self.data[k] -= l * ajc;
                    }
                }
            }
        }
        Ok(BandLu { a: self, ipiv })
    }
}

/// Factors produced by [`BandMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &mut [f64]) {
        let a = &self.a;
        let n = a.n;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = a.kl.min(n - 1 - j);
            let bj = b[j];
            for r in 1..=km {
                b[j + r] -= a.data[a.idx(j + r, j)] * bj;
            }
        }
        let kv = a.kl + a.ku;
        for j in (0..n).rev() {
            b[j] /= a.data[a.idx(j, j)];
            let bj = b[j];
            for i in j.saturating_sub(kv)..j {
                b[i] -= a.data[a.idx(i, j)] * bj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (30, 4, 2), (40, 3, 7), (25, 0, 3)] {
            let mut band = BandMatrix::zeros(n, kl, ku);
            let mut dense = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    // weak diagonal so that pivoting actually happens
                    let v: f64 = rng.random_range(-1.0..1.0) + if i == j { 0.1 } else { 0.0 };
                    band.add(i, j, v);
                    dense[(i, j)] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = band.mul_vec(&b);
            let yd = &dense * DVector::from_column_slice(&b);
            assert!(y.iter().zip(yd.iter()).all(|(a, b)| (a - b).abs() < 1e-14));

            let want = dense
                .clone()
                .lu()
                .solve(&DVector::from_column_slice(&b))
                .unwrap();
            let lu = band.factor().unwrap();
            let mut x = b.clone();
            lu.solve(&mut x);
            let err = x
                .iter()
                .zip(want.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9 * (1.0 + want.amax()), "n={n} err={err}");
        }
    }

    #[test]
    fn singular_matrix_reports_column() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.add(0, 0, 1.0);
        m.add(2, 2, 1.0);
        assert_eq!(m.factor().unwrap_err(), 1);
    }
}
