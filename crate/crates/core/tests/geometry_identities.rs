use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spacelike_core::expr::{self, Expr, Var};
use spacelike_core::geometry::{linearize, make_jet};

fn random_gradient(rng: &mut ChaCha8Rng, n: usize, max: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let target = rng.random_range(0.0..max);
    v.iter().map(|a| a * target / norm).collect()
}

#[test]
fn gamma_down_squares_to_the_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..1000 {
        let n = rng.random_range(2..=6);
        let p = random_gradient(&mut rng, n, 0.99);
        let jet = make_jet(&p, &DMatrix::identity(n, n)).unwrap();
        let g = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - p[i] * p[j]);
        let sq = jet.gamma_down() * jet.gamma_down();
        assert!((sq - g).amax() < 1e-12);
        assert!((jet.gamma_down() * jet.gamma_up() - DMatrix::identity(n, n)).amax() < 1e-12);
    }
}

#[test]
fn curvature_matrix_is_similar_to_the_nonsymmetric_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..200 {
        let n = rng.random_range(2..=5);
        let p = random_gradient(&mut rng, n, 0.9);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let r = &b + b.transpose();
        let jet = make_jet(&p, &r).unwrap();
        let w2 = 1.0 - p.iter().map(|a| a * a).sum::<f64>();
        let m = DMatrix::from_fn(
            n,
            n,
            |i, j| if i == j { 1.0 } else { 0.0 } + p[i] * p[j] / w2,
        ) * &r
            / w2.sqrt();
        let mut ev: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.re).collect();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(jet.kappa()) {
            assert!(
                (a - b).abs() < 1e-10 * (1.0 + b.abs()),
                "{ev:?} {:?}",
                jet.kappa()
            );
        }
    }
}

#[test]
fn linearization_is_elliptic_in_the_cone() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..500 {
        let n = rng.random_range(2..=5);
        let p = random_gradient(&mut rng, n, 0.9);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let r = &b * b.transpose() + DMatrix::identity(n, n) * 0.1;
        let jet = make_jet(&p, &r).unwrap();
        let lin = linearize(&jet).unwrap();
        let e = lin
            .gij
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(e > 0.0);
    }
}

/// Intrinsic curvature `R_1212` of the induced metric `g = I − Du⊗Du` of a
/// surface graph, from the Brioschi formula with symbolic derivatives.
fn r1212(u: &Expr, x: &[f64]) -> f64 {
    let (u1, u2) = (u.diff(Var::X(0)), u.diff(Var::X(1)));
    let one = Expr::constant(1.0);
    let e = expr::sub(one.clone(), expr::mul(u1.clone(), u1.clone()));
    let f = expr::neg(expr::mul(u1.clone(), u2.clone()));
    let g = expr::sub(one, expr::mul(u2.clone(), u2.clone()));
    let d = |a: &Expr, i: usize| a.diff(Var::X(i));
    let ev = |a: &Expr| a.eval(x, 0.0);
    let (ee, ff, gg) = (ev(&e), ev(&f), ev(&g));
    let (e_u, e_v, f_u, f_v, g_u, g_v) = (
        ev(&d(&e, 0)),
        ev(&d(&e, 1)),
        ev(&d(&f, 0)),
        ev(&d(&f, 1)),
        ev(&d(&g, 0)),
        ev(&d(&g, 1)),
    );
    let (e_vv, f_uv, g_uu) = (
        ev(&d(&d(&e, 1), 1)),
        ev(&d(&d(&f, 0), 1)),
        ev(&d(&d(&g, 0), 0)),
    );
    let m1 = DMatrix::from_row_slice(
        3,
        3,
        &[
            -0.5 * e_vv + f_uv - 0.5 * g_uu,
            0.5 * e_u,
            f_u - 0.5 * e_v,
            f_v - 0.5 * g_u,
            ee,
            ff,
            0.5 * g_v,
            ff,
            gg,
        ],
    );
    let m2 = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0,
            0.5 * e_v,
            0.5 * g_u,
            0.5 * e_v,
            ee,
            ff,
            0.5 * g_u,
            ff,
            gg,
        ],
    );
    let det_g = ee * gg - ff * ff;
    let k = (m1.determinant() - m2.determinant()) / (det_g * det_g);
    k * det_g
}

#[test]
fn gauss_equation_holds_for_spacelike_graphs() {
    for (src, x) in [
        ("sqrt(1+x1^2+x2^2)", [0.3, -0.4]),
        ("0.3*x1^2 + 0.2*x1*x2 + 0.25*x2^2 + 0.1*x1^3", [0.2, 0.1]),
    ] {
        let u = Expr::parse(src).unwrap();
        let p: Vec<f64> = u.gradient(2).iter().map(|d| d.eval(&x, 0.0)).collect();
        let hess = u.hessian(2);
        let d2u = DMatrix::from_fn(2, 2, |i, j| hess[i][j].eval(&x, 0.0));
        let jet = make_jet(&p, &d2u).unwrap();
        let h = jet.second_fundamental_form();
        let rhs = -(h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)]);
        let lhs = r1212(&u, &x);
        assert!(
            (lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()),
            "{src}: {lhs} vs {rhs}"
        );
    }
}
