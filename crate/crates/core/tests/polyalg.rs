mod common;

use common::*;
use lkfsyn::polyalg::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn scalar_poly(coeffs: &[f64], r: f64) -> PolyMat1 {
    PolyMat1::new(1, 1, coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect(), iv(r)).unwrap()
}

fn random_poly(rows: usize, cols: usize, degree: usize, r: f64, seed: u64) -> PolyMat1 {
    let mut g = rng(seed);
    let coeffs = (0..=degree).map(|_| uniform(rows, cols, 1.0, &mut g)).collect();
    PolyMat1::new(rows, cols, coeffs, iv(r)).unwrap()
}

#[test]
fn monomial_basis_layout() {
    let i = iv(1.0);
    assert_eq!(PolyMat1::monomial_basis(0, 1, i).eval(-0.4), DMatrix::from_element(1, 1, 1.0));
    let z = PolyMat1::monomial_basis(1, 2, i);
    assert_eq!(z.shape(), (4, 2));
    let s = -0.3;
    assert_eq!(z.eval(s), mat(4, 2, &[1.0, 0.0, 0.0, 1.0, s, 0.0, 0.0, s]));
}

#[test]
fn evaluation_and_calculus() {
    assert_eq!(PolyMat1::constant(DMatrix::identity(2, 2), iv(1.0)).eval(-1.0), DMatrix::identity(2, 2));
    assert_eq!(scalar_poly(&[0.0, 1.0], 1.0).eval(-0.5)[(0, 0)], -0.5);
    let sq = scalar_poly(&[0.0, 0.0, 1.0], 1.0);
    assert_eq!(sq.derivative(), scalar_poly(&[0.0, 2.0], 1.0));
    assert_eq!(scalar_poly(&[1.0], 1.0).integrate_full()[(0, 0)], 1.0);
    assert_eq!(scalar_poly(&[0.0, 1.0], 2.0).integrate_full()[(0, 0)], -2.0);

    let st = scalar_poly(&[0.0, 1.0], 1.0).outer(&scalar_poly(&[0.0, 2.0], 1.0)).unwrap();
    assert_eq!(st.eval(-1.0, -1.0)[(0, 0)], 2.0);
}

#[test]
fn separable_kernel_expansion() {
    let i = iv(1.0);
    let z = PolyMat1::monomial_basis(1, 1, i);
    let k = z.transpose().outer(&z).unwrap();
    for (s, t) in [(-0.2, -0.7), (0.0, -1.0), (-0.5, -0.5)] {
        assert!((k.eval(s, t)[(0, 0)] - (1.0 + s * t)).abs() < 1e-15);
    }
    assert_eq!(k.coeff(1, 1)[(0, 0)], 1.0);
    assert_eq!(k.coeff(0, 1)[(0, 0)], 0.0);
}

#[test]
fn transpose_and_cancellation() {
    let i = iv(1.0);
    let row = PolyMat1::new(1, 2, vec![DMatrix::zeros(1, 2), mat(1, 2, &[1.0, 0.0])], i).unwrap();
    let col = row.transpose();
    assert_eq!(col.shape(), (2, 1));
    assert_eq!(col.eval(-0.5), mat(2, 1, &[-0.5, 0.0]));
    let s = scalar_poly(&[0.0, 1.0], 1.0);
    assert!(s.add(&s.scale(-1.0)).unwrap().is_zero());
}

#[test]
fn gauss_rules() {
    let one = gauss_rule(1, iv(2.0));
    assert_eq!(one.nodes, vec![-1.0]);
    assert_eq!(one.weights, vec![2.0]);
    let two = gauss_rule(2, iv(1.0));
    assert!((two.integrate(|s| s * s) - 1.0 / 3.0).abs() < 1e-15);
    for n in [1, 5, 20, 41] {
        let r = 1.7;
        let w: f64 = gauss_rule(n, iv(r)).weights.iter().sum();
        assert!((w - r).abs() <= 1e-12 * r);
    }
}

#[test]
fn composite_rule_integrates_piecewise_polynomials() {
    let rule = QuadratureRule::composite(&[-1.0, -0.4, 0.0], 3);
    // |s + 0.4|⁵ is a polynomial on each cell
    let exact = 0.6f64.powi(6) / 6.0 + 0.4f64.powi(6) / 6.0;
    assert!((rule.integrate(|s| (s + 0.4).abs().powi(5)) - exact).abs() < 1e-15);
}

#[test]
fn json_round_trip() {
    let p = random_poly(2, 3, 3, 1.3, 9);
    let back = serde_json::from_str::<PolyJson>(&serde_json::to_string(&p.to_json()).unwrap()).unwrap().into_poly1().unwrap();
    assert_eq!(back, p);
    let k = p.outer(&random_poly(3, 2, 2, 1.3, 10)).unwrap();
    let back = serde_json::from_str::<PolyJson>(&serde_json::to_string(&k.to_json()).unwrap()).unwrap().into_poly2().unwrap();
    assert_eq!(back, k);
}

#[test]
fn mismatched_shapes_are_errors() {
    let a = random_poly(2, 3, 1, 1.0, 1);
    assert!(a.mul(&random_poly(2, 3, 1, 1.0, 2)).is_err());
    assert!(a.add(&random_poly(2, 3, 1, 2.0, 2)).is_err());
}

proptest! {
    #[test]
    fn quadrature_matches_symbolic_integral(n in 1usize..12, seed in any::<u64>(), r in 0.1f64..4.0) {
        let p = random_poly(2, 2, 2 * n - 1, r, seed);
        let rule = gauss_rule(n, iv(r));
        let q = rule.integrate_mat(2, 2, |s| p.eval(s));
        let exact = p.integrate_full();
        prop_assert!((q - &exact).amax() <= 1e-12 * (1.0 + exact.amax()));
    }

    #[test]
    fn fundamental_theorem(deg in 0usize..8, seed in any::<u64>(), r in 0.1f64..3.0) {
        let p = random_poly(2, 1, deg, r, seed);
        let lhs = p.derivative().integrate_full();
        let rhs = p.eval(0.0) - p.eval(-r);
        prop_assert!((lhs - &rhs).amax() <= 1e-12 * (1.0 + rhs.amax()));
    }

    #[test]
    fn product_rules(seed in any::<u64>(), s in -1.0f64..0.0) {
        let a = random_poly(2, 3, 2, 1.0, seed);
        let b = random_poly(3, 2, 3, 1.0, seed.wrapping_add(1));
        let ab = a.mul(&b).unwrap();
        prop_assert!((ab.eval(s) - a.eval(s) * b.eval(s)).amax() < 1e-12);
        let lhs = ab.transpose();
        let rhs = b.transpose().mul(&a.transpose()).unwrap();
        prop_assert!((lhs.coeff_norm() - rhs.coeff_norm()).abs() < 1e-12);
        prop_assert!(lhs.sub(&rhs).unwrap().coeff_norm() < 1e-12);
        prop_assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn bivariate_calculus(seed in any::<u64>(), s in -1.0f64..0.0, t in -1.0f64..0.0) {
        let a = random_poly(2, 2, 2, 1.0, seed);
        let b = random_poly(2, 2, 3, 1.0, seed.wrapping_add(3));
        let k = a.outer(&b).unwrap();
        prop_assert!((k.eval(s, t) - a.eval(s) * b.eval(t)).amax() < 1e-12);
        prop_assert!((k.diff_s().eval(s, t) - a.derivative().eval(s) * b.eval(t)).amax() < 1e-12);
        prop_assert!((k.diff_theta().eval(s, t) - a.eval(s) * b.derivative().eval(t)).amax() < 1e-12);
        prop_assert!((k.integrate_full() - a.integrate_full() * b.integrate_full()).amax() < 1e-12);
        prop_assert!((k.adjoint().eval(s, t) - k.eval(t, s).transpose()).amax() < 1e-12);
    }
}
