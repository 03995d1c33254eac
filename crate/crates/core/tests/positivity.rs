mod common;

use common::*;
use lkfsyn::lkoperator::{default_rule, random_state, KernelOperator};
use lkfsyn::polyalg::{PolyMat1, PolyMat2};
use lkfsyn::positivity::*;
use lkfsyn::sdp::{solve, SolveOptions, SolveStatus};
use lkfsyn::LkError;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random_certificate(layout: XiLayout, seed: u64) -> XiCertificate {
    let mut g = rng(seed);
    let gram = spd(layout.gram_side(), 0.0, &mut g);
    let weight_gram = (layout.weight_side() > 0).then(|| spd(layout.weight_side(), 0.0, &mut g));
    XiCertificate { gram, weight_gram, layout }
}

fn layout_for(k1: usize, k2: usize, d: usize, weighted: bool, r: f64) -> XiLayout {
    let l = XiLayout::new(k1, k2, d, iv(r));
    if weighted && d > 0 {
        l
    } else {
        l.unweighted()
    }
}

#[test]
fn sampling_examples() {
    let i = iv(1.0);
    let rule = default_rule(i);
    let zero = KernelOperator::new(DMatrix::zeros(1, 1), PolyMat1::zeros(1, 1, i), PolyMat2::zeros(1, 1, i), PolyMat1::zeros(1, 1, i)).unwrap();
    assert_eq!(sample_positivity(&zero, 20, &rule, 0).unwrap(), 0.0);
    let neg = KernelOperator::new(
        DMatrix::zeros(1, 1),
        PolyMat1::zeros(1, 1, i),
        PolyMat2::zeros(1, 1, i),
        PolyMat1::constant(-DMatrix::identity(1, 1), i),
    )
    .unwrap();
    assert!(sample_positivity(&neg, 20, &rule, 0).unwrap() < 0.0);
}

#[test]
fn expand_then_constrain_is_feasible() {
    for (k1, k2, d, weighted) in [(1, 1, 1, true), (2, 1, 2, false), (0, 2, 1, true), (2, 0, 1, true)] {
        let layout = layout_for(k1, k2, d, weighted, 1.2);
        let cert = random_certificate(layout, 17 + k1 as u64);
        let (m, n) = xi_expand(&cert).unwrap();
        let (problem, handles) = xi_constraints(&m, &n, layout).unwrap();
        let sol = solve(&problem, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Feasible, "{k1} {k2} {d}");
        let found = extract_certificate(&problem, &sol, &handles, layout).unwrap();
        let (m2, n2) = xi_expand(&found).unwrap();
        let a = to_kernel_operator(&m, &n, k1).unwrap();
        let b = to_kernel_operator(&m2, &n2, k1).unwrap();
        let rule = default_rule(layout.interval);
        let mut g = rng(3);
        for _ in 0..5 {
            let z = random_state(a.n(), a.m(), layout.interval, 3, &mut g);
            let (va, vb) = (a.value(&z, &rule).unwrap(), b.value(&z, &rule).unwrap());
            assert!((va - vb).abs() < 1e-6 * (1.0 + va.abs()), "{va} vs {vb}");
        }
    }
}

#[test]
fn targets_beyond_the_certificate_degree_are_rejected() {
    let i = iv(1.0);
    let layout = XiLayout::new(0, 1, 1, i);
    let m = PolyMat1::new(1, 1, (0..4).map(|_| DMatrix::identity(1, 1)).collect(), i).unwrap();
    let err = xi_constraints(&m, &PolyMat2::zeros(1, 1, i), layout).unwrap_err();
    assert!(matches!(err, LkError::DegreeTooLow { .. }), "{err}");
}

#[test]
fn indefinite_targets_are_infeasible() {
    let i = iv(1.0);
    for coeffs in [vec![-1.0], vec![0.0, 1.0]] {
        let m = PolyMat1::new(1, 1, coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect(), i).unwrap();
        let (problem, _) = xi_constraints(&m, &PolyMat2::zeros(1, 1, i), XiLayout::new(0, 1, 1, i)).unwrap();
        assert_eq!(solve(&problem, &SolveOptions::default()).unwrap().status, SolveStatus::Infeasible);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn certificates_are_sound(k1 in 0usize..=2, k2 in 1usize..=2, d in 0usize..=2, weighted in any::<bool>(), seed in any::<u64>()) {
        let layout = layout_for(k1, k2, d, weighted, 0.5 + (seed % 5) as f64 * 0.4);
        let cert = random_certificate(layout, seed);
        let (m, n) = xi_expand(&cert).unwrap();
        let op = to_kernel_operator(&m, &n, k1).unwrap();
        prop_assert!(sample_positivity(&op, 200, &default_rule(layout.interval), seed).unwrap() >= -1e-10);
    }

    #[test]
    fn expansion_is_affine(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let layout = layout_for(1, 1, 2, true, 1.0);
        let x = random_certificate(layout, seed);
        let y = random_certificate(layout, seed.wrapping_add(1));
        let combo = XiCertificate {
            gram: &x.gram * a + &y.gram * b,
            weight_gram: Some(x.weight_gram.clone().unwrap() * a + y.weight_gram.clone().unwrap() * b),
            layout,
        };
        let (mx, nx) = xi_expand(&x).unwrap();
        let (my, ny) = xi_expand(&y).unwrap();
        let (mc, nc) = xi_expand(&combo).unwrap();
        let m_err = mc.sub(&mx.scale(a).add(&my.scale(b)).unwrap()).unwrap().coeff_norm();
        let n_err = nc.sub(&nx.scale(a).add(&ny.scale(b)).unwrap()).unwrap().coeff_norm();
        prop_assert!(m_err < 1e-12 && n_err < 1e-12);
    }
}
