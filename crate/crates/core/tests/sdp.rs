use lkfsyn::polyalg::{Interval, PolyMat1, PolyMat2};
use lkfsyn::positivity::{xi_constraints, XiLayout};
use lkfsyn::sdp::{solve, AffineExpr, Coefficient, ExprMat, SdpProblem, SolveOptions, SolveStatus, VariableKind};
use nalgebra::DMatrix;

fn scalar_block(value_eq: f64) -> SolveStatus {
    let mut p = SdpProblem::new();
    let h = p.declare_variable("x", VariableKind::SymMatrix { side: 1 }).unwrap();
    let x = p.matrix(h).unwrap();
    p.add_psd("x", &x).unwrap();
    p.add_equality("fix", x.get(0, 0).sub(&AffineExpr::constant(value_eq)));
    solve(&p, &SolveOptions::default()).unwrap().status
}

#[test]
fn one_by_one_block() {
    assert_eq!(scalar_block(1.0), SolveStatus::Feasible);
    assert_eq!(scalar_block(-1.0), SolveStatus::Infeasible);
}

#[test]
fn fixed_values_round_trip() {
    let mut p = SdpProblem::new();
    let h = p.declare_variable("X", VariableKind::SymMatrix { side: 3 }).unwrap();
    let target = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.5, 1.0, 0.2, -0.3, 0.2, 1.5]);
    let x = p.matrix(h).unwrap();
    p.add_psd("X", &x).unwrap();
    p.add_matrix_equality("fix", &x, &ExprMat::from_dmatrix(&target), true).unwrap();
    let sol = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Feasible);
    let got = sol.matrix(&p, h).unwrap();
    assert_eq!(got, got.transpose());
    assert!((got - target).amax() < 1e-7);
}

#[test]
fn maximising_a_margin() {
    // max t s.t. [[1, t], [t, 1]] ⪰ 0  →  t = 1
    let mut p = SdpProblem::new();
    let h = p.declare_variable("t", VariableKind::Scalar).unwrap();
    let t = p.scalar(h).unwrap();
    let m = ExprMat::from_fn(2, 2, |i, j| if i == j { AffineExpr::constant(1.0) } else { t.clone() });
    p.add_psd("m", &m).unwrap();
    p.minimize(t.scaled(-1.0));
    let sol = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Feasible);
    assert!((sol.scalar(&p, h).unwrap() - 1.0).abs() < 1e-6);
}

fn xi_status(m: &[f64], r: f64, d: usize, weighted: bool) -> SolveStatus {
    let iv = Interval::new(r).unwrap();
    let coeffs = m.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect();
    let mt = PolyMat1::new(1, 1, coeffs, iv).unwrap();
    let mut layout = XiLayout::new(0, 1, d, iv);
    if !weighted {
        layout = layout.unweighted();
    }
    let (p, _) = xi_constraints(&mt, &PolyMat2::zeros(1, 1, iv), layout).unwrap();
    solve(&p, &SolveOptions::default()).unwrap().status
}

#[test]
fn multiplier_examples() {
    assert_eq!(xi_status(&[1.0], 1.0, 0, true), SolveStatus::Feasible);
    assert_eq!(xi_status(&[-1.0], 1.0, 0, true), SolveStatus::Infeasible);
    assert_eq!(xi_status(&[0.0, 1.0], 1.0, 1, true), SolveStatus::Infeasible);
    assert_eq!(xi_status(&[1.0, 0.0, 1.0], 1.0, 1, true), SolveStatus::Feasible);
    // −s is nonnegative on the interval but only the weighted certificate sees it
    assert_eq!(xi_status(&[0.5, -1.0], 1.0, 1, true), SolveStatus::Feasible);
}
