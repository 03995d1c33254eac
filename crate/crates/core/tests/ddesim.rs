mod common;

use common::{iv, mat, rng, spd};
use lkfsyn::ddesim::{evaluate_v_along, simulate, spectral_radius, steps_per_delay, PlantModel, StateFeedback};
use lkfsyn::lkoperator::{KernelOperator, StateFunction};
use lkfsyn::polyalg::{Interval, PolyMat1};
use lkfsyn::synthesis::{published_gains, SynthesisProblem};
use lkfsyn::LkError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn scalar_state(x: f64, y: f64, interval: Interval) -> StateFunction {
    StateFunction::polynomial(DVector::from_element(1, x), PolyMat1::constant(m1(y), interval)).unwrap()
}

fn decay_error(dt: f64) -> f64 {
    let r = iv(1.0);
    let plant = PlantModel::new(m1(-1.0), m1(0.0), m1(0.0), m1(0.0), r).unwrap();
    let traj = simulate(&plant, None, &scalar_state(1.0, 0.0, r), 1.0, dt).unwrap();
    assert!((traj.times.last().unwrap() - 1.0).abs() < 1e-12);
    (traj.x.last().unwrap()[0] - (-1.0f64).exp()).abs()
}

#[test]
fn exponential_decay_accuracy() {
    assert!(decay_error(0.005) <= 1e-6);
}

#[test]
fn rk4_order() {
    // coarse steps so the error stays well above rounding
    for dt in [0.1, 0.05, 0.025] {
        let ratio = decay_error(dt) / decay_error(dt / 2.0);
        assert!(ratio >= 8.0, "dt = {dt}: ratio {ratio}");
    }
}

#[test]
fn difference_channel_is_geometric() {
    let r = iv(1.0);
    let plant = PlantModel::new(m1(0.0), m1(0.0), m1(0.0), m1(0.5), r).unwrap();
    let traj = simulate(&plant, None, &scalar_state(0.0, 1.0, r), 3.0, 0.01).unwrap();
    for (t, y) in traj.times.iter().zip(&traj.y) {
        let want = 0.5f64.powi(t.floor() as i32 + 1);
        // nodes at the interval ends belong to the next piece
        if (t - t.round()).abs() > 1e-9 {
            assert_eq!(y[0], want, "t = {t}");
        }
    }
    assert!(traj.constraint_residual(&plant) <= 1e-12);
}

#[test]
fn distributed_delay_against_ode_reduction() {
    // ẋ = −x + ∫ y(t+θ) dθ with y = x; for r small the integral ≈ r x, so the
    // closed form exp((−1 + r) t) is matched to O(r²) on a short horizon.
    let r = iv(0.01);
    let plant = PlantModel::new(m1(-1.0), m1(0.0), m1(1.0), m1(0.0), r)
        .unwrap()
        .with_distributed(PolyMat1::constant(m1(1.0), r))
        .unwrap();
    let init = scalar_state(1.0, 1.0, r);
    let traj = simulate(&plant, None, &init, 1.0, 0.0005).unwrap();
    let want = (-(1.0 - 0.01f64)).exp();
    assert!((traj.x.last().unwrap()[0] - want).abs() < 1e-3);
    assert!(traj.constraint_residual(&plant) <= 1e-9);
}

#[test]
fn published_controller_decays() {
    let prob = SynthesisProblem::paper_example(2);
    let plant = prob.plant();
    let gains = published_gains();
    let psi = DVector::from_element(6, 1.0);
    let y0 = &prob.c * &psi;
    let init = StateFunction::polynomial(psi, PolyMat1::constant(DMatrix::from_column_slice(2, 1, y0.as_slice()), prob.interval)).unwrap();
    let traj = simulate(&plant, Some(&gains as &dyn StateFeedback), &init, 40.0, 1.6 / 200.0).unwrap();
    assert!(traj.decay_ratio() <= 0.05, "decay ratio {}", traj.decay_ratio());
    assert!(traj.constraint_residual(&plant) <= 1e-9);
    assert_eq!(traj.u[0].len(), 1);
}

#[test]
fn open_loop_paper_plant_is_unstable() {
    let prob = SynthesisProblem::paper_example(2);
    let psi = DVector::from_element(6, 1.0);
    let y0 = &prob.c * &psi;
    let init = StateFunction::polynomial(psi, PolyMat1::constant(DMatrix::from_column_slice(2, 1, y0.as_slice()), prob.interval)).unwrap();
    match simulate(&prob.plant(), None, &init, 40.0, 1.6 / 200.0) {
        Ok(traj) => assert!(traj.decay_ratio() > 0.05),
        Err(LkError::NonFiniteState { .. }) => {}
        Err(e) => panic!("unexpected {e}"),
    }
}

#[test]
fn zero_trajectory_has_zero_value() {
    let mut g = rng(3);
    let r = iv(1.3);
    let plant = PlantModel::new(mat(2, 2, &[-1.0, 0.3, 0.0, -2.0]), mat(2, 1, &[0.2, 0.1]), mat(1, 2, &[1.0, 0.0]), m1(0.3), r).unwrap();
    let init = StateFunction::polynomial(DVector::zeros(2), PolyMat1::zeros(1, 1, r)).unwrap();
    let traj = simulate(&plant, None, &init, 2.6, 0.013).unwrap();
    let op = KernelOperator::new(spd(2, 1.0, &mut g), PolyMat1::constant(mat(2, 1, &[0.3, -0.2]), r), lkfsyn::polyalg::PolyMat2::zeros(1, 1, r), PolyMat1::constant(m1(2.0), r)).unwrap();
    let v = evaluate_v_along(&traj, &op).unwrap();
    assert!(v.values.iter().all(|&x| x == 0.0));
    assert!(v.slope.iter().all(|&x| x == 0.0));
}

#[test]
fn identity_operator_on_constant_state() {
    let r = iv(1.0);
    let plant = PlantModel::new(m1(0.0), m1(0.0), m1(0.0), m1(0.0), r).unwrap();
    let traj = simulate(&plant, None, &scalar_state(1.0, 0.0, r), 2.0, 0.01).unwrap();
    let v = evaluate_v_along(&traj, &KernelOperator::identity(1, 1, r)).unwrap();
    assert!(v.values.iter().all(|&x| (x - 1.0).abs() < 1e-14));
    assert!(v.max_interior_slope().abs() < 1e-12);
}

#[test]
fn value_along_rejects_wrong_interval() {
    let r = iv(1.0);
    let plant = PlantModel::new(m1(0.0), m1(0.0), m1(0.0), m1(0.0), r).unwrap();
    let traj = simulate(&plant, None, &scalar_state(1.0, 0.0, r), 1.0, 0.01).unwrap();
    assert!(evaluate_v_along(&traj, &KernelOperator::identity(1, 1, iv(2.0))).is_err());
    assert!(evaluate_v_along(&traj, &KernelOperator::identity(2, 1, r)).is_err());
}

#[test]
fn spectral_radius_examples() {
    assert_eq!(spectral_radius(&DMatrix::zeros(2, 2)), 0.0);
    assert!((spectral_radius(&(DMatrix::identity(2, 2) * 0.5)) - 0.5).abs() < 1e-15);
    assert_eq!(spectral_radius(&mat(2, 2, &[0.0, 1.0, 0.0, 0.0])), 0.0);
    // rotation: complex pair of modulus 0.9
    let (c, s) = (0.9 * 0.3f64.cos(), 0.9 * 0.3f64.sin());
    assert!((spectral_radius(&mat(2, 2, &[c, -s, s, c])) - 0.9).abs() < 1e-12);
}

#[test]
fn step_must_divide_delay() {
    let r = iv(1.0);
    let plant = PlantModel::new(m1(-1.0), m1(0.0), m1(0.0), m1(0.0), r).unwrap();
    assert!(simulate(&plant, None, &scalar_state(1.0, 0.0, r), 1.0, 0.3).is_err());
    assert!(simulate(&plant, None, &scalar_state(1.0, 0.0, r), -1.0, 0.1).is_err());
    assert_eq!(steps_per_delay(1.6, 0.008).unwrap(), 200);
}

#[test]
fn blow_up_is_reported() {
    let r = iv(1.0);
    let plant = PlantModel::new(m1(400.0), m1(0.0), m1(0.0), m1(0.0), r).unwrap();
    let err = simulate(&plant, None, &scalar_state(1.0, 0.0, r), 100.0, 0.1).unwrap_err();
    assert!(matches!(err, LkError::NonFiniteState { .. }));
}

fn stable_matrix(n: usize, vals: &[f64]) -> DMatrix<f64> {
    // upper-triangular with negative diagonal
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -0.5 - vals[i].abs()
        } else if j > i {
            vals[(i * n + j) % vals.len()]
        } else {
            0.0
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constraint_residual_holds(seed in 0u64..1000, dval in -0.9f64..0.9) {
        let mut g = rng(seed);
        let r = iv(1.0);
        let a = common::uniform(2, 2, 1.0, &mut g) - DMatrix::identity(2, 2) * 2.0;
        let b = common::uniform(2, 2, 0.5, &mut g);
        let c = common::uniform(2, 2, 1.0, &mut g);
        let d = DMatrix::identity(2, 2) * dval;
        let plant = PlantModel::new(a, b, c, d, r).unwrap();
        let psi = DVector::from_fn(2, |_, _| rand::Rng::random_range(&mut g, -1.0..1.0));
        let phi = PolyMat1::new(2, 1, vec![common::uniform(2, 1, 1.0, &mut g), common::uniform(2, 1, 1.0, &mut g)], r).unwrap();
        let init = StateFunction::polynomial(psi, phi).unwrap();
        let traj = simulate(&plant, None, &init, 3.0, 0.02).unwrap();
        prop_assert!(traj.constraint_residual(&plant) <= 1e-9);
    }

    #[test]
    fn stable_plant_eventually_decreases(vals in prop::collection::vec(-1.5f64..1.5, 9), dval in -0.9f64..0.9) {
        let r = iv(0.5);
        let a = stable_matrix(3, &vals);
        let plant = PlantModel::new(a, DMatrix::zeros(3, 1), mat(1, 3, &[1.0, -1.0, 0.5]), m1(dval), r).unwrap();
        let init = StateFunction::polynomial(DVector::from_element(3, 1.0), PolyMat1::constant(m1(1.0), r)).unwrap();
        let traj = simulate(&plant, None, &init, 40.0, 0.01).unwrap();
        let norms: Vec<f64> = traj.x.iter().map(|x| x.norm()).collect();
        let tail = &norms[norms.len() / 2..];
        prop_assert!(tail.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(tail.last().unwrap() < &norms[0]);
    }
}
