//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{iv, random_boundary, random_invariant_operator, random_separable, rng, spd};
use lkfsyn::cli::{run, Command, JobConfig, Overrides};
use lkfsyn::ddesim::{simulate, PlantModel, StateFeedback};
use lkfsyn::lkoperator::{
    composition_residual, default_rule, inverse_invariance_residual, invert_separable, SeparableKernelOperator,
    StateFunction,
};
use lkfsyn::polyalg::{gauss_rule, PolyMat1};
use lkfsyn::positivity::{sample_positivity, to_kernel_operator, xi_expand, XiCertificate, XiLayout};
use lkfsyn::synthesis::{assemble, published_gains, SynthesisOptions, SynthesisProblem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn inversion_identity() -> Outcome {
    let mut g = rng(1);
    let (mut worst_const, mut worst_poly): (f64, f64) = (0.0, 0.0);
    for k in 0..100u64 {
        let (n, m, d) = (g.random_range(1..=4), g.random_range(1..=3), g.random_range(0..=3));
        let r = g.random_range(0.5..2.0);
        for poly in [false, true] {
            let op = random_separable(n, m, d, r, poly, &mut g);
            let rule = gauss_rule(40, op.interval());
            let inv = invert_separable(&op, &rule).map_err(|e| e.to_string())?;
            let e = composition_residual(&op, &inv, 5, &rule, k).map_err(|e| e.to_string())?;
            if poly {
                worst_poly = worst_poly.max(e);
            } else {
                worst_const = worst_const.max(e);
            }
        }
    }
    check(
        worst_const <= 1e-9 && worst_poly <= 1e-7,
        format!("max residual constant S {worst_const:.2e} (≤ 1e-9), polynomial S {worst_poly:.2e} (≤ 1e-7)"),
    )
}

fn scalar_closed_form() -> Outcome {
    let i = iv(1.0);
    let one = DMatrix::from_element(1, 1, 1.0);
    let op = SeparableKernelOperator::new(one.clone(), one.clone(), one.clone(), PolyMat1::constant(one, i), 0)
        .map_err(|e| e.to_string())?;
    let rule = default_rule(i);
    let inv = invert_separable(&op, &rule).map_err(|e| e.to_string())?;
    let errs = [
        (inv.k[(0, 0)] - 1.0).abs(),
        (inv.t[(0, 0)] - 1.0).abs(),
        (inv.h_hat[(0, 0)] + 1.0).abs(),
        (inv.p_hat[(0, 0)] - 2.0).abs(),
        inv.gamma_hat[(0, 0)].abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let comp = composition_residual(&op, &inv, 20, &rule, 0).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-12 && comp <= 1e-12,
        format!("K=1 T=1 Ĥ=−1 P̂=2 Γ̂=0 within {worst:.1e}; composition residual {comp:.1e}"),
    )
}

fn invariance_propagation() -> Outcome {
    let mut g = rng(3);
    let (mut worst_gen, mut worst): (f64, f64) = (0.0, 0.0);
    for k in 0..100u64 {
        let (n, m, d) = (g.random_range(1..=3), g.random_range(1..=2), g.random_range(0..=2));
        let bd = random_boundary(n, m, &mut g);
        let (op, gen_residual) = random_invariant_operator(&bd, d, g.random_range(0.5..2.0), &mut g);
        worst_gen = worst_gen.max(gen_residual);
        let rule = gauss_rule(40, op.interval());
        let inv = invert_separable(&op, &rule).map_err(|e| e.to_string())?;
        worst = worst.max(inverse_invariance_residual(&inv, &bd, 5, &rule, k).map_err(|e| e.to_string())?);
    }
    check(
        worst_gen <= 1e-9 && worst <= 1e-7,
        format!("operators satisfy the boundary equalities to {worst_gen:.1e}; inverse residual {worst:.2e} (≤ 1e-7)"),
    )
}

fn low_rank_psd(side: usize, g: &mut rand_chacha::ChaCha8Rng) -> DMatrix<f64> {
    let rank = g.random_range(1..=side.div_ceil(2));
    let f = common::uniform(side, rank, 1.0, g);
    &f * f.transpose()
}

fn xi_soundness() -> Outcome {
    let mut g = rng(4);
    let mut worst = f64::INFINITY;
    for k in 0..200u64 {
        let (k1, k2, d) = (g.random_range(0..=2), g.random_range(1..=2), g.random_range(0..=2));
        let mut layout = XiLayout::new(k1, k2, d, iv(g.random_range(0.5..2.0)));
        if d == 0 || g.random_bool(0.3) {
            layout = layout.unweighted();
        }
        // odd draws sit on the boundary of the cone
        let psd = |side: usize, g: &mut _| if k % 2 == 0 { spd(side, 0.0, g) } else { low_rank_psd(side, g) };
        let gram = psd(layout.gram_side(), &mut g);
        let weight_gram = (layout.weight_side() > 0).then(|| psd(layout.weight_side(), &mut g));
        let cert = XiCertificate { gram, weight_gram, layout };
        let (m, n) = xi_expand(&cert).map_err(|e| e.to_string())?;
        let op = to_kernel_operator(&m, &n, k1).map_err(|e| e.to_string())?;
        let rule = default_rule(layout.interval);
        worst = worst.min(sample_positivity(&op, 1000, &rule, k).map_err(|e| e.to_string())?);
    }
    check(worst >= -1e-10, format!("minimum sampled V/‖z‖² over 200×1000 states {worst:.2e} (≥ −1e-10)"))
}

fn published_controller() -> Outcome {
    let start = Instant::now();
    let prob = SynthesisProblem::paper_example(2);
    let psi = DVector::from_element(6, 1.0);
    let y0 = &prob.c * &psi;
    let init = StateFunction::polynomial(psi, PolyMat1::constant(DMatrix::from_column_slice(2, 1, y0.as_slice()), prob.interval))
        .map_err(|e| e.to_string())?;
    let plant: PlantModel = prob.plant();
    let gains = published_gains();
    let traj = simulate(&plant, Some(&gains as &dyn StateFeedback), &init, 40.0, 1.6 / 200.0).map_err(|e| e.to_string())?;
    let ratio = traj.decay_ratio();
    let secs = start.elapsed().as_secs_f64();
    check(ratio <= 0.05, format!("max|x(40)| / max|x| = {ratio:.4} (≤ 0.05) in {secs:.2}s"))
}

struct ExampleRun {
    summary: serde_json::Value,
    secs: f64,
}

fn reproduce_example() -> Result<ExampleRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = JobConfig {
        command: Command::ReproduceExample,
        input: None,
        output: None,
        overrides: Overrides { degree: Some(2), ..Overrides::default() },
    };
    let start = Instant::now();
    let report = run(&cfg, dir.path()).map_err(|e| e.to_string())?;
    Ok(ExampleRun { summary: report.summary, secs: start.elapsed().as_secs_f64() })
}

fn synthesis_example(run: &Result<ExampleRun, String>) -> Outcome {
    let run = run.as_ref().map_err(|e| format!("reproduce-example failed: {e}"))?;
    let s = &run.summary;
    let eps = s["eps"].as_f64().unwrap_or(f64::NAN);
    let decay = s["decay_ratio"].as_f64().unwrap_or(f64::NAN);
    let k0 = (s["K0_shape"][0].as_u64(), s["K0_shape"][1].as_u64());
    let k1 = (s["K1_shape"][0].as_u64(), s["K1_shape"][1].as_u64());
    let fit_degree = s["k2_fit_degree"].as_u64().unwrap_or(u64::MAX);
    let fit_error = s["k2_fit_error"].as_f64().unwrap_or(f64::NAN);
    let ok = s["solve"]["status"] == "feasible"
        && eps > 0.0
        && decay <= 0.05
        && k0 == (Some(1), Some(6))
        && k1 == (Some(1), Some(2))
        && fit_degree <= 4;
    check(
        ok,
        format!(
            "eps {eps:.3e}, decay ratio {decay:.4} (≤ 0.05), K0 1×6, K1 1×2, K2 fit degree {fit_degree} with max error {fit_error:.2e}, {:.1}s",
            run.secs
        ),
    )
}

fn lyapunov_monitoring(run: &Result<ExampleRun, String>) -> Outcome {
    let run = run.as_ref().map_err(|e| format!("reproduce-example failed: {e}"))?;
    let v_min = run.summary["v_min"].as_f64().unwrap_or(f64::NAN);
    let slope = run.summary["v_max_interior_slope"].as_f64().unwrap_or(f64::NAN);
    check(v_min > 0.0 && slope <= 1e-6, format!("min V {v_min:.3e} (> 0), max interior dV/dt {slope:.3e} (≤ 1e-6)"))
}

fn simulator_accuracy() -> Outcome {
    let r = iv(1.0);
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let plant = PlantModel::new(one(-1.0), one(0.0), one(0.0), one(0.0), r).map_err(|e| e.to_string())?;
    let init = StateFunction::polynomial(DVector::from_element(1, 1.0), PolyMat1::zeros(1, 1, r)).map_err(|e| e.to_string())?;
    let err = |dt: f64| -> Result<f64, String> {
        let traj = simulate(&plant, None, &init, 1.0, dt).map_err(|e| e.to_string())?;
        Ok((traj.x.last().unwrap()[0] - (-1.0f64).exp()).abs())
    };
    let (e1, e2) = (err(0.005)?, err(0.0025)?);
    let ratio = e1 / e2;
    check(
        e1 <= 1e-6 && ratio >= 8.0,
        format!("|x(1) − e⁻¹| = {e1:.2e} at dt 0.005 (≤ 1e-6); halving dt improves it {ratio:.1}× (≥ 8)"),
    )
}

fn complexity() -> Outcome {
    let prob = SynthesisProblem::paper_example(2);
    let (problem, _) = assemble(&prob, &SynthesisOptions::default()).map_err(|e| e.to_string())?;
    let meta = problem.metadata();
    let want = prob.n() + 2 * prob.m();
    let got = (meta.get("U.block_dim").copied(), meta.get("operator_block_dim").copied());
    check(
        want == 10 && got == (Some(want), Some(want)),
        format!("n + 2m = {want}; recorded derivative block {:?}, operator block {:?}", got.0, got.1),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn main() {
    let example = catch_unwind(reproduce_example).unwrap_or_else(|_| Err("panicked".into()));
    let results: Vec<(&str, Outcome)> = vec![
        ("inversion identity", guarded(inversion_identity)),
        ("scalar closed form", guarded(scalar_closed_form)),
        ("invariance propagation", guarded(invariance_propagation)),
        ("certificate soundness", guarded(xi_soundness)),
        ("published controller decay", guarded(published_controller)),
        ("synthesis of the worked example", guarded(|| synthesis_example(&example))),
        ("Lyapunov monitoring", guarded(|| lyapunov_monitoring(&example))),
        ("simulator accuracy", guarded(simulator_accuracy)),
        ("block dimension n+2m", guarded(complexity)),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
