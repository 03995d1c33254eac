//! Batch front end. A job file names a command, an input file and an output
//! directory:
//!
//! ```json
//! {"command": "invert", "input": "op.json", "output": "out", "overrides": {"quad_nodes": 40}}
//! ```
//!
//! Exit status is 0 on success, 1 when a certificate cannot be found or a
//! check fails (a `report.json` is still written), 2 on malformed input.
//! Diagnostics go to standard error as `key=value` lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ddesim::{evaluate_v_along, simulate, with_v, PlantModel, PolynomialFeedback, StateFeedback, Trajectory};
use crate::error::{LkError, Result};
use crate::lkoperator::{
    composition_residual, invariance_residual, inverse_invariance_residual, invert_separable,
    sample_rng, BoundaryData, KernelOperator, SeparableKernelOperator, SeparableOperatorJson, StateFunction,
};
use crate::matrix::{from_rows_shaped, to_rows};
use crate::polyalg::{gauss_rule, Interval, PolyJson, PolyMat1, DEFAULT_QUAD_NODES};
use crate::positivity::{sample_positivity, to_kernel_operator, xi_expand, XiCertificate, XiLayout};
use crate::sdp::SolveOptions;
use crate::synthesis::{
    assemble, published_gains, synthesize, SynthesisOptions, SynthesisProblem, SynthesisProblemJson,
    VALIDATION_HORIZON_DELAYS, VALIDATION_STEPS_PER_DELAY,
};

/// Default absolute tolerance of residual checks.
pub const CHECK_TOL: f64 = 1e-8;
/// Random states used by the residual samplers.
pub const RESIDUAL_SAMPLES: usize = 20;

#[derive(Parser, Debug)]
#[command(name = "lkfsyn", version, about = "Delay-system stability analysis and controller synthesis")]
pub struct Args {
    /// Job file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the job file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for sampled checks; overrides the job file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run the built-in oracle suite and exit.
    #[arg(long)]
    pub self_test: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Invert,
    CheckInvariance,
    Synthesize,
    Simulate,
    ReproduceExample,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub degree: Option<usize>,
    pub eps_min: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub quad_nodes: Option<usize>,
    pub seed: Option<u64>,
    /// Restrict `S` to a constant matrix in synthesis.
    pub constant_s: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub command: Command,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub overrides: Overrides,
}

impl JobConfig {
    /// Reads a job file; a relative `input` is resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: JobConfig = serde_json::from_str(&text)?;
        if let (Some(input), Some(dir)) = (cfg.input.as_mut(), path.parent()) {
            if input.is_relative() {
                *input = dir.join(&*input);
            }
        }
        Ok(cfg)
    }

    fn seed(&self) -> u64 {
        self.overrides.seed.unwrap_or(0)
    }

    fn quad_nodes(&self) -> usize {
        self.overrides.quad_nodes.unwrap_or(DEFAULT_QUAD_NODES)
    }

    fn read_input<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        let path = self
            .input
            .as_ref()
            .ok_or_else(|| LkError::Parse(format!("command {:?} needs an input file", self.command)))?;
        let text = fs::read_to_string(path).map_err(|e| LkError::Parse(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Input of `check-invariance`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceInput {
    pub operator: SeparableOperatorJson,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(default)]
    pub tol: Option<f64>,
}

/// Input of `simulate`. Without `phi_coeffs` the initial function is the
/// constant `Cψ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationInput {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    pub r: f64,
    #[serde(rename = "F", default)]
    pub f: Option<Vec<Vec<f64>>>,
    #[serde(rename = "H", default)]
    pub h: Option<PolyJson>,
    #[serde(default)]
    pub controller: Option<PolynomialFeedback>,
    pub psi: Vec<f64>,
    /// `φ` coefficients, lowest degree first, each an `m`-vector.
    #[serde(default)]
    pub phi_coeffs: Option<Vec<Vec<f64>>>,
    /// Operator whose quadratic form is recorded along the run.
    #[serde(default)]
    pub lyapunov: Option<SeparableOperatorJson>,
}

impl SimulationInput {
    pub fn plant(&self) -> Result<PlantModel> {
        let iv = Interval::new(self.r)?;
        let n = self.a.len();
        let m = self.d.len();
        let mut plant = PlantModel::new(
            from_rows_shaped(&self.a, n, n)?,
            from_rows_shaped(&self.b, n, m)?,
            from_rows_shaped(&self.c, m, n)?,
            from_rows_shaped(&self.d, m, m)?,
            iv,
        )?;
        if let Some(f) = &self.f {
            let p = f.first().map_or(0, Vec::len);
            plant = plant.with_input(from_rows_shaped(f, n, p)?)?;
        }
        if let Some(h) = self.h.clone() {
            plant = plant.with_distributed(h.into_poly1()?)?;
        }
        Ok(plant)
    }

    pub fn initial_state(&self, plant: &PlantModel) -> Result<StateFunction> {
        if self.psi.len() != plant.n() {
            return Err(LkError::Parse(format!("psi has length {}, expected {}", self.psi.len(), plant.n())));
        }
        initial_state(&plant.c, DVector::from_column_slice(&self.psi), self.phi_coeffs.as_deref(), plant.interval)
    }
}

/// Outcome of a job: artifacts written and whether the job's check passed.
#[derive(Clone, Debug)]
pub struct JobReport {
    pub artifacts: Vec<PathBuf>,
    pub passed: bool,
    pub summary: serde_json::Value,
}

fn log(level: &str, event: &str, fields: &[(&str, String)]) {
    let mut line = format!("level={level} event={event}");
    for (k, v) in fields {
        if v.contains(' ') {
            let _ = write!(line, " {k}={v:?}");
        } else {
            let _ = write!(line, " {k}={v}");
        }
    }
    eprintln!("{line}");
}

struct Out {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Out { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        log("info", "artifact", &[("path", path.display().to_string())]);
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }
}

/// Exit status for an error.
pub fn exit_code(err: &LkError) -> i32 {
    match err {
        LkError::Parse(_)
        | LkError::InvalidArgument(_)
        | LkError::DimensionMismatch { .. }
        | LkError::IntervalMismatch(..)
        | LkError::BasisMismatch { .. }
        | LkError::WrongVariableCount(_) => 2,
        _ => 1,
    }
}

fn error_kind(err: &LkError) -> &'static str {
    match err {
        LkError::InvalidArgument(_) => "invalid_argument",
        LkError::DimensionMismatch { .. } => "dimension_mismatch",
        LkError::IntervalMismatch(..) => "interval_mismatch",
        LkError::WrongVariableCount(_) => "wrong_variable_count",
        LkError::SingularMatrix { .. } => "singular_matrix",
        LkError::QuadratureMismatch { .. } => "quadrature_mismatch",
        LkError::DegreeTooLow { .. } => "degree_too_low",
        LkError::BasisMismatch { .. } => "basis_mismatch",
        LkError::UnknownHandle(_) => "unknown_handle",
        LkError::Infeasible(_) => "infeasible",
        LkError::NumericalTrouble(_) => "numerical_trouble",
        LkError::ValidationFailed { .. } => "validation_failed",
        LkError::NonFiniteState { .. } => "non_finite_state",
        LkError::Parse(_) => "parse",
        LkError::Io(_) => "io",
    }
}

/// Runs one job, writing artifacts under `out_dir`.
pub fn run(cfg: &JobConfig, out_dir: &Path) -> Result<JobReport> {
    let mut out = Out::new(out_dir)?;
    log("info", "start", &[("command", format!("{:?}", cfg.command)), ("out", out_dir.display().to_string())]);
    let (passed, summary) = match cfg.command {
        Command::Invert => run_invert(cfg, &mut out)?,
        Command::CheckInvariance => run_check(cfg, &mut out)?,
        Command::Synthesize => run_synthesize(cfg, &mut out)?,
        Command::Simulate => run_simulate(cfg, &mut out)?,
        Command::ReproduceExample => run_example(cfg, &mut out)?,
    };
    out.json("summary.json", &summary)?;
    Ok(JobReport { artifacts: out.written, passed, summary })
}

fn run_invert(cfg: &JobConfig, out: &mut Out) -> Result<(bool, serde_json::Value)> {
    let op = cfg.read_input::<SeparableOperatorJson>()?.into_operator()?;
    let rule = gauss_rule(cfg.quad_nodes(), op.interval());
    let inv = invert_separable(&op, &rule)?;
    let residual = composition_residual(&op, &inv, RESIDUAL_SAMPLES, &rule, cfg.seed())?;
    let separable = if op.s.is_constant() { Some(inv.to_separable()?.to_json()) } else { None };
    out.json(
        "inverse.json",
        &json!({
            "n": op.n(),
            "m": op.m(),
            "r": op.interval().r(),
            "degree": op.degree(),
            "Phat": to_rows(&inv.p_hat),
            "Hhat": to_rows(&inv.h_hat),
            "Gammahat": to_rows(&inv.gamma_hat),
            "K": to_rows(&inv.k),
            "T": to_rows(&inv.t),
            "separable": separable,
            "composition_residual": residual,
            "quad_nodes": rule.len(),
        }),
    )?;
    log("info", "inverted", &[("composition_residual", format!("{residual:e}"))]);
    Ok((true, json!({"command": "invert", "composition_residual": residual})))
}

fn run_check(cfg: &JobConfig, out: &mut Out) -> Result<(bool, serde_json::Value)> {
    let input: InvarianceInput = cfg.read_input()?;
    let tol = input.tol.unwrap_or(CHECK_TOL);
    let op = input.operator.into_operator()?;
    let bd = BoundaryData::new(
        from_rows_shaped(&input.c, op.m(), op.n())?,
        from_rows_shaped(&input.d, op.m(), op.m())?,
    )?;
    let (r28, r29, r30) = invariance_residual(&op.to_kernel()?, &bd)?;
    let max = r28.max(r29).max(r30);
    let invariant = max <= tol;
    // The inverse inherits invariance; check it on sampled domain states.
    let inverse = if invariant {
        let rule = gauss_rule(cfg.quad_nodes(), op.interval());
        let inv = invert_separable(&op, &rule)?;
        Some(inverse_invariance_residual(&inv, &bd, RESIDUAL_SAMPLES, &rule, cfg.seed())?)
    } else {
        None
    };
    let value = json!({
        "psi": r28,
        "kernel": r29,
        "delay": r30,
        "max": max,
        "tol": tol,
        "invariant": invariant,
        "inverse_boundary_residual": inverse,
    });
    out.json("residuals.json", &value)?;
    log(
        if invariant { "info" } else { "warn" },
        "invariance",
        &[("max", format!("{max:e}")), ("tol", format!("{tol:e}"))],
    );
    if !invariant {
        out.json("report.json", &json!({"status": "failed", "error": "not_invariant", "max": max, "tol": tol}))?;
    }
    Ok((invariant, value))
}

fn synthesis_options(cfg: &JobConfig) -> SynthesisOptions {
    SynthesisOptions {
        constant_s: cfg.overrides.constant_s.unwrap_or(false),
        quad_nodes: cfg.quad_nodes(),
        solver: SolveOptions::from_env(),
        ..SynthesisOptions::default()
    }
}

fn apply_overrides(mut prob: SynthesisProblem, cfg: &JobConfig) -> Result<SynthesisProblem> {
    if let Some(d) = cfg.overrides.degree {
        prob.degree = d;
    }
    if let Some(e) = cfg.overrides.eps_min {
        if !(e > 0.0 && e.is_finite()) {
            return Err(LkError::InvalidArgument(format!("eps_min must be positive, got {e}")));
        }
        prob.eps_min = e;
    }
    Ok(prob)
}

fn synthesize_into(prob: &SynthesisProblem, cfg: &JobConfig, out: &mut Out) -> Result<crate::synthesis::SynthesisOutcome> {
    let opts = synthesis_options(cfg);
    let (problem, _) = assemble(prob, &opts)?;
    out.text("problem.sdpa", &problem.to_sdpa())?;
    log(
        "info",
        "sdp_assembled",
        &[
            ("vars", problem.n_vars().to_string()),
            ("psd_blocks", problem.psd_blocks().len().to_string()),
            ("equalities", problem.equalities().len().to_string()),
        ],
    );
    let outcome = synthesize(prob, &opts)?;
    out.json("certificate.json", &outcome.certificate.to_json())?;
    out.json("gains.json", &outcome.gains.to_json())?;
    log(
        "info",
        "synthesized",
        &[
            ("eps", format!("{:e}", outcome.solve.eps)),
            ("iterations", outcome.solve.iterations.to_string()),
            ("k2_fit_error", format!("{:e}", outcome.gains.k2_fit.max_error)),
        ],
    );
    Ok(outcome)
}

fn run_synthesize(cfg: &JobConfig, out: &mut Out) -> Result<(bool, serde_json::Value)> {
    let prob = apply_overrides(cfg.read_input::<SynthesisProblemJson>()?.into_problem()?, cfg)?;
    out.json("problem.json", &prob.to_json())?;
    let o = synthesize_into(&prob, cfg, out)?;
    Ok((
        true,
        json!({
            "command": "synthesize",
            "solve": o.solve,
            "validation": o.validation,
            "k2_fit_error": o.gains.k2_fit.max_error,
            "operator_block_dim": prob.n() + 2 * prob.m(),
        }),
    ))
}

fn initial_state(c: &DMatrix<f64>, psi: DVector<f64>, phi_coeffs: Option<&[Vec<f64>]>, iv: Interval) -> Result<StateFunction> {
    let m = c.nrows();
    let phi = match phi_coeffs {
        Some(cs) if !cs.is_empty() => {
            let coeffs = cs
                .iter()
                .map(|v| {
                    if v.len() == m {
                        Ok(DMatrix::from_column_slice(m, 1, v))
                    } else {
                        Err(LkError::Parse(format!("phi coefficient has length {}, expected {m}", v.len())))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            PolyMat1::new(m, 1, coeffs, iv)?
        }
        _ => PolyMat1::constant(DMatrix::from_column_slice(m, 1, (c * &psi).as_slice()), iv),
    };
    StateFunction::polynomial(psi, phi)
}

fn write_trajectory(out: &mut Out, stem: &str, traj: &Trajectory, title: &str) -> Result<()> {
    let csv = format!("{stem}.csv");
    out.text(&csv, &traj.to_csv())?;
    out.text(&format!("{stem}.gp"), &traj.plot_script(&csv, title))
}

fn run_simulate(cfg: &JobConfig, out: &mut Out) -> Result<(bool, serde_json::Value)> {
    let input: SimulationInput = cfg.read_input()?;
    let plant = input.plant()?;
    let init = input.initial_state(&plant)?;
    let dt = cfg.overrides.dt.unwrap_or(input.r / VALIDATION_STEPS_PER_DELAY as f64);
    let t_end = cfg.overrides.t_end.unwrap_or(VALIDATION_HORIZON_DELAYS * input.r);
    let controller = input.controller.as_ref().map(|c| c as &dyn StateFeedback);
    let mut traj = simulate(&plant, controller, &init, t_end, dt)?;
    let mut v_summary = serde_json::Value::Null;
    if let Some(op) = input.lyapunov.clone() {
        let op = op.into_operator()?;
        let series = evaluate_v_along(&traj, &op)?;
        v_summary = json!({
            "min": series.values.iter().copied().fold(f64::INFINITY, f64::min),
            "max_interior_slope": series.max_interior_slope(),
        });
        traj = with_v(traj, &series);
    }
    write_trajectory(out, "trajectory", &traj, "states")?;
    let decay = traj.decay_ratio();
    log("info", "simulated", &[("steps", traj.len().to_string()), ("decay_ratio", format!("{decay:e}"))]);
    Ok((
        true,
        json!({
            "command": "simulate",
            "dt": dt,
            "t_end": t_end,
            "steps": traj.len(),
            "decay_ratio": decay,
            "constraint_residual": traj.constraint_residual(&plant),
            "v": v_summary,
        }),
    ))
}

fn run_example(cfg: &JobConfig, out: &mut Out) -> Result<(bool, serde_json::Value)> {
    let prob = apply_overrides(SynthesisProblem::paper_example(2), cfg)?;
    let iv = prob.interval;
    let r = iv.r();
    out.json("problem.json", &prob.to_json())?;
    let dt = cfg.overrides.dt.unwrap_or(r / VALIDATION_STEPS_PER_DELAY as f64);
    let t_end = cfg.overrides.t_end.unwrap_or(VALIDATION_HORIZON_DELAYS * r);
    let init = initial_state(&prob.c, DVector::from_element(prob.n(), 1.0), None, iv)?;
    let plant = prob.plant();

    let published = published_gains();
    let pub_traj = simulate(&plant, Some(&published), &init, t_end, dt)?;
    write_trajectory(out, "published", &pub_traj, "published controller")?;
    out.json("published_gains.json", &published)?;

    let o = synthesize_into(&prob, cfg, out)?;
    let traj = simulate(&plant, Some(&o.gains), &init, t_end, dt)?;
    let series = evaluate_v_along(&traj, &o.inverse)?;
    let v_min = series.values.iter().copied().fold(f64::INFINITY, f64::min);
    let v_slope = series.max_interior_slope();
    let traj = with_v(traj, &series);
    write_trajectory(out, "closed_loop", &traj, "synthesized controller")?;

    let decay = traj.decay_ratio();
    let passed = decay <= crate::synthesis::DECAY_GATE;
    log(
        if passed { "info" } else { "warn" },
        "closed_loop",
        &[("decay_ratio", format!("{decay:e}")), ("v_min", format!("{v_min:e}")), ("v_max_slope", format!("{v_slope:e}"))],
    );
    let summary = json!({
        "command": "reproduce-example",
        "degree": prob.degree,
        "eps": o.solve.eps,
        "solve": o.solve,
        "K0_shape": [o.gains.k0.nrows(), o.gains.k0.ncols()],
        "K1_shape": [o.gains.k1.nrows(), o.gains.k1.ncols()],
        "k2_fit_degree": o.gains.k2_fit.degree,
        "k2_fit_error": o.gains.k2_fit.max_error,
        "decay_ratio": decay,
        "decay_gate": crate::synthesis::DECAY_GATE,
        "published_decay_ratio": pub_traj.decay_ratio(),
        "v_min": v_min,
        "v_max_interior_slope": v_slope,
        "operator_block_dim": prob.n() + 2 * prob.m(),
    });
    if !passed {
        out.json("report.json", &json!({"status": "failed", "error": "validation_failed", "decay_ratio": decay}))?;
    }
    Ok((passed, summary))
}

/// One line of the self-test.
#[derive(Clone, Debug, Serialize)]
pub struct SelfTestLine {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Built-in oracle suite: inverse compositions, certificate sampling and the
/// simulator's exponential check.
pub fn self_test(seed: u64) -> Result<Vec<SelfTestLine>> {
    let mut lines = Vec::new();
    let iv = Interval::new(1.0)?;
    let one = |v: f64| DMatrix::from_element(1, 1, v);

    let scalar = SeparableKernelOperator::new(one(1.0), one(1.0), one(1.0), PolyMat1::constant(one(1.0), iv), 0)?;
    let rule = gauss_rule(DEFAULT_QUAD_NODES, iv);
    let inv = invert_separable(&scalar, &rule)?;
    let err = (inv.p_hat[(0, 0)] - 2.0).abs() + (inv.h_hat[(0, 0)] + 1.0).abs() + inv.gamma_hat[(0, 0)].abs();
    lines.push(SelfTestLine { name: "scalar_inverse", value: err, bound: 1e-12, passed: err <= 1e-12 });

    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let mut rng = sample_rng(seed, i);
        let (n, m, d) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(0..=2));
        let op = random_separable(n, m, d, iv, &mut rng)?;
        let inv = invert_separable(&op, &rule)?;
        worst = worst.max(composition_residual(&op, &inv, 5, &rule, seed ^ i as u64)?);
    }
    lines.push(SelfTestLine { name: "composition_residual", value: worst, bound: 1e-9, passed: worst <= 1e-9 });

    let mut floor = f64::INFINITY;
    for i in 0..5 {
        let mut rng = sample_rng(seed.wrapping_add(1), i);
        let layout = XiLayout::new(1, 1, 1, iv);
        let gram = random_psd(layout.gram_side(), &mut rng);
        let weight = random_psd(layout.weight_side(), &mut rng);
        let (mm, nn) = xi_expand(&XiCertificate { gram, weight_gram: Some(weight), layout })?;
        let op: KernelOperator = to_kernel_operator(&mm, &nn, layout.k1)?;
        floor = floor.min(sample_positivity(&op, 100, &rule, seed ^ (i as u64 + 100))?);
    }
    lines.push(SelfTestLine { name: "certificate_positivity", value: floor, bound: -1e-10, passed: floor >= -1e-10 });

    let plant = PlantModel::new(one(-1.0), one(0.0), one(0.0), one(0.0), iv)?;
    let init = StateFunction::polynomial(DVector::from_element(1, 1.0), PolyMat1::zeros(1, 1, iv))?;
    let traj = simulate(&plant, None, &init, 1.0, 0.005)?;
    let err = (traj.x.last().map_or(f64::NAN, |x| x[0]) - (-1.0f64).exp()).abs();
    lines.push(SelfTestLine { name: "simulator_exponential", value: err, bound: 1e-6, passed: err <= 1e-6 });
    Ok(lines)
}

fn random_psd(side: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(side, side, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose()
}

/// Random separable operator with constant SPD `S` and `P` dominant enough to
/// keep the inverse well conditioned.
fn random_separable(n: usize, m: usize, d: usize, iv: Interval, rng: &mut impl Rng) -> Result<SeparableKernelOperator> {
    let q = (d + 1) * m;
    let p = random_psd(n, rng) + DMatrix::identity(n, n) * (n as f64);
    let h = DMatrix::from_fn(n, q, |_, _| rng.random_range(-0.5..0.5));
    let g = DMatrix::from_fn(q, q, |_, _| rng.random_range(-0.3..0.3));
    let gamma = (&g + g.transpose()) * 0.5;
    let s = random_psd(m, rng) + DMatrix::identity(m, m);
    SeparableKernelOperator::new(p, h, gamma, PolyMat1::constant(s, iv), d)
}

/// Entry point of the binary; returns the process exit status.
pub fn main_with_args(args: Args) -> i32 {
    if args.self_test {
        let seed = args.seed.unwrap_or(0);
        return match self_test(seed) {
            Ok(lines) => {
                let mut ok = true;
                for l in &lines {
                    println!("{} {} value={:e} bound={:e}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.value, l.bound);
                    ok &= l.passed;
                }
                i32::from(!ok)
            }
            Err(e) => {
                log("error", "self_test", &[("kind", error_kind(&e).into()), ("message", e.to_string())]);
                1
            }
        };
    }
    let Some(config) = args.config.as_ref() else {
        log("error", "usage", &[("message", "either --config or --self-test is required".into())]);
        return 2;
    };
    let mut cfg = match JobConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            log("error", "config", &[("kind", error_kind(&e).into()), ("message", e.to_string())]);
            return 2;
        }
    };
    if let Some(seed) = args.seed {
        cfg.overrides.seed = Some(seed);
    }
    let out_dir = args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    match run(&cfg, &out_dir) {
        Ok(report) => {
            log("info", "done", &[("passed", report.passed.to_string()), ("artifacts", report.artifacts.len().to_string())]);
            i32::from(!report.passed)
        }
        Err(e) => {
            let code = exit_code(&e);
            log("error", "failed", &[("kind", error_kind(&e).into()), ("exit", code.to_string()), ("message", e.to_string())]);
            if code == 1 && fs::create_dir_all(&out_dir).is_ok() {
                let report = json!({"status": "failed", "error": error_kind(&e), "message": e.to_string()});
                if let Ok(body) = serde_json::to_string_pretty(&report) {
                    let _ = fs::write(out_dir.join("report.json"), body + "\n");
                }
            }
            code
        }
    }
}
