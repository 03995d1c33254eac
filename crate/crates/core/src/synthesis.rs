//! State-feedback synthesis for
//!
//! ```text
//! ẋ(t) = A x(t) + B y(t−r) + F u(t),   y(t) = C x(t) + D y(t−r)
//! ```
//!
//! The decision variables are a kernel operator `𝒫` (`P`, `Q(s)`, `R(s,θ)`,
//! `S(s)`) and controller multipliers `M₀`, `M₁`, `M₂(s)`, linked by
//! `𝓚 = 𝓜𝒫⁻¹`. Positivity of `𝒫 − εI` and negativity of the derivative form
//! are imposed as Gram-matrix certificates (see [`crate::positivity`]), the
//! boundary conditions keeping `𝒫` invariant on the domain as linear
//! equalities. The gains are read off the closed-form inverse of `𝒫`.
//!
//! In the `(ψ̂, φ̂(−r))` block the input enters as `FM₀ + (FM₀)ᵀ`; writing the
//! second term as `M₀ᵀF` only typechecks when `F` is square.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ddesim::{simulate, PlantModel, StateFeedback};
use crate::error::{LkError, Result};
use crate::lkoperator::{
    invert_separable, uniform_grid, InverseKernelOperator, KernelOperator, SeparableKernelOperator,
    SeparableOperatorJson, StateFunction,
};
use crate::matrix::{from_rows_shaped, spectral_radius, to_rows};
use crate::polyalg::{Interval, PolyMat1, QuadratureRule};
use crate::positivity::{add_xi_constraints, XiLayout};
use crate::sdp::{
    solve, AffineExpr, Coefficient, ExprMat, ExprPoly1, ExprPoly2, SdpProblem, SolveOptions, SolveStatus, VarHandle,
    VariableKind,
};

/// Horizon of the post-solve closed-loop check, in delays.
pub const VALIDATION_HORIZON_DELAYS: f64 = 25.0;
/// Steps per delay in the post-solve check.
pub const VALIDATION_STEPS_PER_DELAY: usize = 200;
/// Required `max|x(T)| / max_t max|x(t)|`.
pub const DECAY_GATE: f64 = 0.05;
/// Samples of `K₂` on `[-r, 0]`.
pub const K2_SAMPLES: usize = 401;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub interval: Interval,
    pub degree: usize,
    pub eps_min: f64,
}

/// Wire form `{A, B, C, D, F, r, degree, eps_min}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisProblemJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    pub r: f64,
    pub degree: usize,
    #[serde(default = "default_eps_min")]
    pub eps_min: f64,
}

fn default_eps_min() -> f64 {
    1e-6
}

impl SynthesisProblemJson {
    pub fn into_problem(self) -> Result<SynthesisProblem> {
        let n = self.a.len();
        let m = self.d.len();
        let p = self.f.first().map_or(0, Vec::len);
        SynthesisProblem::new(
            from_rows_shaped(&self.a, n, n)?,
            from_rows_shaped(&self.b, n, m)?,
            from_rows_shaped(&self.c, m, n)?,
            from_rows_shaped(&self.d, m, m)?,
            from_rows_shaped(&self.f, n, p)?,
            Interval::new(self.r)?,
            self.degree,
            self.eps_min,
        )
    }
}

impl SynthesisProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        f: DMatrix<f64>,
        interval: Interval,
        degree: usize,
        eps_min: f64,
    ) -> Result<Self> {
        let plant = PlantModel::new(a.clone(), b.clone(), c.clone(), d.clone(), interval)?.with_input(f.clone())?;
        if f.ncols() == 0 {
            return Err(LkError::InvalidArgument("F must have at least one column".into()));
        }
        let rho = spectral_radius(&plant.d);
        if rho >= 1.0 {
            return Err(LkError::InvalidArgument(format!("spectral radius of D is {rho} ≥ 1")));
        }
        if !(eps_min > 0.0 && eps_min.is_finite()) {
            return Err(LkError::InvalidArgument(format!("eps_min must be positive, got {eps_min}")));
        }
        Ok(SynthesisProblem { a, b, c, d, f, interval, degree, eps_min })
    }

    /// The system of the worked example: six states, two delayed channels,
    /// one input, `r = 1.6`.
    pub fn paper_example(degree: usize) -> Self {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(6, 6, &[
            0.0, 0.5, 0.0, 0.0, 0.0, 0.0,
            -0.5, -0.5, 0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.1, 1.0, 0.0, 0.0,
            0.0, 0.0, -2.0, 0.2, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0, -2.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, -0.9,
        ]);
        let mut b = DMatrix::zeros(6, 2);
        b[(0, 0)] = 0.5;
        b[(5, 1)] = 1.0;
        let mut c = DMatrix::zeros(2, 6);
        c[(0, 0)] = -0.2;
        c[(1, 5)] = 1.0;
        let f = DMatrix::from_column_slice(6, 1, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let iv = Interval::new(1.6).expect("positive delay");
        SynthesisProblem::new(a, b, c, DMatrix::zeros(2, 2), f, iv, degree, 1e-6).expect("valid example")
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.d.nrows()
    }

    pub fn p(&self) -> usize {
        self.f.ncols()
    }

    pub fn plant(&self) -> PlantModel {
        PlantModel::new(self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone(), self.interval)
            .and_then(|p| p.with_input(self.f.clone()))
            .expect("validated at construction")
    }

    pub fn to_json(&self) -> SynthesisProblemJson {
        SynthesisProblemJson {
            a: to_rows(&self.a),
            b: to_rows(&self.b),
            c: to_rows(&self.c),
            d: to_rows(&self.d),
            f: to_rows(&self.f),
            r: self.interval.r(),
            degree: self.degree,
            eps_min: self.eps_min,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SynthesisOptions {
    /// Restrict `S` to a constant matrix (keeps the inverse polynomial).
    pub constant_s: bool,
    /// Use the interval-weighted Gram block in every certificate.
    pub weighted: bool,
    pub solver: SolveOptions,
    /// Run the closed-loop decay check after solving.
    pub validate: bool,
    pub quad_nodes: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            constant_s: false,
            weighted: true,
            solver: SolveOptions::from_env(),
            validate: true,
            quad_nodes: crate::polyalg::DEFAULT_QUAD_NODES,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SynthesisVariables {
    pub p: VarHandle,
    pub q: VarHandle,
    pub r: VarHandle,
    pub s: VarHandle,
    pub m0: VarHandle,
    pub m1: VarHandle,
    pub m2: VarHandle,
    pub eps: VarHandle,
}

pub fn declare_variables(problem: &mut SdpProblem, prob: &SynthesisProblem, constant_s: bool) -> Result<SynthesisVariables> {
    let (n, m, p, d) = (prob.n(), prob.m(), prob.p(), prob.degree);
    let poly = |rows, cols, vars, symmetric| VariableKind::PolyMatrix { rows, cols, degree: d, vars, symmetric };
    Ok(SynthesisVariables {
        p: problem.declare_variable("P", VariableKind::SymMatrix { side: n })?,
        q: problem.declare_variable("Q", poly(n, m, 1, false))?,
        r: problem.declare_variable("R", poly(m, m, 2, true))?,
        s: if constant_s {
            problem.declare_variable("S", VariableKind::SymMatrix { side: m })?
        } else {
            problem.declare_variable("S", poly(m, m, 1, true))?
        },
        m0: problem.declare_variable("M0", VariableKind::Matrix { rows: p, cols: n })?,
        m1: problem.declare_variable("M1", VariableKind::Matrix { rows: p, cols: m })?,
        m2: problem.declare_variable("M2", poly(p, m, 1, false))?,
        eps: problem.declare_variable("eps", VariableKind::Scalar)?,
    })
}

/// The three polynomial blocks of the synthesis conditions.
#[derive(Clone, Debug)]
pub struct SynthesisBlocks {
    /// `[[P, rQ], [rQᵀ, S]] − εI`.
    pub t: ExprPoly1<AffineExpr>,
    /// Derivative block over `(ψ̂, φ̂(−r), φ̂(s))`.
    pub u: ExprPoly1<AffineExpr>,
    /// `∂R/∂s + ∂R/∂θ`.
    pub v: ExprPoly2<AffineExpr>,
    /// `R` itself, the kernel paired with `T`.
    pub r: ExprPoly2<AffineExpr>,
}

type E = AffineExpr;

fn eye_times(k: usize, e: &E) -> ExprMat<E> {
    ExprMat::from_fn(k, k, |i, j| if i == j { e.clone() } else { E::zero() })
}

fn sym_part(x: &ExprMat<E>) -> ExprMat<E> {
    x.add(&x.transpose())
}

pub fn build_blocks(problem: &SdpProblem, prob: &SynthesisProblem, vars: &SynthesisVariables) -> Result<SynthesisBlocks> {
    let (n, m) = (prob.n(), prob.m());
    let r = prob.interval.r();
    let low = prob.interval.lower();
    let p = problem.matrix(vars.p)?;
    let q = problem.poly1(vars.q)?;
    let rk = problem.poly2(vars.r)?;
    let s = problem.poly1(vars.s)?;
    let m0 = problem.matrix(vars.m0)?;
    let m1 = problem.matrix(vars.m1)?;
    let m2 = problem.poly1(vars.m2)?;
    let eps = problem.scalar(vars.eps)?;
    let ct = prob.c.transpose();
    let dt = prob.d.transpose();

    let t = ExprPoly1::from_blocks(
        &[
            vec![Some(ExprPoly1::constant(p.clone())), Some(q.scale(r))],
            vec![Some(q.transpose().scale(r)), Some(s.clone())],
        ],
        &[n, m],
        &[n, m],
    );
    let t = t.add(&ExprPoly1::constant(eye_times(n + m, &eps).scale(-1.0)));

    let s0 = s.eval(0.0);
    let sr = s.eval(low);
    let mut g11 = sym_part(&p.lmul(&prob.a));
    g11.add_scaled(&sym_part(&q.eval(low).transpose().lmul(&prob.b)), r);
    g11.add_scaled(&s0.lmul(&ct).rmul(&prob.c), 1.0 / r);
    g11.add_scaled(&sym_part(&m0.lmul(&prob.f)), 1.0);
    g11.add_scaled(&eye_times(n, &eps), 1.0);

    let mut g12 = sr.lmul(&prob.b);
    g12.add_scaled(&m1.lmul(&prob.f), 1.0);
    g12.add_scaled(&s0.lmul(&ct).rmul(&prob.d), 1.0 / r);

    let g22 = sr.sub(&s0.lmul(&dt).rmul(&prob.d)).scale(-1.0 / r);

    let upsilon = q
        .derivative()
        .add(&rk.eval_s(low).lmul(&prob.b))
        .add(&q.lmul(&prob.a))
        .add(&m2.lmul(&prob.f))
        .scale(r);
    let sdot = s.derivative();

    let u = ExprPoly1::from_blocks(
        &[
            vec![Some(ExprPoly1::constant(g11)), Some(ExprPoly1::constant(g12.clone())), Some(upsilon.clone())],
            vec![Some(ExprPoly1::constant(g12.transpose())), Some(ExprPoly1::constant(g22)), None],
            vec![Some(upsilon.transpose()), None, Some(sdot)],
        ],
        &[n, m, m],
        &[n, m, m],
    );
    let v = rk.diff_s().add(&rk.diff_theta());
    Ok(SynthesisBlocks { t, u, v, r: rk })
}

/// Equalities keeping `𝒫` invariant on the domain, coefficient by coefficient.
pub fn build_structural_equalities(problem: &mut SdpProblem, prob: &SynthesisProblem, vars: &SynthesisVariables) -> Result<()> {
    let r = prob.interval.r();
    let low = prob.interval.lower();
    let p = problem.matrix(vars.p)?;
    let q = problem.poly1(vars.q)?;
    let rk = problem.poly2(vars.r)?;
    let s = problem.poly1(vars.s)?;

    let mut e28 = q.eval(0.0).transpose().scale(r);
    e28.add_scaled(&s.eval(0.0).rmul(&prob.c), 1.0);
    e28.add_scaled(&p.lmul(&prob.c), -1.0);
    e28.add_scaled(&q.eval(low).transpose().lmul(&prob.d), -r);
    let zero28 = ExprMat::zeros(e28.rows(), e28.cols());
    problem.add_matrix_equality("boundary.psi", &e28, &zero28, false)?;

    let e29 = rk.eval_s(0.0).add(&q.lmul(&prob.c).scale(-1.0)).add(&rk.eval_s(low).lmul(&prob.d).scale(-1.0));
    for (i, c) in e29.coeffs().iter().enumerate() {
        problem.add_matrix_equality(&format!("boundary.kernel[{i}]"), c, &ExprMat::zeros(c.rows(), c.cols()), false)?;
    }

    let mut e30 = s.eval(low).lmul(&prob.d);
    e30.add_scaled(&s.eval(0.0).rmul(&prob.d), -1.0);
    let zero30 = ExprMat::zeros(e30.rows(), e30.cols());
    problem.add_matrix_equality("boundary.delay", &e30, &zero30, false)?;
    Ok(())
}

/// The full synthesis SDP: maximise `ε ≤ 1` subject to the certificates,
/// the boundary equalities and the scale normalisation `P ⪯ I`.
///
/// The derivative certificate acts on `(ψ, φ(−r), φ(s))`, so its block side
/// grows as `n + 2m`:
///
/// ```
/// use lkfsyn::synthesis::{assemble, SynthesisOptions, SynthesisProblem};
///
/// let prob = SynthesisProblem::paper_example(2);
/// let (sdp, _) = assemble(&prob, &SynthesisOptions::default()).unwrap();
/// let n_plus_2m = prob.n() + 2 * prob.m();
/// assert_eq!(n_plus_2m, 10);
/// assert_eq!(sdp.metadata()["U.block_dim"], n_plus_2m);
/// assert_eq!(sdp.metadata()["operator_block_dim"], n_plus_2m);
/// ```
pub fn assemble(prob: &SynthesisProblem, opts: &SynthesisOptions) -> Result<(SdpProblem, SynthesisVariables)> {
    let (n, m, d) = (prob.n(), prob.m(), prob.degree);
    let iv = prob.interval;
    let mut problem = SdpProblem::new();
    let vars = declare_variables(&mut problem, prob, opts.constant_s)?;
    let blocks = build_blocks(&problem, prob, &vars)?;

    let layout = |k1, k2| {
        let l = XiLayout::new(k1, k2, d, iv);
        if opts.weighted {
            l
        } else {
            l.unweighted()
        }
    };
    add_xi_constraints(&mut problem, "T", &blocks.t, &blocks.r, layout(n, m))?;
    add_xi_constraints(&mut problem, "U", &blocks.u.scale(-1.0), &blocks.v.scale(-1.0), layout(n + m, m))?;
    build_structural_equalities(&mut problem, prob, &vars)?;

    let p = problem.matrix(vars.p)?;
    problem.add_psd("I-P", &ExprMat::identity(n).sub(&p))?;
    let eps = problem.scalar(vars.eps)?;
    problem.add_nonneg("eps<=1", AffineExpr::constant(1.0).sub(&eps));
    problem.minimize(eps.scaled(-1.0));

    problem.set_meta("n", n);
    problem.set_meta("m", m);
    problem.set_meta("p", prob.p());
    problem.set_meta("degree", d);
    problem.set_meta("operator_block_dim", n + 2 * m);
    Ok((problem, vars))
}

/// Recovered operator and multipliers.
#[derive(Clone, Debug)]
pub struct SynthesisCertificate {
    pub kernel: KernelOperator,
    pub separable: SeparableKernelOperator,
    pub m0: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub m2: PolyMat1,
    pub eps: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateJson {
    pub operator: SeparableOperatorJson,
    #[serde(rename = "M0")]
    pub m0: Vec<Vec<f64>>,
    #[serde(rename = "M1")]
    pub m1: Vec<Vec<f64>>,
    #[serde(rename = "M2_coeffs")]
    pub m2: Vec<Vec<Vec<f64>>>,
    pub eps: f64,
}

impl SynthesisCertificate {
    pub fn to_json(&self) -> CertificateJson {
        CertificateJson {
            operator: self.separable.to_json(),
            m0: to_rows(&self.m0),
            m1: to_rows(&self.m1),
            m2: self.m2.coeffs().iter().map(to_rows).collect(),
            eps: self.eps,
        }
    }
}

/// `K₂` least-squares fit on the sample grid.
#[derive(Clone, Debug, Serialize)]
pub struct K2Fit {
    pub degree: usize,
    /// Lowest degree first.
    pub coeffs: Vec<Vec<Vec<f64>>>,
    pub max_error: f64,
}

#[derive(Clone, Debug)]
pub struct ControllerGains {
    pub k0: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    /// `K₂(s) = (L Z(s) + M₂(s)) S(s)⁻¹`.
    l: DMatrix<f64>,
    m2: PolyMat1,
    inverse: InverseKernelOperator,
    pub k2_grid: Vec<f64>,
    pub k2_samples: Vec<DMatrix<f64>>,
    pub k2_fit: K2Fit,
    /// Exact polynomial `K₂` when `S` is constant.
    pub k2_polynomial: Option<PolyMat1>,
}

impl ControllerGains {
    pub fn k2(&self, s: f64) -> Result<DMatrix<f64>> {
        let m = self.m2.cols();
        let d = self.inverse.degree();
        let mut lz = DMatrix::zeros(self.l.nrows(), m);
        let mut pw = 1.0;
        for i in 0..=d {
            lz += self.l.columns(i * m, m) * pw;
            pw *= s;
        }
        Ok((lz + self.m2.eval(s)) * self.inverse.s_inv_at(s)?)
    }

    pub fn k2_fit_poly(&self) -> Result<PolyMat1> {
        let (p, m) = self.k1.shape();
        let coeffs = self.k2_fit.coeffs.iter().map(|c| from_rows_shaped(c, p, m)).collect::<Result<_>>()?;
        PolyMat1::new(p, m, coeffs, self.m2.interval())
    }

    pub fn to_json(&self) -> GainsJson {
        GainsJson {
            k0: to_rows(&self.k0),
            k1: to_rows(&self.k1),
            k2: K2Json {
                grid: self.k2_grid.clone(),
                samples: self.k2_samples.iter().map(to_rows).collect(),
                fit: self.k2_fit.clone(),
                polynomial: self.k2_polynomial.as_ref().map(|p| p.coeffs().iter().map(to_rows).collect()),
            },
        }
    }
}

impl StateFeedback for ControllerGains {
    fn k0(&self) -> &DMatrix<f64> {
        &self.k0
    }
    fn k1(&self) -> &DMatrix<f64> {
        &self.k1
    }
    fn k2_at(&self, s: f64) -> Result<DMatrix<f64>> {
        self.k2(s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct K2Json {
    pub grid: Vec<f64>,
    pub samples: Vec<Vec<Vec<f64>>>,
    pub fit: K2Fit,
    pub polynomial: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GainsJson {
    #[serde(rename = "K0")]
    pub k0: Vec<Vec<f64>>,
    #[serde(rename = "K1")]
    pub k1: Vec<Vec<f64>>,
    #[serde(rename = "K2")]
    pub k2: K2Json,
}

/// Least-squares polynomial fit of each entry in the scaled variable `s/r`.
fn fit_polynomial(grid: &[f64], samples: &[DMatrix<f64>], degree: usize, r: f64) -> Result<K2Fit> {
    let (p, m) = samples[0].shape();
    let vander = DMatrix::from_fn(grid.len(), degree + 1, |i, k| (grid[i] / r).powi(k as i32));
    let svd = vander.clone().svd(true, true);
    let mut coeffs = vec![DMatrix::zeros(p, m); degree + 1];
    let mut max_error: f64 = 0.0;
    for a in 0..p {
        for b in 0..m {
            let rhs = DVector::from_iterator(grid.len(), samples.iter().map(|x| x[(a, b)]));
            let c = svd.solve(&rhs, 1e-14).map_err(|e| LkError::NumericalTrouble(format!("K2 fit: {e}")))?;
            max_error = max_error.max((&vander * &c - &rhs).amax());
            for (k, ck) in c.iter().enumerate() {
                coeffs[k][(a, b)] = ck / r.powi(k as i32);
            }
        }
    }
    Ok(K2Fit { degree, coeffs: coeffs.iter().map(to_rows).collect(), max_error })
}

/// Gains of `𝓚 = 𝓜𝒫⁻¹` from a certificate.
pub fn gains_from_certificate(cert: &SynthesisCertificate, quad: &QuadratureRule) -> Result<ControllerGains> {
    let inv = invert_separable(&cert.separable, quad)?;
    gains_from_inverse(cert, inv)
}

fn gains_from_inverse(cert: &SynthesisCertificate, inv: InverseKernelOperator) -> Result<ControllerGains> {
    let iv = cert.separable.interval();
    let r = iv.r();
    let low = iv.lower();
    let d = cert.separable.degree();
    let (p, m) = cert.m1.shape();
    let qd = (d + 1) * m;
    if cert.m2.degree() > d {
        return Err(LkError::BasisMismatch { degree: d, found: cert.m2.degree() });
    }

    // W = ∫ M₂(θ) Ẑᵀ(θ) dθ
    let w = if cert.separable.s.is_constant() {
        let sinv = inv.s_inv_at(0.0)?;
        let zt = cert.separable.basis().transpose();
        cert.m2.mul_right(&sinv)?.mul(&zt)?.integrate_full()
    } else {
        let mut acc = DMatrix::zeros(p, qd);
        for (s, wt) in inv.rule().points() {
            acc += cert.m2.eval(s) * inv.z_hat_at(s)?.transpose() * wt;
        }
        acc
    };
    let zr = inv.z_hat_at(low)?;
    let k0 = &cert.m0 * &inv.p_hat + (&cert.m1 * zr.transpose() * inv.h_hat.transpose()) * r + &w * inv.h_hat.transpose() * r;
    let k1 = &cert.m1 * inv.s_inv_at(low)?;
    let l = &cert.m0 * &inv.h_hat + &cert.m1 * zr.transpose() * &inv.gamma_hat + &w * &inv.gamma_hat;

    let k2_polynomial = if cert.separable.s.is_constant() {
        let sinv = inv.s_inv_at(0.0)?;
        let lz = cert.separable.basis().mul_left(&l)?;
        Some(lz.add(&cert.m2)?.mul_right(&sinv)?)
    } else {
        None
    };

    let mut gains = ControllerGains {
        k0,
        k1,
        l,
        m2: cert.m2.clone(),
        inverse: inv,
        k2_grid: uniform_grid(iv, K2_SAMPLES),
        k2_samples: Vec::new(),
        k2_fit: K2Fit { degree: 2 * d, coeffs: Vec::new(), max_error: 0.0 },
        k2_polynomial,
    };
    gains.k2_samples = gains.k2_grid.iter().map(|&s| gains.k2(s)).collect::<Result<_>>()?;
    if gains.k2_samples.iter().any(|k| k.iter().any(|v| !v.is_finite())) {
        return Err(LkError::NumericalTrouble("non-finite K2 sample".into()));
    }
    gains.k2_fit = fit_polynomial(&gains.k2_grid, &gains.k2_samples, 2 * d, r)?;
    Ok(gains)
}

/// Largest Gauss rule tried when `S⁻¹` is not polynomial.
pub const MAX_QUAD_NODES: usize = 640;

/// Inverts with `nodes` Gauss points, doubling while the rules disagree on `K`.
pub fn invert_adaptive(op: &SeparableKernelOperator, nodes: usize) -> Result<InverseKernelOperator> {
    let mut nodes = nodes.max(1);
    loop {
        match invert_separable(op, &crate::polyalg::gauss_rule(nodes, op.interval())) {
            Err(LkError::QuadratureMismatch { .. }) if nodes < MAX_QUAD_NODES => nodes = (2 * nodes).min(MAX_QUAD_NODES),
            other => return other,
        }
    }
}

/// Outcome of the closed-loop decay check.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub t_end: f64,
    pub dt: f64,
    pub peak: f64,
    pub final_max: f64,
    pub decay_ratio: f64,
    pub passed: bool,
}

/// Simulates from `ψ = 1`, `φ ≡ Cψ` and applies the decay gate.
pub fn validate_closed_loop(prob: &SynthesisProblem, gains: &dyn StateFeedback) -> Result<ValidationReport> {
    let iv = prob.interval;
    let r = iv.r();
    let psi = DVector::from_element(prob.n(), 1.0);
    let phi0 = &prob.c * &psi;
    let init = StateFunction::polynomial(
        psi,
        PolyMat1::constant(DMatrix::from_column_slice(prob.m(), 1, phi0.as_slice()), iv),
    )?;
    let t_end = VALIDATION_HORIZON_DELAYS * r;
    let dt = r / VALIDATION_STEPS_PER_DELAY as f64;
    let traj = simulate(&prob.plant(), Some(gains), &init, t_end, dt)?;
    let peak = traj.x.iter().map(|x| x.amax()).fold(0.0, f64::max);
    let final_max = traj.x.last().map_or(0.0, |x| x.amax());
    let decay_ratio = traj.decay_ratio();
    Ok(ValidationReport { t_end, dt, peak, final_max, decay_ratio, passed: decay_ratio <= DECAY_GATE })
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub iterations: u32,
    pub eps: f64,
    pub max_psd_violation: f64,
    pub max_equality_residual: f64,
    pub n_vars: usize,
    pub n_equalities: usize,
    pub psd_sides: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SynthesisOutcome {
    pub certificate: SynthesisCertificate,
    pub gains: ControllerGains,
    pub inverse: InverseKernelOperator,
    pub solve: SolveSummary,
    pub validation: Option<ValidationReport>,
}

/// Solves the synthesis SDP, recovers the operator, inverts it and forms the
/// gains. With `opts.validate` a closed loop that fails the decay gate is an
/// error.
pub fn synthesize(prob: &SynthesisProblem, opts: &SynthesisOptions) -> Result<SynthesisOutcome> {
    let (problem, vars) = assemble(prob, opts)?;
    let sol = solve(&problem, &opts.solver)?;
    let eps = sol.scalar(&problem, vars.eps)?;
    let summary = SolveSummary {
        status: sol.status,
        iterations: sol.iterations,
        eps,
        max_psd_violation: sol.max_psd_violation,
        max_equality_residual: sol.max_equality_residual,
        n_vars: problem.n_vars(),
        n_equalities: problem.equalities().len(),
        psd_sides: problem.psd_blocks().iter().map(|b| b.side).collect(),
    };
    match sol.status {
        SolveStatus::Feasible => {}
        SolveStatus::Infeasible => {
            return Err(LkError::Infeasible(format!("no certificate at degree {}; try a higher degree", prob.degree)))
        }
        SolveStatus::NumericalTrouble => return Err(LkError::NumericalTrouble(sol.diagnostics.clone())),
    }
    if eps < prob.eps_min {
        return Err(LkError::Infeasible(format!(
            "best margin {eps:e} is below eps_min {:e} at degree {}; try a higher degree",
            prob.eps_min, prob.degree
        )));
    }

    let iv = prob.interval;
    let p = sol.matrix(&problem, vars.p)?;
    let q = sol.poly1(&problem, vars.q, iv)?;
    let r = sol.poly2(&problem, vars.r, iv)?;
    let s = sol.poly1(&problem, vars.s, iv)?;
    let kernel = KernelOperator::new(p, q, r, s)?;
    let separable = SeparableKernelOperator::from_kernel(&kernel, prob.degree)?;
    let certificate = SynthesisCertificate {
        kernel,
        separable,
        m0: sol.matrix(&problem, vars.m0)?,
        m1: sol.matrix(&problem, vars.m1)?,
        m2: sol.poly1(&problem, vars.m2, iv)?,
        eps,
    };
    let inverse = invert_adaptive(&certificate.separable, opts.quad_nodes)?;
    let gains = gains_from_inverse(&certificate, inverse.clone())?;

    let validation = if opts.validate {
        let report = validate_closed_loop(prob, &gains)?;
        if !report.passed {
            return Err(LkError::ValidationFailed {
                details: format!(
                    "max|x(T)|/max|x| = {:.3e} > {DECAY_GATE} at T = {}",
                    report.decay_ratio, report.t_end
                ),
            });
        }
        Some(report)
    } else {
        None
    };
    Ok(SynthesisOutcome { certificate, gains, inverse, solve: summary, validation })
}

/// The gains printed for the worked example (the doubled sign in the `s²`
/// coefficient of the second `K₂` entry read as `+`).
pub fn published_gains() -> crate::ddesim::PolynomialFeedback {
    let k0 = DMatrix::from_row_slice(1, 6, &[-1.874, 2.232, -0.830, 3.099, 0.030, -1.033]);
    let k1 = DMatrix::from_row_slice(1, 2, &[-0.239, -0.343]);
    let k2: Vec<DMatrix<f64>> = [
        [-0.246, 0.238],
        [0.221, -0.398],
        [0.122, 0.007],
        [-0.012, 0.037],
        [-0.032, 0.010],
    ]
    .iter()
    .map(|c| DMatrix::from_row_slice(1, 2, c))
    .collect();
    crate::ddesim::PolynomialFeedback::new(k0, k1, &k2)
}

/// `K₀ψ + K₁φ(−r) + ∫K₂φ` for a state.
pub fn apply_gains(gains: &dyn StateFeedback, z: &StateFunction, rule: &QuadratureRule) -> Result<DVector<f64>> {
    let low = z.interval().lower();
    let mut u = gains.k0() * &z.psi + gains.k1() * z.phi_at(low)?;
    for (s, w) in rule.points() {
        u += gains.k2_at(s)? * z.phi_at(s)? * w;
    }
    Ok(u)
}

/// `M₀ψ + M₁φ(−r) + ∫M₂φ` for a state.
pub fn apply_multipliers(cert: &SynthesisCertificate, z: &StateFunction, rule: &QuadratureRule) -> Result<DVector<f64>> {
    let low = z.interval().lower();
    let mut u = &cert.m0 * &z.psi + &cert.m1 * z.phi_at(low)?;
    for (s, w) in rule.points() {
        u += cert.m2.eval(s) * z.phi_at(s)? * w;
    }
    Ok(u)
}

/// Builds a certificate from given data (used to exercise the gain formulas).
pub fn certificate_from_parts(
    separable: SeparableKernelOperator,
    m0: DMatrix<f64>,
    m1: DMatrix<f64>,
    m2: PolyMat1,
) -> Result<SynthesisCertificate> {
    let kernel = separable.to_kernel()?;
    Ok(SynthesisCertificate { kernel, separable, m0, m1, m2, eps: 0.0 })
}
