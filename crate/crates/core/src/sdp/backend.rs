//! Conversion to the primal conic form `min cᵀx  s.t.  Ax + s = b, s ∈ K`
//! and the Clarabel interior-point backend.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{SdpProblem, SolveOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeSpec {
    Zero(usize),
    Nonneg(usize),
    /// Scaled upper-triangle vectorisation of a `side × side` block.
    Psd(usize),
}

/// Sparse row storage of `A`; `rows[k]` lists `(variable, value)`.
#[derive(Clone, Debug)]
pub struct ConicData {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub cones: Vec<ConeSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendStatus {
    Solved,
    Infeasible,
    Trouble(String),
}

#[derive(Clone, Debug)]
pub struct BackendOutput {
    pub x: Vec<f64>,
    pub status: BackendStatus,
    pub iterations: u32,
}

/// A solver for [`ConicData`]. Implementations only need to return a point;
/// feasibility is re-checked by the caller.
pub trait ConicBackend {
    fn solve(&self, data: &ConicData, opts: &SolveOptions) -> BackendOutput;
}

pub(super) fn to_conic(p: &SdpProblem) -> ConicData {
    let mut rows = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let neg = |terms: &[(usize, f64)], a: f64| terms.iter().map(|&(i, v)| (i, -a * v)).collect::<Vec<_>>();

    // e(x) = 0  ⇔  s = -e0 - a·x ∈ {0}
    for row in p.equalities() {
        rows.push(row.expr.terms.clone());
        b.push(-row.expr.constant);
    }
    if !p.equalities().is_empty() {
        cones.push(ConeSpec::Zero(p.equalities().len()));
    }
    for row in p.inequalities() {
        rows.push(neg(&row.expr.terms, 1.0));
        b.push(row.expr.constant);
    }
    if !p.inequalities().is_empty() {
        cones.push(ConeSpec::Nonneg(p.inequalities().len()));
    }
    for block in p.psd_blocks() {
        let mut k = 0;
        for j in 0..block.side {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                let e = &block.entries[k];
                rows.push(neg(&e.terms, scale));
                b.push(scale * e.constant);
                k += 1;
            }
        }
        cones.push(ConeSpec::Psd(block.side));
    }

    let mut c = vec![0.0; p.n_vars()];
    for &(i, v) in &p.objective().terms {
        c[i] = v;
    }
    ConicData { n: p.n_vars(), rows, b, c, cones }
}

fn to_csc(data: &ConicData) -> CscMatrix<f64> {
    let m = data.rows.len();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); data.n];
    for (r, row) in data.rows.iter().enumerate() {
        for &(j, v) in row {
            if v != 0.0 {
                cols[j].push((r, v));
            }
        }
    }
    let mut colptr = Vec::with_capacity(data.n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in cols {
        for (r, v) in col {
            rowval.push(r);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, data.n, colptr, rowval, nzval)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ClarabelBackend;

impl ConicBackend for ClarabelBackend {
    fn solve(&self, data: &ConicData, opts: &SolveOptions) -> BackendOutput {
        let trouble = |msg: String| BackendOutput { x: vec![0.0; data.n], status: BackendStatus::Trouble(msg), iterations: 0 };
        if data.n == 0 {
            return trouble("problem has no variables".into());
        }
        let cones: Vec<SupportedConeT<f64>> = data
            .cones
            .iter()
            .map(|c| match *c {
                ConeSpec::Zero(k) => SupportedConeT::ZeroConeT(k),
                ConeSpec::Nonneg(k) => SupportedConeT::NonnegativeConeT(k),
                ConeSpec::Psd(k) => SupportedConeT::PSDTriangleConeT(k),
            })
            .collect();
        let tol = (opts.tol * 1e-2).max(1e-12);
        let settings = match DefaultSettingsBuilder::default()
            .verbose(opts.verbose)
            .max_iter(opts.max_iter)
            .tol_feas(tol)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .build()
        {
            Ok(s) => s,
            Err(e) => return trouble(format!("solver settings: {e}")),
        };
        let p = CscMatrix::<f64>::zeros((data.n, data.n));
        let a = to_csc(data);
        let mut solver = match DefaultSolver::new(&p, &data.c, &a, &data.b, &cones, settings) {
            Ok(s) => s,
            Err(e) => return trouble(format!("solver setup: {e:?}")),
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => BackendStatus::Solved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => BackendStatus::Infeasible,
            other => BackendStatus::Trouble(format!("solver stopped with {other:?}")),
        };
        // the returned point is only meaningful when not a certificate
        let x = if status == BackendStatus::Infeasible { vec![0.0; data.n] } else { sol.x.clone() };
        BackendOutput { x, status, iterations: sol.iterations }
    }
}
