//! Semidefinite feasibility problems.
//!
//! [`SdpProblem`] collects scalar decision variables (declared as symmetric
//! matrices, plain matrices or polynomial matrices), PSD cone constraints on
//! affine matrix expressions, affine equalities and a linear objective.
//! [`solve`] hands the problem to a [`ConicBackend`] in standard primal conic
//! form and then re-verifies the returned point itself.

mod backend;
pub mod expr;
mod sdpa;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::Serialize;

pub use backend::{BackendOutput, BackendStatus, ClarabelBackend, ConeSpec, ConicBackend, ConicData};
pub use expr::{AffineExpr, Coefficient, ExprMat, ExprPoly1, ExprPoly2};

use crate::error::{LkError, Result};
use crate::matrix::min_eigenvalue;
use crate::polyalg::{Interval, PolyMat1, PolyMat2};

static NEXT_PROBLEM_ID: AtomicU64 = AtomicU64::new(1);

/// Verification slack relative to `SolveOptions::tol`.
pub const VERIFY_FACTOR: f64 = 10.0;

/// Environment variable that overrides the default solver tolerance.
pub const TOL_ENV_VAR: &str = "LKFSYN_SOLVER_TOL";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VariableKind {
    Scalar,
    SymMatrix { side: usize },
    Matrix { rows: usize, cols: usize },
    /// `vars` is 1 or 2. For one variable `symmetric` makes every coefficient
    /// symmetric; for two variables it imposes `C_ij = C_jiᵀ`.
    PolyMatrix { rows: usize, cols: usize, degree: usize, vars: u8, symmetric: bool },
}

impl VariableKind {
    /// Number of independent scalar unknowns.
    pub fn scalar_count(&self) -> usize {
        let tri = |n: usize| n * (n + 1) / 2;
        match *self {
            VariableKind::Scalar => 1,
            VariableKind::SymMatrix { side } => tri(side),
            VariableKind::Matrix { rows, cols } => rows * cols,
            VariableKind::PolyMatrix { rows, cols, degree, vars: 1, symmetric } => {
                (degree + 1) * if symmetric { tri(rows) } else { rows * cols }
            }
            VariableKind::PolyMatrix { rows, cols, degree, symmetric, .. } => {
                let d = degree + 1;
                if symmetric {
                    d * tri(rows) + d * (d - 1) / 2 * rows * cols
                } else {
                    d * d * rows * cols
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarHandle {
    problem: u64,
    index: usize,
}

#[derive(Clone, Debug)]
struct HandleInfo {
    label: String,
    kind: VariableKind,
    offset: usize,
}

#[derive(Clone, Debug)]
pub struct PsdBlock {
    pub label: String,
    pub side: usize,
    /// Upper triangle in column-major order: (0,0), (0,1), (1,1), (0,2), …
    pub entries: Vec<AffineExpr>,
}

impl PsdBlock {
    pub fn value(&self, values: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        let mut k = 0;
        for j in 0..self.side {
            for i in 0..=j {
                let v = self.entries[k].eval(values);
                m[(i, j)] = v;
                m[(j, i)] = v;
                k += 1;
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct LinearRow {
    pub label: String,
    pub expr: AffineExpr,
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    id: u64,
    n_vars: usize,
    handles: Vec<HandleInfo>,
    psd_blocks: Vec<PsdBlock>,
    equalities: Vec<LinearRow>,
    inequalities: Vec<LinearRow>,
    objective: AffineExpr,
    metadata: BTreeMap<String, usize>,
}

impl Default for SdpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProblem {
    pub fn new() -> Self {
        SdpProblem {
            id: NEXT_PROBLEM_ID.fetch_add(1, Ordering::Relaxed),
            n_vars: 0,
            handles: Vec::new(),
            psd_blocks: Vec::new(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            objective: AffineExpr::default(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn psd_blocks(&self) -> &[PsdBlock] {
        &self.psd_blocks
    }

    pub fn equalities(&self) -> &[LinearRow] {
        &self.equalities
    }

    pub fn inequalities(&self) -> &[LinearRow] {
        &self.inequalities
    }

    pub fn objective(&self) -> &AffineExpr {
        &self.objective
    }

    pub fn metadata(&self) -> &BTreeMap<String, usize> {
        &self.metadata
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: usize) {
        self.metadata.insert(key.into(), value);
    }

    pub fn declare_variable(&mut self, label: impl Into<String>, kind: VariableKind) -> Result<VarHandle> {
        let positive = match kind {
            VariableKind::Scalar => true,
            VariableKind::SymMatrix { side } => side > 0,
            VariableKind::Matrix { rows, cols } => rows > 0 && cols > 0,
            VariableKind::PolyMatrix { rows, cols, vars, symmetric, .. } => {
                rows > 0 && cols > 0 && (vars == 1 || vars == 2) && (!symmetric || rows == cols)
            }
        };
        if !positive {
            return Err(LkError::InvalidArgument(format!("bad variable declaration {kind:?}")));
        }
        let handle = VarHandle { problem: self.id, index: self.handles.len() };
        self.handles.push(HandleInfo { label: label.into(), kind, offset: self.n_vars });
        self.n_vars += kind.scalar_count();
        Ok(handle)
    }

    fn info(&self, h: VarHandle) -> Result<&HandleInfo> {
        if h.problem != self.id {
            return Err(LkError::UnknownHandle(h.index));
        }
        self.handles.get(h.index).ok_or(LkError::UnknownHandle(h.index))
    }

    pub fn kind(&self, h: VarHandle) -> Result<VariableKind> {
        Ok(self.info(h)?.kind)
    }

    pub fn label(&self, h: VarHandle) -> Result<&str> {
        Ok(&self.info(h)?.label)
    }

    pub fn scalar(&self, h: VarHandle) -> Result<AffineExpr> {
        let info = self.info(h)?;
        match info.kind {
            VariableKind::Scalar => Ok(AffineExpr::var(info.offset)),
            _ => Err(LkError::InvalidArgument(format!("{} is not a scalar", info.label))),
        }
    }

    /// Matrix-valued expression for a `SymMatrix` or `Matrix` variable.
    pub fn matrix(&self, h: VarHandle) -> Result<ExprMat<AffineExpr>> {
        let info = self.info(h)?;
        match info.kind {
            VariableKind::SymMatrix { side } => Ok(sym_block(info.offset, side)),
            VariableKind::Matrix { rows, cols } => {
                Ok(ExprMat::from_fn(rows, cols, |i, j| AffineExpr::var(info.offset + i * cols + j)))
            }
            VariableKind::Scalar => Ok(ExprMat::from_fn(1, 1, |_, _| AffineExpr::var(info.offset))),
            _ => Err(LkError::InvalidArgument(format!("{} is a polynomial", info.label))),
        }
    }

    pub fn poly1(&self, h: VarHandle) -> Result<ExprPoly1<AffineExpr>> {
        let info = self.info(h)?;
        match info.kind {
            VariableKind::PolyMatrix { rows, cols, degree, vars: 1, symmetric } => {
                let per = if symmetric { rows * (rows + 1) / 2 } else { rows * cols };
                let coeffs = (0..=degree)
                    .map(|k| {
                        let base = info.offset + k * per;
                        if symmetric {
                            sym_block(base, rows)
                        } else {
                            ExprMat::from_fn(rows, cols, |i, j| AffineExpr::var(base + i * cols + j))
                        }
                    })
                    .collect();
                Ok(ExprPoly1::new(rows, cols, coeffs))
            }
            VariableKind::SymMatrix { .. } | VariableKind::Matrix { .. } | VariableKind::Scalar => {
                Ok(ExprPoly1::constant(self.matrix(h)?))
            }
            _ => Err(LkError::InvalidArgument(format!("{} is not a one-variable polynomial", info.label))),
        }
    }

    pub fn poly2(&self, h: VarHandle) -> Result<ExprPoly2<AffineExpr>> {
        let info = self.info(h)?;
        match info.kind {
            VariableKind::PolyMatrix { rows, cols, degree, vars: 2, symmetric } => {
                let d = degree + 1;
                let mut grid = vec![vec![ExprMat::zeros(rows, cols); d]; d];
                let mut next = info.offset;
                if symmetric {
                    for i in 0..d {
                        grid[i][i] = sym_block(next, rows);
                        next += rows * (rows + 1) / 2;
                        for j in (i + 1)..d {
                            let block = ExprMat::from_fn(rows, cols, |a, b| AffineExpr::var(next + a * cols + b));
                            grid[j][i] = block.transpose();
                            grid[i][j] = block;
                            next += rows * cols;
                        }
                    }
                } else {
                    for row in grid.iter_mut() {
                        for cell in row.iter_mut() {
                            *cell = ExprMat::from_fn(rows, cols, |a, b| AffineExpr::var(next + a * cols + b));
                            next += rows * cols;
                        }
                    }
                }
                Ok(ExprPoly2::new(rows, cols, grid))
            }
            _ => Err(LkError::InvalidArgument(format!("{} is not a two-variable polynomial", info.label))),
        }
    }

    /// Constrains a square expression to the PSD cone. The symmetric part is used.
    pub fn add_psd(&mut self, label: impl Into<String>, m: &ExprMat<AffineExpr>) -> Result<()> {
        if m.rows() != m.cols() {
            return Err(LkError::DimensionMismatch { context: "add_psd", left: m.shape(), right: (m.cols(), m.rows()) });
        }
        let side = m.rows();
        let mut entries = Vec::with_capacity(side * (side + 1) / 2);
        for j in 0..side {
            for i in 0..=j {
                if i == j {
                    entries.push(m.get(i, i).clone());
                } else {
                    let mut e = m.get(i, j).scaled(0.5);
                    e.add_scaled(m.get(j, i), 0.5);
                    entries.push(e);
                }
            }
        }
        self.psd_blocks.push(PsdBlock { label: label.into(), side, entries });
        Ok(())
    }

    /// Adds `expr = 0`. Identically-zero rows are skipped; a nonzero constant
    /// row is kept so the problem reports infeasible.
    pub fn add_equality(&mut self, label: impl Into<String>, expr: AffineExpr) {
        if expr.is_constant() && expr.constant == 0.0 {
            return;
        }
        self.equalities.push(LinearRow { label: label.into(), expr });
    }

    /// Entry-wise equality of two expression matrices; `upper_only` keeps i ≤ j.
    pub fn add_matrix_equality(
        &mut self,
        label: &str,
        lhs: &ExprMat<AffineExpr>,
        rhs: &ExprMat<AffineExpr>,
        upper_only: bool,
    ) -> Result<()> {
        if lhs.shape() != rhs.shape() {
            return Err(LkError::DimensionMismatch {
                context: "add_matrix_equality",
                left: lhs.shape(),
                right: rhs.shape(),
            });
        }
        for i in 0..lhs.rows() {
            for j in 0..lhs.cols() {
                if upper_only && j < i {
                    continue;
                }
                self.add_equality(format!("{label}[{i},{j}]"), lhs.get(i, j).sub(rhs.get(i, j)));
            }
        }
        Ok(())
    }

    /// Adds `expr ≥ 0`.
    pub fn add_nonneg(&mut self, label: impl Into<String>, expr: AffineExpr) {
        self.inequalities.push(LinearRow { label: label.into(), expr });
    }

    pub fn minimize(&mut self, objective: AffineExpr) {
        self.objective = objective;
    }

    /// SDPA sparse (`.dat-s`) text; equalities become LP pairs.
    pub fn to_sdpa(&self) -> String {
        sdpa::write(self)
    }

    pub(crate) fn conic_data(&self) -> ConicData {
        backend::to_conic(self)
    }

    /// Maximum violations (PSD eigenvalue floor, equality residual, inequality).
    pub fn residuals(&self, values: &[f64]) -> (f64, f64, f64) {
        let psd = self
            .psd_blocks
            .iter()
            .map(|b| (-min_eigenvalue(&b.value(values))).max(0.0))
            .fold(0.0, f64::max);
        let eq = self.equalities.iter().map(|r| r.expr.eval(values).abs()).fold(0.0, f64::max);
        let ineq = self.inequalities.iter().map(|r| (-r.expr.eval(values)).max(0.0)).fold(0.0, f64::max);
        (psd, eq, ineq)
    }
}

fn sym_block(offset: usize, side: usize) -> ExprMat<AffineExpr> {
    // upper triangle stored row by row: (0,0),(0,1)..(0,n-1),(1,1),..
    let idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        offset + i * (2 * side - i + 1) / 2 + (j - i)
    };
    ExprMat::from_fn(side, side, |i, j| AffineExpr::var(idx(i, j)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    NumericalTrouble,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-8, max_iter: 200, verbose: false }
    }
}

impl SolveOptions {
    /// Defaults with the tolerance taken from [`TOL_ENV_VAR`] when set.
    pub fn from_env() -> Self {
        let mut opts = Self::default();
        if let Some(tol) = std::env::var(TOL_ENV_VAR).ok().and_then(|v| v.parse::<f64>().ok()) {
            if tol > 0.0 && tol.is_finite() {
                opts.tol = tol;
            }
        }
        opts
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    problem: u64,
    pub values: Vec<f64>,
    pub status: SolveStatus,
    pub max_psd_violation: f64,
    pub max_equality_residual: f64,
    pub max_inequality_violation: f64,
    pub objective: f64,
    pub iterations: u32,
    pub diagnostics: String,
}

impl SdpSolution {
    fn check(&self, problem: &SdpProblem, h: VarHandle) -> Result<()> {
        if self.problem != problem.id || h.problem != problem.id {
            return Err(LkError::UnknownHandle(h.index));
        }
        Ok(())
    }

    pub fn scalar(&self, problem: &SdpProblem, h: VarHandle) -> Result<f64> {
        self.check(problem, h)?;
        Ok(problem.scalar(h)?.eval(&self.values))
    }

    /// Matrix value; symmetric variables come back exactly symmetric.
    pub fn matrix(&self, problem: &SdpProblem, h: VarHandle) -> Result<DMatrix<f64>> {
        self.check(problem, h)?;
        Ok(problem.matrix(h)?.value(&self.values))
    }

    pub fn poly1(&self, problem: &SdpProblem, h: VarHandle, interval: Interval) -> Result<PolyMat1> {
        self.check(problem, h)?;
        Ok(problem.poly1(h)?.value(&self.values, interval))
    }

    pub fn poly2(&self, problem: &SdpProblem, h: VarHandle, interval: Interval) -> Result<PolyMat2> {
        self.check(problem, h)?;
        Ok(problem.poly2(h)?.value(&self.values, interval))
    }
}

/// Solves with the default [`ClarabelBackend`].
pub fn solve(problem: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution> {
    solve_with(problem, opts, &ClarabelBackend)
}

pub fn solve_with(problem: &SdpProblem, opts: &SolveOptions, backend: &dyn ConicBackend) -> Result<SdpSolution> {
    if let Some(row) = problem.equalities.iter().find(|r| r.expr.is_constant()) {
        return Ok(trivially_infeasible(problem, format!("constant equality {} ≠ 0", row.label)));
    }
    let data = problem.conic_data();
    let out = backend.solve(&data, opts);
    let values = if out.x.len() == problem.n_vars { out.x } else { vec![0.0; problem.n_vars] };
    let (psd, eq, ineq) = problem.residuals(&values);
    let objective = problem.objective.eval(&values);
    // Interior-point iterates stop just short of the cone boundary; accept the
    // point when every residual is within ten times the requested tolerance.
    let gate = VERIFY_FACTOR * opts.tol;
    let verified = psd <= gate && eq <= gate && ineq <= gate;
    let (status, diagnostics) = match out.status {
        BackendStatus::Solved if verified => (SolveStatus::Feasible, String::new()),
        BackendStatus::Solved => (
            SolveStatus::NumericalTrouble,
            format!("backend converged but verification failed: psd {psd:e}, eq {eq:e}, ineq {ineq:e}"),
        ),
        BackendStatus::Infeasible => (SolveStatus::Infeasible, "primal infeasibility certificate".into()),
        BackendStatus::Trouble(msg) => (SolveStatus::NumericalTrouble, msg),
    };
    Ok(SdpSolution {
        problem: problem.id,
        values,
        status,
        max_psd_violation: psd,
        max_equality_residual: eq,
        max_inequality_violation: ineq,
        objective,
        iterations: out.iterations,
        diagnostics,
    })
}

fn trivially_infeasible(problem: &SdpProblem, why: String) -> SdpSolution {
    let values = vec![0.0; problem.n_vars];
    let (psd, eq, ineq) = problem.residuals(&values);
    SdpSolution {
        problem: problem.id,
        values,
        status: SolveStatus::Infeasible,
        max_psd_violation: psd,
        max_equality_residual: eq,
        max_inequality_violation: ineq,
        objective: 0.0,
        iterations: 0,
        diagnostics: why,
    }
}
