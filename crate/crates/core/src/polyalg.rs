//! Matrix-valued polynomials on the delay interval `[-r, 0]`.
//!
//! [`PolyMat1`] stores `Σᵢ Cᵢ sⁱ` and [`PolyMat2`] stores `Σᵢⱼ Cᵢⱼ sⁱ θʲ`,
//! both dense in the monomial basis. All calculus is exact coefficient
//! manipulation; [`QuadratureRule`] is only needed for non-polynomial
//! integrands such as `S(s)⁻¹`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LkError, Result};
use crate::matrix::{from_rows_shaped, to_rows};

/// Node count used when callers do not supply a rule.
pub const DEFAULT_QUAD_NODES: usize = 20;

/// The delay interval `[-r, 0]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Interval {
    r: f64,
}

impl Interval {
    pub fn new(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(LkError::InvalidArgument(format!("delay r must be positive, got {r}")));
        }
        Ok(Interval { r })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn lower(&self) -> f64 {
        -self.r
    }

    pub fn contains(&self, s: f64) -> bool {
        let slack = 1e-12 * self.r;
        s >= -self.r - slack && s <= slack
    }

    /// `∫_{-r}^{0} s^k ds`.
    pub fn monomial_integral(&self, k: usize) -> f64 {
        let e = (k + 1) as i32;
        -(-self.r).powi(e) / e as f64
    }

    fn check_same(&self, other: &Interval) -> Result<()> {
        if self.r == other.r {
            Ok(())
        } else {
            Err(LkError::IntervalMismatch(self.r, other.r))
        }
    }
}

impl TryFrom<f64> for Interval {
    type Error = LkError;
    fn try_from(r: f64) -> Result<Self> {
        Interval::new(r)
    }
}

impl From<Interval> for f64 {
    fn from(iv: Interval) -> f64 {
        iv.r
    }
}

fn is_zero_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&v| v == 0.0)
}

fn check_shape(context: &'static str, left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(LkError::DimensionMismatch { context, left, right })
    }
}

/// Matrix polynomial in one variable, `Σᵢ Cᵢ sⁱ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMat1 {
    rows: usize,
    cols: usize,
    coeffs: Vec<DMatrix<f64>>,
    interval: Interval,
}

impl PolyMat1 {
    pub fn new(rows: usize, cols: usize, coeffs: Vec<DMatrix<f64>>, interval: Interval) -> Result<Self> {
        for c in &coeffs {
            check_shape("PolyMat1 coefficient", (rows, cols), c.shape())?;
        }
        let mut p = PolyMat1 { rows, cols, coeffs, interval };
        p.trim();
        Ok(p)
    }

    pub fn zeros(rows: usize, cols: usize, interval: Interval) -> Self {
        PolyMat1 { rows, cols, coeffs: vec![DMatrix::zeros(rows, cols)], interval }
    }

    pub fn constant(c: DMatrix<f64>, interval: Interval) -> Self {
        let (rows, cols) = c.shape();
        PolyMat1 { rows, cols, coeffs: vec![c], interval }
    }

    /// `(1, s, …, s^degree)ᵀ ⊗ I_block_dim`, a `((degree+1)·block_dim) × block_dim`
    /// polynomial. Row `i·block_dim + a` carries `sⁱ` in column `a`.
    pub fn monomial_basis(degree: usize, block_dim: usize, interval: Interval) -> Self {
        let q = (degree + 1) * block_dim;
        let coeffs = (0..=degree)
            .map(|i| {
                let mut c = DMatrix::zeros(q, block_dim);
                for a in 0..block_dim {
                    c[(i * block_dim + a, a)] = 1.0;
                }
                c
            })
            .collect();
        PolyMat1 { rows: q, cols: block_dim, coeffs, interval }
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1 && is_zero_mat(self.coeffs.last().unwrap()) {
            self.coeffs.pop();
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(DMatrix::zeros(self.rows, self.cols));
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// Coefficient of `sⁱ`, zero past the degree.
    pub fn coeff(&self, i: usize) -> DMatrix<f64> {
        self.coeffs.get(i).cloned().unwrap_or_else(|| DMatrix::zeros(self.rows, self.cols))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(is_zero_mat)
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    /// Horner evaluation.
    pub fn eval(&self, s: f64) -> DMatrix<f64> {
        let mut acc = self.coeffs.last().unwrap().clone();
        for c in self.coeffs.iter().rev().skip(1) {
            acc *= s;
            acc += c;
        }
        acc
    }

    /// Evaluation plus a flag that is `false` when `s` lies outside `[-r, 0]`.
    pub fn eval_flagged(&self, s: f64) -> (DMatrix<f64>, bool) {
        (self.eval(s), self.interval.contains(s))
    }

    pub fn derivative(&self) -> Self {
        let coeffs: Vec<_> = self.coeffs.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect();
        PolyMat1::new(self.rows, self.cols, coeffs, self.interval).expect("shape preserved")
    }

    /// `∫_{-r}^{0} p(s) ds`.
    pub fn integrate_full(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.rows, self.cols);
        for (i, c) in self.coeffs.iter().enumerate() {
            acc += c * self.interval.monomial_integral(i);
        }
        acc
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_shape("PolyMat1::add", self.shape(), other.shape())?;
        self.interval.check_same(&other.interval)?;
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n).map(|i| self.coeff(i) + other.coeff(i)).collect();
        PolyMat1::new(self.rows, self.cols, coeffs, self.interval)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, a: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|c| c * a).collect();
        PolyMat1::new(self.rows, self.cols, coeffs, self.interval).expect("shape preserved")
    }

    /// Product in the same variable, `a(s)·b(s)`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(LkError::DimensionMismatch {
                context: "PolyMat1::mul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        self.interval.check_same(&other.interval)?;
        let deg = self.degree() + other.degree();
        let mut coeffs = vec![DMatrix::zeros(self.rows, other.cols); deg + 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        PolyMat1::new(self.rows, other.cols, coeffs, self.interval)
    }

    /// Product in distinct variables, `a(s)·b(θ)`.
    pub fn outer(&self, other_theta: &Self) -> Result<PolyMat2> {
        if self.cols != other_theta.rows {
            return Err(LkError::DimensionMismatch {
                context: "PolyMat1::outer",
                left: self.shape(),
                right: other_theta.shape(),
            });
        }
        self.interval.check_same(&other_theta.interval)?;
        let mut map = BTreeMap::new();
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other_theta.coeffs.iter().enumerate() {
                map.insert((i, j), a * b);
            }
        }
        PolyMat2::new(self.rows, other_theta.cols, map, self.interval)
    }

    pub fn transpose(&self) -> Self {
        let coeffs = self.coeffs.iter().map(|c| c.transpose()).collect();
        PolyMat1::new(self.cols, self.rows, coeffs, self.interval).expect("shape preserved")
    }

    /// `M · p(s)`.
    pub fn mul_left(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.rows {
            return Err(LkError::DimensionMismatch {
                context: "PolyMat1::mul_left",
                left: m.shape(),
                right: self.shape(),
            });
        }
        let coeffs = self.coeffs.iter().map(|c| m * c).collect();
        PolyMat1::new(m.nrows(), self.cols, coeffs, self.interval)
    }

    /// `p(s) · M`.
    pub fn mul_right(&self, m: &DMatrix<f64>) -> Result<Self> {
        if self.cols != m.nrows() {
            return Err(LkError::DimensionMismatch {
                context: "PolyMat1::mul_right",
                left: self.shape(),
                right: m.shape(),
            });
        }
        let coeffs = self.coeffs.iter().map(|c| c * m).collect();
        PolyMat1::new(self.rows, m.ncols(), coeffs, self.interval)
    }

    /// Frobenius norm of the stacked coefficients.
    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> PolyJson {
        PolyJson {
            rows: self.rows,
            cols: self.cols,
            var_count: 1,
            r: self.interval.r,
            coeffs: PolyCoeffsJson::One(self.coeffs.iter().map(to_rows).collect()),
        }
    }
}

/// Matrix polynomial in two variables, `Σᵢⱼ Cᵢⱼ sⁱ θʲ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMat2 {
    rows: usize,
    cols: usize,
    coeffs: BTreeMap<(usize, usize), DMatrix<f64>>,
    interval: Interval,
}

impl PolyMat2 {
    pub fn new(
        rows: usize,
        cols: usize,
        coeffs: BTreeMap<(usize, usize), DMatrix<f64>>,
        interval: Interval,
    ) -> Result<Self> {
        for c in coeffs.values() {
            check_shape("PolyMat2 coefficient", (rows, cols), c.shape())?;
        }
        let coeffs = coeffs.into_iter().filter(|(_, c)| !is_zero_mat(c)).collect();
        Ok(PolyMat2 { rows, cols, coeffs, interval })
    }

    pub fn zeros(rows: usize, cols: usize, interval: Interval) -> Self {
        PolyMat2 { rows, cols, coeffs: BTreeMap::new(), interval }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn coeffs(&self) -> &BTreeMap<(usize, usize), DMatrix<f64>> {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.coeffs.get(&(i, j)).cloned().unwrap_or_else(|| DMatrix::zeros(self.rows, self.cols))
    }

    pub fn degree_s(&self) -> usize {
        self.coeffs.keys().map(|k| k.0).max().unwrap_or(0)
    }

    pub fn degree_theta(&self) -> usize {
        self.coeffs.keys().map(|k| k.1).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, s: f64, theta: f64) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.rows, self.cols);
        for (&(i, j), c) in &self.coeffs {
            acc += c * (s.powi(i as i32) * theta.powi(j as i32));
        }
        acc
    }

    /// Fixes `s = s0`, leaving a polynomial in θ.
    pub fn eval_s(&self, s0: f64) -> PolyMat1 {
        let mut coeffs = vec![DMatrix::zeros(self.rows, self.cols); self.degree_theta() + 1];
        for (&(i, j), c) in &self.coeffs {
            coeffs[j] += c * s0.powi(i as i32);
        }
        PolyMat1::new(self.rows, self.cols, coeffs, self.interval).expect("shape preserved")
    }

    /// Fixes `θ = theta0`, leaving a polynomial in s.
    pub fn eval_theta(&self, theta0: f64) -> PolyMat1 {
        let mut coeffs = vec![DMatrix::zeros(self.rows, self.cols); self.degree_s() + 1];
        for (&(i, j), c) in &self.coeffs {
            coeffs[i] += c * theta0.powi(j as i32);
        }
        PolyMat1::new(self.rows, self.cols, coeffs, self.interval).expect("shape preserved")
    }

    pub fn diff_s(&self) -> Self {
        let map = self
            .coeffs
            .iter()
            .filter(|(k, _)| k.0 > 0)
            .map(|(&(i, j), c)| ((i - 1, j), c * i as f64))
            .collect();
        PolyMat2::new(self.rows, self.cols, map, self.interval).expect("shape preserved")
    }

    pub fn diff_theta(&self) -> Self {
        let map = self
            .coeffs
            .iter()
            .filter(|(k, _)| k.1 > 0)
            .map(|(&(i, j), c)| ((i, j - 1), c * j as f64))
            .collect();
        PolyMat2::new(self.rows, self.cols, map, self.interval).expect("shape preserved")
    }

    /// `∫∫ p(s, θ) ds dθ` over `[-r, 0]²`.
    pub fn integrate_full(&self) -> DMatrix<f64> {
        let iv = self.interval;
        let mut acc = DMatrix::zeros(self.rows, self.cols);
        for (&(i, j), c) in &self.coeffs {
            acc += c * (iv.monomial_integral(i) * iv.monomial_integral(j));
        }
        acc
    }

    /// `∫ p(s, θ) ds`, a polynomial in θ.
    pub fn integrate_s(&self) -> PolyMat1 {
        let mut coeffs = vec![DMatrix::zeros(self.rows, self.cols); self.degree_theta() + 1];
        for (&(i, j), c) in &self.coeffs {
            coeffs[j] += c * self.interval.monomial_integral(i);
        }
        PolyMat1::new(self.rows, self.cols, coeffs, self.interval).expect("shape preserved")
    }

    /// `∫ p(s, θ) dθ`, a polynomial in s.
    pub fn integrate_theta(&self) -> PolyMat1 {
        let mut coeffs = vec![DMatrix::zeros(self.rows, self.cols); self.degree_s() + 1];
        for (&(i, j), c) in &self.coeffs {
            coeffs[i] += c * self.interval.monomial_integral(j);
        }
        PolyMat1::new(self.rows, self.cols, coeffs, self.interval).expect("shape preserved")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_shape("PolyMat2::add", self.shape(), other.shape())?;
        self.interval.check_same(&other.interval)?;
        let mut map = self.coeffs.clone();
        for (k, c) in &other.coeffs {
            *map.entry(*k).or_insert_with(|| DMatrix::zeros(self.rows, self.cols)) += c;
        }
        PolyMat2::new(self.rows, self.cols, map, self.interval)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, a: f64) -> Self {
        let map = self.coeffs.iter().map(|(k, c)| (*k, c * a)).collect();
        PolyMat2::new(self.rows, self.cols, map, self.interval).expect("shape preserved")
    }

    /// Entry-wise transpose with the variables left in place.
    pub fn transpose(&self) -> Self {
        let map = self.coeffs.iter().map(|(k, c)| (*k, c.transpose())).collect();
        PolyMat2::new(self.cols, self.rows, map, self.interval).expect("shape preserved")
    }

    /// `p(θ, s)`.
    pub fn swap_vars(&self) -> Self {
        let map = self.coeffs.iter().map(|(&(i, j), c)| ((j, i), c.clone())).collect();
        PolyMat2::new(self.rows, self.cols, map, self.interval).expect("shape preserved")
    }

    /// `p(θ, s)ᵀ`; a kernel with `R(s,θ) = R(θ,s)ᵀ` equals its own adjoint.
    pub fn adjoint(&self) -> Self {
        self.swap_vars().transpose()
    }

    pub fn mul_left(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.rows {
            return Err(LkError::DimensionMismatch {
                context: "PolyMat2::mul_left",
                left: m.shape(),
                right: self.shape(),
            });
        }
        let map = self.coeffs.iter().map(|(k, c)| (*k, m * c)).collect();
        PolyMat2::new(m.nrows(), self.cols, map, self.interval)
    }

    pub fn mul_right(&self, m: &DMatrix<f64>) -> Result<Self> {
        if self.cols != m.nrows() {
            return Err(LkError::DimensionMismatch {
                context: "PolyMat2::mul_right",
                left: self.shape(),
                right: m.shape(),
            });
        }
        let map = self.coeffs.iter().map(|(k, c)| (*k, c * m)).collect();
        PolyMat2::new(self.rows, m.ncols(), map, self.interval)
    }

    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> PolyJson {
        let (ds, dt) = (self.degree_s(), self.degree_theta());
        let grid = (0..=ds)
            .map(|i| (0..=dt).map(|j| to_rows(&self.coeff(i, j))).collect())
            .collect();
        PolyJson {
            rows: self.rows,
            cols: self.cols,
            var_count: 2,
            r: self.interval.r,
            coeffs: PolyCoeffsJson::Two(grid),
        }
    }
}

type RowsJson = Vec<Vec<f64>>;

/// Wire form: `{rows, cols, var_count, r, coeffs}` with row-major matrices.
/// One-variable coefficients are indexed by degree; two-variable ones by `[i][j]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyJson {
    pub rows: usize,
    pub cols: usize,
    pub var_count: u8,
    pub r: f64,
    pub coeffs: PolyCoeffsJson,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolyCoeffsJson {
    One(Vec<RowsJson>),
    Two(Vec<Vec<RowsJson>>),
}

impl PolyJson {
    pub fn into_poly1(self) -> Result<PolyMat1> {
        let iv = Interval::new(self.r)?;
        match (self.var_count, self.coeffs) {
            (1, PolyCoeffsJson::One(cs)) => {
                let coeffs = cs
                    .iter()
                    .map(|c| from_rows_shaped(c, self.rows, self.cols))
                    .collect::<Result<Vec<_>>>()?;
                PolyMat1::new(self.rows, self.cols, coeffs, iv)
            }
            _ => Err(LkError::Parse("expected a one-variable polynomial".into())),
        }
    }

    pub fn into_poly2(self) -> Result<PolyMat2> {
        let iv = Interval::new(self.r)?;
        match (self.var_count, self.coeffs) {
            (2, PolyCoeffsJson::Two(grid)) => {
                let mut map = BTreeMap::new();
                for (i, row) in grid.iter().enumerate() {
                    for (j, c) in row.iter().enumerate() {
                        map.insert((i, j), from_rows_shaped(c, self.rows, self.cols)?);
                    }
                }
                PolyMat2::new(self.rows, self.cols, map, iv)
            }
            _ => Err(LkError::Parse("expected a two-variable polynomial".into())),
        }
    }
}

/// Nodes and positive weights on `[-r, 0]`; exact through degree `order`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

/// Gauss-Legendre nodes on `[-1, 1]` by Newton iteration on `P_n`.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        if n == 1 {
            x[0] = 0.0;
            w[0] = 2.0;
            break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points().map(|(s, w)| w * f(s)).sum()
    }

    pub fn integrate_mat(&self, rows: usize, cols: usize, f: impl Fn(f64) -> DMatrix<f64>) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(rows, cols);
        for (s, w) in self.points() {
            acc += f(s) * w;
        }
        acc
    }

    /// Composite Gauss-Legendre with `per_cell` nodes on each `[b_k, b_{k+1}]`;
    /// exact for piecewise polynomials of degree `2·per_cell − 1` between breakpoints.
    pub fn composite(breakpoints: &[f64], per_cell: usize) -> Self {
        let (x, w) = gauss_legendre_unit(per_cell.max(1));
        let mut nodes = Vec::with_capacity(breakpoints.len().saturating_sub(1) * x.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in breakpoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + half * xi);
                weights.push(half * wi);
            }
        }
        QuadratureRule { nodes, weights, order: 2 * per_cell.max(1) - 1 }
    }
}

/// `n_nodes`-point Gauss-Legendre rule mapped to `[-r, 0]`.
pub fn gauss_rule(n_nodes: usize, interval: Interval) -> QuadratureRule {
    let n = n_nodes.max(1);
    let (x, w) = gauss_legendre_unit(n);
    let half = 0.5 * interval.r();
    QuadratureRule {
        nodes: x.iter().map(|xi| half * (xi - 1.0)).collect(),
        weights: w.iter().map(|wi| half * wi).collect(),
        order: 2 * n - 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(r: f64) -> Interval {
        Interval::new(r).unwrap()
    }

    fn scalar(coeffs: &[f64], r: f64) -> PolyMat1 {
        let cs = coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect();
        PolyMat1::new(1, 1, cs, iv(r)).unwrap()
    }

    #[test]
    fn interval_rejects_nonpositive() {
        assert!(Interval::new(0.0).is_err());
        assert!(Interval::new(-1.0).is_err());
        assert!(Interval::new(f64::NAN).is_err());
    }

    #[test]
    fn monomial_basis_examples() {
        let z0 = PolyMat1::monomial_basis(0, 1, iv(1.0));
        assert_eq!(z0.shape(), (1, 1));
        assert_eq!(z0.eval(-0.3)[(0, 0)], 1.0);

        let z1 = PolyMat1::monomial_basis(1, 1, iv(1.0));
        assert_eq!(z1.shape(), (2, 1));
        assert_eq!(z1.eval(-0.5), DMatrix::from_column_slice(2, 1, &[1.0, -0.5]));

        let z12 = PolyMat1::monomial_basis(1, 2, iv(1.0));
        let s = -0.7;
        let expected = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, s, 0.0, 0.0, s]);
        assert_eq!(z12.eval(s), expected);
    }

    #[test]
    fn eval_examples() {
        let eye = PolyMat1::constant(DMatrix::identity(2, 2), iv(1.0));
        assert_eq!(eye.eval(-1.0), DMatrix::identity(2, 2));
        assert_eq!(scalar(&[0.0, 1.0], 1.0).eval(-0.5)[(0, 0)], -0.5);

        let mut map = BTreeMap::new();
        map.insert((1, 1), DMatrix::from_element(1, 1, 2.0));
        let p2 = PolyMat2::new(1, 1, map, iv(1.0)).unwrap();
        assert_eq!(p2.eval(-1.0, -1.0)[(0, 0)], 2.0);
    }

    #[test]
    fn out_of_interval_evaluation_is_flagged() {
        let p = scalar(&[1.0, 1.0], 1.0);
        assert!(p.eval_flagged(-0.5).1);
        let (v, inside) = p.eval_flagged(0.5);
        assert!(!inside);
        assert_eq!(v[(0, 0)], 1.5);
    }

    #[test]
    fn calculus_examples() {
        let sq = scalar(&[0.0, 0.0, 1.0], 1.0);
        assert_eq!(sq.derivative(), scalar(&[0.0, 2.0], 1.0));
        assert_eq!(scalar(&[1.0], 1.0).integrate_full()[(0, 0)], 1.0);
        // ∫_{-2}^{0} s ds = -2
        assert_eq!(scalar(&[0.0, 1.0], 2.0).integrate_full()[(0, 0)], -2.0);
    }

    #[test]
    fn two_variable_calculus() {
        // R(s,θ) = s + θ
        let mut map = BTreeMap::new();
        map.insert((1, 0), DMatrix::from_element(1, 1, 1.0));
        map.insert((0, 1), DMatrix::from_element(1, 1, 1.0));
        let r = PolyMat2::new(1, 1, map, iv(1.0)).unwrap();
        let v = r.diff_s().add(&r.diff_theta()).unwrap();
        assert_eq!(v.degree_s(), 0);
        assert_eq!(v.eval(-0.2, -0.9)[(0, 0)], 2.0);
        // ∫∫ (s+θ) over [-1,0]² = -1
        assert!((r.integrate_full()[(0, 0)] + 1.0).abs() < 1e-15);
        // ∫ (s+θ) dθ = s - 1/2
        assert_eq!(r.integrate_theta(), scalar(&[-0.5, 1.0], 1.0));
    }

    #[test]
    fn separable_product_example() {
        let z = PolyMat1::monomial_basis(1, 1, iv(1.0));
        let zt_gamma = z.transpose().mul_right(&DMatrix::identity(2, 2)).unwrap();
        let r = zt_gamma.outer(&z).unwrap();
        assert_eq!(r.shape(), (1, 1));
        assert_eq!(r.coeff(0, 0)[(0, 0)], 1.0);
        assert_eq!(r.coeff(1, 1)[(0, 0)], 1.0);
        assert_eq!(r.coeff(1, 0)[(0, 0)], 0.0);
        assert_eq!(r.coeffs().len(), 2);
    }

    #[test]
    fn algebra_examples() {
        let row = PolyMat1::new(
            1,
            2,
            vec![DMatrix::zeros(1, 2), DMatrix::from_row_slice(1, 2, &[1.0, 0.0])],
            iv(1.0),
        )
        .unwrap();
        let col = row.transpose();
        assert_eq!(col.shape(), (2, 1));
        assert_eq!(col.coeff(1), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));

        let s = scalar(&[0.0, 1.0], 1.0);
        let zero = s.add(&s.scale(-1.0)).unwrap();
        assert!(zero.is_zero());
        assert_eq!(zero.degree(), 0);
    }

    #[test]
    fn mismatched_shapes_report_both() {
        let a = PolyMat1::zeros(2, 3, iv(1.0));
        let b = PolyMat1::zeros(2, 2, iv(1.0));
        match a.mul(&b) {
            Err(LkError::DimensionMismatch { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(a.add(&b), Err(LkError::DimensionMismatch { .. })));
    }

    #[test]
    fn gauss_examples() {
        let g1 = gauss_rule(1, iv(2.0));
        assert_eq!(g1.nodes, vec![-1.0]);
        assert_eq!(g1.weights, vec![2.0]);

        let g2 = gauss_rule(2, iv(1.0));
        let v = g2.integrate(|s| s * s);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);

        for n in 1..30 {
            let g = gauss_rule(n, iv(1.7));
            let total: f64 = g.weights.iter().sum();
            assert!((total - 1.7).abs() <= 1e-12 * 1.7, "n={n}");
            assert!(g.weights.iter().all(|&w| w > 0.0));
            assert!(g.nodes.iter().all(|&s| (-1.7..=0.0).contains(&s)));
        }
    }

    #[test]
    fn gauss_exact_on_monomials() {
        let r = 1.6;
        for n in 1..=20 {
            let g = gauss_rule(n, iv(r));
            for k in 0..=(2 * n - 1) {
                let exact = iv(r).monomial_integral(k);
                let approx = g.integrate(|s| s.powi(k as i32));
                assert!((approx - exact).abs() <= 1e-12 * exact.abs().max(1.0), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn composite_rule_exact_on_piecewise_cubics() {
        let bps: Vec<f64> = (0..=10).map(|k| -1.0 + 0.1 * k as f64).collect();
        let rule = QuadratureRule::composite(&bps, 2);
        let v = rule.integrate(|s| s.powi(3));
        assert!((v + 0.25).abs() < 1e-14);
    }

    #[test]
    fn json_roundtrip_one_and_two_vars() {
        let p = scalar(&[1.0, -2.5, 0.125], 1.6);
        let back = serde_json::from_str::<PolyJson>(&serde_json::to_string(&p.to_json()).unwrap())
            .unwrap()
            .into_poly1()
            .unwrap();
        assert_eq!(p, back);

        let z = PolyMat1::monomial_basis(1, 2, iv(1.6));
        let r = z.transpose().outer(&z).unwrap();
        let back2 = serde_json::from_str::<PolyJson>(&serde_json::to_string(&r.to_json()).unwrap())
            .unwrap()
            .into_poly2()
            .unwrap();
        assert_eq!(r, back2);
    }
}
