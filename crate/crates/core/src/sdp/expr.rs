//! Affine expressions over scalar decision variables, and dense matrices /
//! polynomials whose entries are such expressions.
//!
//! The containers are generic over [`Coefficient`] so the same assembly code
//! runs on plain `f64` data (for numeric checks) and on [`AffineExpr`]
//! (for building constraints). Shape mismatches panic, as in `nalgebra`.

use std::fmt::Debug;

use nalgebra::DMatrix;

use crate::polyalg::{Interval, PolyMat1, PolyMat2};

pub trait Coefficient: Clone + Debug + PartialEq + Send + Sync + 'static {
    fn zero() -> Self;
    fn constant(c: f64) -> Self;
    fn add_scaled(&mut self, other: &Self, a: f64);

    fn scaled(&self, a: f64) -> Self {
        let mut z = Self::zero();
        z.add_scaled(self, a);
        z
    }
}

impl Coefficient for f64 {
    fn zero() -> Self {
        0.0
    }
    fn constant(c: f64) -> Self {
        c
    }
    fn add_scaled(&mut self, other: &Self, a: f64) {
        *self += a * other;
    }
}

/// `constant + Σ coef·x[var]`, terms sorted by variable with no zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn var(index: usize) -> Self {
        AffineExpr { constant: 0.0, terms: vec![(index, 1.0)] }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * values[i]).sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        out
    }
}

impl Coefficient for AffineExpr {
    fn zero() -> Self {
        AffineExpr::default()
    }

    fn constant(c: f64) -> Self {
        AffineExpr { constant: c, terms: Vec::new() }
    }

    fn add_scaled(&mut self, other: &Self, a: f64) {
        if a == 0.0 {
            return;
        }
        self.constant += a * other.constant;
        if other.terms.is_empty() {
            return;
        }
        let mut merged = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        let (lhs, rhs) = (&self.terms, &other.terms);
        while i < lhs.len() || j < rhs.len() {
            let next = if j >= rhs.len() || (i < lhs.len() && lhs[i].0 < rhs[j].0) {
                i += 1;
                lhs[i - 1]
            } else if i >= lhs.len() || rhs[j].0 < lhs[i].0 {
                j += 1;
                (rhs[j - 1].0, a * rhs[j - 1].1)
            } else {
                i += 1;
                j += 1;
                (lhs[i - 1].0, lhs[i - 1].1 + a * rhs[j - 1].1)
            };
            if next.1 != 0.0 {
                merged.push(next);
            }
        }
        self.terms = merged;
    }
}

/// Dense row-major matrix of coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Coefficient> ExprMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ExprMat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        ExprMat { rows, cols, data }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| T::constant(m[(i, j)]))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::constant(1.0) } else { T::zero() })
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

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.cols + j]
    }

    fn assert_shape(&self, other: &Self, op: &str) {
        assert_eq!(self.shape(), other.shape(), "ExprMat::{op} shape mismatch");
    }

    pub fn add_scaled(&mut self, other: &Self, a: f64) {
        self.assert_shape(other, "add_scaled");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            x.add_scaled(y, a);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    pub fn scale(&self, a: f64) -> Self {
        ExprMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x.scaled(a)).collect() }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    /// `M · self` for a constant matrix `M`.
    pub fn lmul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.rows, "ExprMat::lmul shape mismatch");
        let mut out = Self::zeros(m.nrows(), self.cols);
        for i in 0..m.nrows() {
            for k in 0..self.rows {
                let a = m[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..self.cols {
                    out.data[i * self.cols + j].add_scaled(&self.data[k * self.cols + j], a);
                }
            }
        }
        out
    }

    /// `self · M` for a constant matrix `M`.
    pub fn rmul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.cols, m.nrows(), "ExprMat::rmul shape mismatch");
        let mut out = Self::zeros(self.rows, m.ncols());
        for i in 0..self.rows {
            for k in 0..self.cols {
                for j in 0..m.ncols() {
                    let a = m[(k, j)];
                    if a != 0.0 {
                        out.data[i * m.ncols() + j].add_scaled(&self.data[i * self.cols + k], a);
                    }
                }
            }
        }
        out
    }

    /// Assembles a block matrix; `None` entries are zero blocks sized by their row/column.
    pub fn from_blocks(blocks: &[Vec<Option<ExprMat<T>>>], row_sizes: &[usize], col_sizes: &[usize]) -> Self {
        let rows: usize = row_sizes.iter().sum();
        let cols: usize = col_sizes.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, brow) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (bj, block) in brow.iter().enumerate() {
                if let Some(b) = block {
                    assert_eq!(b.shape(), (row_sizes[bi], col_sizes[bj]), "block ({bi},{bj}) shape");
                    for i in 0..b.rows {
                        for j in 0..b.cols {
                            *out.get_mut(r0 + i, c0 + j) = b.get(i, j).clone();
                        }
                    }
                }
                c0 += col_sizes[bj];
            }
            r0 += row_sizes[bi];
        }
        out
    }

    pub fn sub_block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self.get(r0 + i, c0 + j).clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }
}

impl ExprMat<f64> {
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl ExprMat<AffineExpr> {
    pub fn value(&self, values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(values))
    }
}

/// Polynomial in one variable with [`ExprMat`] coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprPoly1<T> {
    rows: usize,
    cols: usize,
    coeffs: Vec<ExprMat<T>>,
}

impl<T: Coefficient> ExprPoly1<T> {
    pub fn new(rows: usize, cols: usize, mut coeffs: Vec<ExprMat<T>>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(ExprMat::zeros(rows, cols));
        }
        for c in &coeffs {
            assert_eq!(c.shape(), (rows, cols), "ExprPoly1 coefficient shape");
        }
        ExprPoly1 { rows, cols, coeffs }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, Vec::new())
    }

    pub fn constant(c: ExprMat<T>) -> Self {
        Self::new(c.rows, c.cols, vec![c])
    }

    pub fn from_poly(p: &PolyMat1) -> Self {
        Self::new(p.rows(), p.cols(), p.coeffs().iter().map(ExprMat::from_dmatrix).collect())
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

    /// Number of stored coefficients minus one (not trimmed).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[ExprMat<T>] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> ExprMat<T> {
        self.coeffs.get(i).cloned().unwrap_or_else(|| ExprMat::zeros(self.rows, self.cols))
    }

    pub fn eval(&self, s: f64) -> ExprMat<T> {
        let mut acc = ExprMat::zeros(self.rows, self.cols);
        let mut pw = 1.0;
        for c in &self.coeffs {
            acc.add_scaled(c, pw);
            pw *= s;
        }
        acc
    }

    pub fn derivative(&self) -> Self {
        let coeffs = self.coeffs.iter().enumerate().skip(1).map(|(i, c)| c.scale(i as f64)).collect();
        Self::new(self.rows, self.cols, coeffs)
    }

    pub fn integrate_full(&self, interval: Interval) -> ExprMat<T> {
        let mut acc = ExprMat::zeros(self.rows, self.cols);
        for (i, c) in self.coeffs.iter().enumerate() {
            acc.add_scaled(c, interval.monomial_integral(i));
        }
        acc
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "ExprPoly1::add shape mismatch");
        let n = self.coeffs.len().max(other.coeffs.len());
        Self::new(self.rows, self.cols, (0..n).map(|i| self.coeff(i).add(&other.coeff(i))).collect())
    }

    pub fn scale(&self, a: f64) -> Self {
        Self::new(self.rows, self.cols, self.coeffs.iter().map(|c| c.scale(a)).collect())
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.cols, self.rows, self.coeffs.iter().map(ExprMat::transpose).collect())
    }

    pub fn lmul(&self, m: &DMatrix<f64>) -> Self {
        Self::new(m.nrows(), self.cols, self.coeffs.iter().map(|c| c.lmul(m)).collect())
    }

    pub fn rmul(&self, m: &DMatrix<f64>) -> Self {
        Self::new(self.rows, m.ncols(), self.coeffs.iter().map(|c| c.rmul(m)).collect())
    }

    /// Block assembly of polynomials; the result has the largest block degree.
    pub fn from_blocks(blocks: &[Vec<Option<ExprPoly1<T>>>], row_sizes: &[usize], col_sizes: &[usize]) -> Self {
        let deg = blocks
            .iter()
            .flatten()
            .flatten()
            .map(ExprPoly1::degree)
            .max()
            .unwrap_or(0);
        let coeffs = (0..=deg)
            .map(|k| {
                let grid: Vec<Vec<Option<ExprMat<T>>>> = blocks
                    .iter()
                    .map(|row| row.iter().map(|b| b.as_ref().map(|p| p.coeff(k))).collect())
                    .collect();
                ExprMat::from_blocks(&grid, row_sizes, col_sizes)
            })
            .collect();
        Self::new(row_sizes.iter().sum(), col_sizes.iter().sum(), coeffs)
    }

    pub fn sub_block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, self.coeffs.iter().map(|c| c.sub_block(r0, c0, rows, cols)).collect())
    }
}

impl ExprPoly1<AffineExpr> {
    pub fn value(&self, values: &[f64], interval: Interval) -> PolyMat1 {
        PolyMat1::new(self.rows, self.cols, self.coeffs.iter().map(|c| c.value(values)).collect(), interval)
            .expect("shape preserved")
    }
}

impl ExprPoly1<f64> {
    pub fn to_poly(&self, interval: Interval) -> PolyMat1 {
        PolyMat1::new(self.rows, self.cols, self.coeffs.iter().map(ExprMat::to_dmatrix).collect(), interval)
            .expect("shape preserved")
    }
}

/// Polynomial in `(s, θ)` with a dense `(deg_s+1) × (deg_θ+1)` coefficient grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprPoly2<T> {
    rows: usize,
    cols: usize,
    coeffs: Vec<Vec<ExprMat<T>>>,
}

impl<T: Coefficient> ExprPoly2<T> {
    pub fn new(rows: usize, cols: usize, mut coeffs: Vec<Vec<ExprMat<T>>>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(vec![ExprMat::zeros(rows, cols)]);
        }
        let width = coeffs.iter().map(Vec::len).max().unwrap_or(1).max(1);
        for row in &mut coeffs {
            while row.len() < width {
                row.push(ExprMat::zeros(rows, cols));
            }
            for c in row.iter() {
                assert_eq!(c.shape(), (rows, cols), "ExprPoly2 coefficient shape");
            }
        }
        ExprPoly2 { rows, cols, coeffs }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, Vec::new())
    }

    pub fn from_poly(p: &PolyMat2) -> Self {
        let grid = (0..=p.degree_s())
            .map(|i| (0..=p.degree_theta()).map(|j| ExprMat::from_dmatrix(&p.coeff(i, j))).collect())
            .collect();
        Self::new(p.rows(), p.cols(), grid)
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

    pub fn degree_s(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn degree_theta(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    pub fn coeff(&self, i: usize, j: usize) -> ExprMat<T> {
        self.coeffs
            .get(i)
            .and_then(|row| row.get(j))
            .cloned()
            .unwrap_or_else(|| ExprMat::zeros(self.rows, self.cols))
    }

    /// Fixes `s = s0`; the result is a polynomial in θ.
    pub fn eval_s(&self, s0: f64) -> ExprPoly1<T> {
        let coeffs = (0..=self.degree_theta())
            .map(|j| {
                let mut acc = ExprMat::zeros(self.rows, self.cols);
                for i in 0..=self.degree_s() {
                    acc.add_scaled(&self.coeffs[i][j], s0.powi(i as i32));
                }
                acc
            })
            .collect();
        ExprPoly1::new(self.rows, self.cols, coeffs)
    }

    /// Fixes `θ = theta0`; the result is a polynomial in s.
    pub fn eval_theta(&self, theta0: f64) -> ExprPoly1<T> {
        let coeffs = self
            .coeffs
            .iter()
            .map(|row| {
                let mut acc = ExprMat::zeros(self.rows, self.cols);
                for (j, c) in row.iter().enumerate() {
                    acc.add_scaled(c, theta0.powi(j as i32));
                }
                acc
            })
            .collect();
        ExprPoly1::new(self.rows, self.cols, coeffs)
    }

    pub fn diff_s(&self) -> Self {
        let grid = (1..=self.degree_s())
            .map(|i| self.coeffs[i].iter().map(|c| c.scale(i as f64)).collect())
            .collect();
        Self::new(self.rows, self.cols, grid)
    }

    pub fn diff_theta(&self) -> Self {
        let grid = self
            .coeffs
            .iter()
            .map(|row| (1..row.len()).map(|j| row[j].scale(j as f64)).collect())
            .collect();
        Self::new(self.rows, self.cols, grid)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "ExprPoly2::add shape mismatch");
        let ds = self.degree_s().max(other.degree_s());
        let dt = self.degree_theta().max(other.degree_theta());
        let grid = (0..=ds)
            .map(|i| (0..=dt).map(|j| self.coeff(i, j).add(&other.coeff(i, j))).collect())
            .collect();
        Self::new(self.rows, self.cols, grid)
    }

    pub fn scale(&self, a: f64) -> Self {
        let grid = self.coeffs.iter().map(|row| row.iter().map(|c| c.scale(a)).collect()).collect();
        Self::new(self.rows, self.cols, grid)
    }
}

impl ExprPoly2<AffineExpr> {
    pub fn value(&self, values: &[f64], interval: Interval) -> PolyMat2 {
        let mut map = std::collections::BTreeMap::new();
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                map.insert((i, j), c.value(values));
            }
        }
        PolyMat2::new(self.rows, self.cols, map, interval).expect("shape preserved")
    }
}

impl ExprPoly2<f64> {
    pub fn to_poly(&self, interval: Interval) -> PolyMat2 {
        let mut map = std::collections::BTreeMap::new();
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                map.insert((i, j), c.to_dmatrix());
            }
        }
        PolyMat2::new(self.rows, self.cols, map, interval).expect("shape preserved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_merge_drops_cancelled_terms() {
        let mut a = AffineExpr::var(3);
        a.add_scaled(&AffineExpr::var(1), 2.0);
        a.add_scaled(&AffineExpr::var(5), 1.0);
        assert_eq!(a.terms, vec![(1, 2.0), (3, 1.0), (5, 1.0)]);
        a.add_scaled(&AffineExpr::var(3), -1.0);
        assert_eq!(a.terms, vec![(1, 2.0), (5, 1.0)]);
        a.add_scaled(&AffineExpr::constant(4.0), 0.5);
        assert_eq!(a.constant, 2.0);
        assert_eq!(a.eval(&[0.0, 1.0, 0.0, 0.0, 0.0, 10.0]), 14.0);
    }

    #[test]
    fn lmul_rmul_match_nalgebra() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, -3.0]);
        let ex = ExprMat::<f64>::from_dmatrix(&x);
        assert!((ex.lmul(&a).to_dmatrix() - &a * &x).norm() < 1e-15);
        assert!((ex.rmul(&b).to_dmatrix() - &x * &b).norm() < 1e-15);
    }

    #[test]
    fn poly2_partial_evaluation_matches_numeric() {
        let iv = Interval::new(1.3).unwrap();
        let z = PolyMat1::monomial_basis(2, 2, iv);
        let g = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let r = z.transpose().mul_right(&g).unwrap().outer(&z).unwrap();
        let er = ExprPoly2::<f64>::from_poly(&r);
        let at = er.eval_s(-0.4).to_poly(iv);
        assert!((at.eval(-1.1) - r.eval(-0.4, -1.1)).norm() < 1e-13);
        let dv = er.diff_s().add(&er.diff_theta()).to_poly(iv);
        let dr = r.diff_s().add(&r.diff_theta()).unwrap();
        assert!((dv.eval(-0.3, -0.9) - dr.eval(-0.3, -0.9)).norm() < 1e-13);
    }
}
