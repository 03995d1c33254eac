//! Dense matrix helpers shared by every module: row-major JSON encoding,
//! guarded inversion and a few spectral utilities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LkError, Result, SingularWhich};

/// Relative reciprocal-condition floor below which a matrix counts as singular.
pub const SINGULAR_RCOND: f64 = 1e-13;

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(LkError::Parse("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Builds a matrix with explicit shape; needed for empty rows like `0×3`.
pub fn from_rows_shaped(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(LkError::Parse(format!(
            "expected a {nrows}×{ncols} matrix, got {} rows",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// `serde(with = "crate::matrix::serde_mat")` for row-major nested arrays.
pub mod serde_mat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub mod serde_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(data))
    }
}

/// Reciprocal 2-norm condition number via SVD; 0 for singular, 1 for empty.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Inverse guarded by a condition estimate.
pub fn checked_inverse(m: &DMatrix<f64>, which: SingularWhich) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(LkError::DimensionMismatch {
            context: "inverse",
            left: m.shape(),
            right: (m.ncols(), m.nrows()),
        });
    }
    let rc = rcond(m);
    if rc <= SINGULAR_RCOND {
        return Err(LkError::SingularMatrix {
            which,
            condition_estimate: if rc == 0.0 { f64::INFINITY } else { 1.0 / rc },
        });
    }
    m.clone().try_inverse().ok_or(LkError::SingularMatrix {
        which,
        condition_estimate: 1.0 / rc,
    })
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// Spectral radius `max |λᵢ|` from the real Schur form.
pub fn spectral_radius(d: &DMatrix<f64>) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    d.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&DMatrix::zeros(2, 2)), 0.0);
        let half = DMatrix::identity(2, 2) * 0.5;
        assert!((spectral_radius(&half) - 0.5).abs() < 1e-15);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&nil) < 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert!((spectral_radius(&rot) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn checked_inverse_flags_singular() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let err = checked_inverse(&s, SingularWhich::P).unwrap_err();
        assert!(matches!(err, LkError::SingularMatrix { which: SingularWhich::P, .. }));
    }

    #[test]
    fn rows_roundtrip_keeps_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(to_rows(&m), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(from_rows(&to_rows(&m)).unwrap(), m);
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
