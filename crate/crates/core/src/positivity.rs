//! Gram-matrix certificates for positivity of forms
//!
//! ```text
//! F(x, φ) = ∫ [x; φ(s)]ᵀ M(s) [x; φ(s)] ds + ∫∫ φ(s)ᵀ N(s,θ) φ(θ) dθ ds
//! ```
//!
//! with `x ∈ ℝ^{k₁}` constant and `φ: [-r,0] → ℝ^{k₂}`. Put
//! `B = monomial_basis(d, k₁+k₂)`, `Y = monomial_basis(d, k₂)`,
//! `g = ∫ Y(θ)φ(θ) dθ` and `f(s) = [B(s)[x; φ(s)]; g]`. For a Gram matrix
//! `U = [U₁₁ U₁₂; U₁₂ᵀ U₂₂] ⪰ 0` the form `∫ fᵀUf ds` expands to
//!
//! ```text
//! M(s)      = BᵀU₁₁B + w(s)·B'ᵀ W B'                    (w = −s(s+r), B' one degree lower)
//! M₁₂(s)   += (∫ E₁) Y(s)                              (E = BᵀU₁₂ = [E₁; E₂])
//! N(s,θ)    = E₂(s)Y(θ) + Yᵀ(s)E₂ᵀ(θ) + r Yᵀ(s)U₂₂Y(θ)
//! ```
//!
//! so `{M, N}` certified this way gives `F ≥ 0`. Because `x` is constant only
//! `∫ M₁₁` enters the form, and the constraints match that integral rather than
//! the coefficients of `M₁₁`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LkError, Result};
use crate::lkoperator::{inner_product_with, random_state, sample_rng, KernelOperator, StateFunction};
use crate::polyalg::{Interval, PolyMat1, PolyMat2, QuadratureRule};
use crate::sdp::{AffineExpr, Coefficient, ExprMat, ExprPoly1, ExprPoly2, SdpProblem, VarHandle, VariableKind};

/// Shape of a certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct XiLayout {
    /// Dimension of the constant part `x`.
    pub k1: usize,
    /// Dimension of the function part `φ`.
    pub k2: usize,
    pub degree: usize,
    /// Adds the `−s(s+r)`-weighted Gram block (needs `degree ≥ 1`).
    pub weighted: bool,
    #[serde(skip)]
    pub interval: Interval,
}

impl XiLayout {
    pub fn new(k1: usize, k2: usize, degree: usize, interval: Interval) -> Self {
        XiLayout { k1, k2, degree, weighted: true, interval }
    }

    pub fn unweighted(mut self) -> Self {
        self.weighted = false;
        self
    }

    /// Side of `M`.
    pub fn k(&self) -> usize {
        self.k1 + self.k2
    }

    pub fn gram_side(&self) -> usize {
        (self.degree + 1) * (self.k() + self.k2)
    }

    /// Side of the weighted block, zero when absent.
    pub fn weight_side(&self) -> usize {
        if self.weighted {
            self.degree * self.k()
        } else {
            0
        }
    }

    fn check(&self) -> Result<()> {
        if self.k() == 0 {
            return Err(LkError::InvalidArgument("certificate needs k1 + k2 > 0".into()));
        }
        Ok(())
    }
}

/// Numeric certificate; `weight_gram` is the weighted block, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct XiCertificate {
    pub gram: DMatrix<f64>,
    pub weight_gram: Option<DMatrix<f64>>,
    pub layout: XiLayout,
}

/// Certificate expansion over any coefficient type.
fn expand<T: Coefficient>(layout: &XiLayout, u: &ExprMat<T>, w: Option<&ExprMat<T>>) -> (ExprPoly1<T>, ExprPoly2<T>) {
    let (k1, k2, k, d) = (layout.k1, layout.k2, layout.k(), layout.degree);
    let r = layout.interval.r();
    let nb = (d + 1) * k;

    let mut m_coeffs = vec![ExprMat::<T>::zeros(k, k); 2 * d + 1];
    for i in 0..=d {
        for j in 0..=d {
            m_coeffs[i + j].add_scaled(&u.sub_block(i * k, j * k, k, k), 1.0);
        }
    }
    if let Some(w) = w {
        // −s(s+r) · Σ s^{i+j} W_ij
        for i in 0..d {
            for j in 0..d {
                let blk = w.sub_block(i * k, j * k, k, k);
                m_coeffs[i + j + 1].add_scaled(&blk, -r);
                m_coeffs[i + j + 2].add_scaled(&blk, -1.0);
            }
        }
    }

    let u12 = u.sub_block(0, nb, nb, (d + 1) * k2);
    if k1 > 0 && k2 > 0 {
        let mut int_e1 = ExprMat::<T>::zeros(k1, (d + 1) * k2);
        for i in 0..=d {
            int_e1.add_scaled(&u12.sub_block(i * k, 0, k1, (d + 1) * k2), layout.interval.monomial_integral(i));
        }
        for j in 0..=d {
            let cross = int_e1.sub_block(0, j * k2, k1, k2);
            let mut full = ExprMat::<T>::zeros(k, k);
            for a in 0..k1 {
                for b in 0..k2 {
                    full.get_mut(a, k1 + b).add_scaled(cross.get(a, b), 1.0);
                    full.get_mut(k1 + b, a).add_scaled(cross.get(a, b), 1.0);
                }
            }
            m_coeffs[j].add_scaled(&full, 1.0);
        }
    }

    let mut n_grid = vec![vec![ExprMat::<T>::zeros(k2, k2); d + 1]; d + 1];
    if k2 > 0 {
        for i in 0..=d {
            for j in 0..=d {
                let x = u12.sub_block(i * k + k1, j * k2, k2, k2);
                n_grid[i][j].add_scaled(&x, 1.0);
                n_grid[j][i].add_scaled(&x.transpose(), 1.0);
                n_grid[i][j].add_scaled(&u.sub_block(nb + i * k2, nb + j * k2, k2, k2), r);
            }
        }
    }
    (ExprPoly1::new(k, k, m_coeffs), ExprPoly2::new(k2, k2, n_grid))
}

/// Expands a numeric certificate into `(M, N)`.
pub fn xi_expand(cert: &XiCertificate) -> Result<(PolyMat1, PolyMat2)> {
    let layout = &cert.layout;
    layout.check()?;
    let side = layout.gram_side();
    if cert.gram.shape() != (side, side) {
        return Err(LkError::DimensionMismatch { context: "xi_expand gram", left: cert.gram.shape(), right: (side, side) });
    }
    let wside = layout.weight_side();
    let w = match (&cert.weight_gram, wside) {
        (Some(w), s) if s > 0 => {
            if w.shape() != (s, s) {
                return Err(LkError::DimensionMismatch { context: "xi_expand weight", left: w.shape(), right: (s, s) });
            }
            Some(ExprMat::<f64>::from_dmatrix(w))
        }
        (Some(_), _) => {
            return Err(LkError::InvalidArgument("weighted block given for a layout without one".into()));
        }
        (None, _) => None,
    };
    let (m, n) = expand(layout, &ExprMat::from_dmatrix(&cert.gram), w.as_ref());
    Ok((m.to_poly(layout.interval), n.to_poly(layout.interval)))
}

/// Operator with `P = (1/r)∫M₁₁`, `Q = M₁₂/r`, `S = M₂₂`, `R = N`; its quadratic
/// form equals `F` (with `x = ψ`).
pub fn to_kernel_operator(m: &PolyMat1, n: &PolyMat2, k1: usize) -> Result<KernelOperator> {
    let iv = m.interval();
    let r = iv.r();
    let k = m.rows();
    let k2 = k - k1;
    let blk = |c: &DMatrix<f64>, r0, c0, rs, cs| c.view((r0, c0), (rs, cs)).into_owned();
    let p = blk(&m.integrate_full(), 0, 0, k1, k1) / r;
    let q = PolyMat1::new(k1, k2, m.coeffs().iter().map(|c| blk(c, 0, k1, k1, k2) / r).collect(), iv)?;
    let s = PolyMat1::new(k2, k2, m.coeffs().iter().map(|c| blk(c, k1, k1, k2, k2)).collect(), iv)?;
    KernelOperator::new(p, q, n.clone(), s)
}

/// Variables created by [`add_xi_constraints`].
#[derive(Clone, Copy, Debug)]
pub struct XiHandles {
    pub gram: VarHandle,
    pub weight: Option<VarHandle>,
}

fn stored_degree_m_cross(m: &ExprPoly1<AffineExpr>, k1: usize) -> usize {
    let k = m.rows();
    (0..=m.degree())
        .rev()
        .find(|&i| {
            let c = m.coeff(i);
            (0..k1).any(|a| (k1..k).any(|b| *c.get(a, b) != AffineExpr::zero() || *c.get(b, a) != AffineExpr::zero()))
        })
        .unwrap_or(0)
}

fn stored_degree_m_phi(m: &ExprPoly1<AffineExpr>, k1: usize) -> usize {
    let k = m.rows();
    (0..=m.degree())
        .rev()
        .find(|&i| {
            let c = m.coeff(i);
            (k1..k).any(|a| (k1..k).any(|b| *c.get(a, b) != AffineExpr::zero()))
        })
        .unwrap_or(0)
}

fn stored_degree_n(n: &ExprPoly2<AffineExpr>) -> usize {
    let mut deg = 0;
    for i in 0..=n.degree_s() {
        for j in 0..=n.degree_theta() {
            if n.coeff(i, j).iter().any(|e| *e != AffineExpr::zero()) {
                deg = deg.max(i).max(j);
            }
        }
    }
    deg
}

/// Constrains `{M_target, N_target}` to admit a certificate of the given layout.
/// `N_target` must satisfy `N(s,θ) = Nᵀ(θ,s)`; only its independent
/// coefficients are matched.
pub fn add_xi_constraints(
    problem: &mut SdpProblem,
    label: &str,
    m_target: &ExprPoly1<AffineExpr>,
    n_target: &ExprPoly2<AffineExpr>,
    layout: XiLayout,
) -> Result<XiHandles> {
    layout.check()?;
    let (k1, k2, k, d) = (layout.k1, layout.k2, layout.k(), layout.degree);
    if m_target.shape() != (k, k) {
        return Err(LkError::DimensionMismatch { context: "xi target M", left: m_target.shape(), right: (k, k) });
    }
    if n_target.shape() != (k2, k2) {
        return Err(LkError::DimensionMismatch { context: "xi target N", left: n_target.shape(), right: (k2, k2) });
    }
    let cross = stored_degree_m_cross(m_target, k1);
    let phi = stored_degree_m_phi(m_target, k1);
    let nd = stored_degree_n(n_target);
    if cross.max(phi) > 2 * d {
        return Err(LkError::DegreeTooLow { target: cross.max(phi), expressible: 2 * d });
    }
    if nd > d {
        return Err(LkError::DegreeTooLow { target: nd, expressible: d });
    }

    let gram = problem.declare_variable(format!("{label}.gram"), VariableKind::SymMatrix { side: layout.gram_side() })?;
    let u = problem.matrix(gram)?;
    problem.add_psd(format!("{label}.gram"), &u)?;
    let weight = if layout.weight_side() > 0 {
        let h = problem.declare_variable(format!("{label}.weight"), VariableKind::SymMatrix { side: layout.weight_side() })?;
        let w = problem.matrix(h)?;
        problem.add_psd(format!("{label}.weight"), &w)?;
        Some(h)
    } else {
        None
    };
    let w_expr = weight.map(|h| problem.matrix(h)).transpose()?;
    let (m_cert, n_cert) = expand(&layout, &u, w_expr.as_ref());

    let iv = layout.interval;
    if k1 > 0 {
        let lhs = m_cert.integrate_full(iv).sub_block(0, 0, k1, k1);
        let rhs = m_target.integrate_full(iv).sub_block(0, 0, k1, k1);
        problem.add_matrix_equality(&format!("{label}.M11"), &lhs, &rhs, true)?;
    }
    let top = m_cert.degree().max(m_target.degree());
    for i in 0..=top {
        let (c, t) = (m_cert.coeff(i), m_target.coeff(i));
        if k1 > 0 && k2 > 0 {
            let lhs = c.sub_block(0, k1, k1, k2);
            let rhs = t.sub_block(0, k1, k1, k2);
            problem.add_matrix_equality(&format!("{label}.M12[{i}]"), &lhs, &rhs, false)?;
        }
        if k2 > 0 {
            let lhs = c.sub_block(k1, k1, k2, k2);
            let rhs = t.sub_block(k1, k1, k2, k2);
            problem.add_matrix_equality(&format!("{label}.M22[{i}]"), &lhs, &rhs, true)?;
        }
    }
    if k2 > 0 {
        let ds = n_cert.degree_s().max(n_target.degree_s());
        let dt = n_cert.degree_theta().max(n_target.degree_theta());
        for i in 0..=ds {
            for j in i..=dt {
                let lhs = n_cert.coeff(i, j);
                let rhs = n_target.coeff(i, j);
                problem.add_matrix_equality(&format!("{label}.N[{i},{j}]"), &lhs, &rhs, i == j)?;
            }
        }
    }
    let key = format!("{label}.block_dim");
    problem.set_meta(key, k);
    problem.set_meta(format!("{label}.gram_side"), layout.gram_side());
    Ok(XiHandles { gram, weight })
}

/// A standalone feasibility problem `{M, N} ∈ Ξ` for numeric targets.
pub fn xi_constraints(m_target: &PolyMat1, n_target: &PolyMat2, layout: XiLayout) -> Result<(SdpProblem, XiHandles)> {
    let mut problem = SdpProblem::new();
    let handles = add_xi_constraints(
        &mut problem,
        "xi",
        &ExprPoly1::from_poly(m_target),
        &ExprPoly2::from_poly(n_target),
        layout,
    )?;
    Ok((problem, handles))
}

/// Reads the numeric certificate back from a solved problem.
pub fn extract_certificate(
    problem: &SdpProblem,
    solution: &crate::sdp::SdpSolution,
    handles: &XiHandles,
    layout: XiLayout,
) -> Result<XiCertificate> {
    let gram = solution.matrix(problem, handles.gram)?;
    let weight_gram = handles.weight.map(|h| solution.matrix(problem, h)).transpose()?;
    Ok(XiCertificate { gram, weight_gram, layout })
}

fn random_piecewise_state(n: usize, m: usize, interval: Interval, rng: &mut impl Rng) -> Result<StateFunction> {
    let pieces = rng.random_range(2..=12);
    let psi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let levels: Vec<DVector<f64>> =
        (0..pieces).map(|_| DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal))).collect();
    let r = interval.r();
    // steps with short linear ramps between them
    StateFunction::sampled_from(psi, m, interval, 401, |s| {
        let x = ((s + r) / r * pieces as f64).clamp(0.0, pieces as f64 - 1e-12);
        levels[x as usize].clone()
    })
}

/// Minimum of `⟨z, 𝒫z⟩ / ⟨z, z⟩` over random states (alternately polynomial
/// and piecewise-constant `φ`).
pub fn sample_positivity(op: &KernelOperator, n_samples: usize, quad: &QuadratureRule, seed: u64) -> Result<f64> {
    let (n, m, iv) = (op.n(), op.m(), op.interval());
    let ratios = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let z = if i % 2 == 0 { random_state(n, m, iv, 4, &mut rng) } else { random_piecewise_state(n, m, iv, &mut rng)? };
            let den = inner_product_with(&z, &z, quad)?;
            if den <= 0.0 {
                return Ok(f64::INFINITY);
            }
            Ok(op.value(&z, quad)? / den)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lkoperator::default_rule;

    fn iv(r: f64) -> Interval {
        Interval::new(r).unwrap()
    }

    #[test]
    fn identity_gram_example() {
        let layout = XiLayout::new(0, 1, 0, iv(1.0));
        assert_eq!(layout.gram_side(), 2);
        let cert = XiCertificate { gram: DMatrix::identity(2, 2), weight_gram: None, layout };
        let (m, n) = xi_expand(&cert).unwrap();
        assert_eq!(m.eval(-0.4)[(0, 0)], 1.0);
        assert_eq!(n.eval(-0.2, -0.9)[(0, 0)], 1.0);
        let op = to_kernel_operator(&m, &n, 0).unwrap();
        assert!(sample_positivity(&op, 200, &default_rule(iv(1.0)), 3).unwrap() >= 0.0);
    }

    #[test]
    fn zero_and_rank_one_grams() {
        let layout = XiLayout::new(0, 1, 1, iv(1.0)).unweighted();
        let zero = XiCertificate { gram: DMatrix::zeros(4, 4), weight_gram: None, layout };
        let (m, n) = xi_expand(&zero).unwrap();
        assert!(m.is_zero() && n.is_zero());
        let mut g = DMatrix::zeros(4, 4);
        g[(0, 0)] = 1.0;
        let (m, _) = xi_expand(&XiCertificate { gram: g, weight_gram: None, layout }).unwrap();
        assert_eq!(m.degree(), 0);
        assert_eq!(m.coeff(0)[(0, 0)], 1.0);
    }

    #[test]
    fn identity_operator_ratio_is_one() {
        let op = KernelOperator::identity(2, 1, iv(1.0));
        let v = sample_positivity(&op, 50, &default_rule(iv(1.0)), 1).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }
}
