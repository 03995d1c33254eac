//! Kernel operators on `Z = ℝⁿ × PC([-r,0], ℝᵐ)`.
//!
//! A [`KernelOperator`] acts as
//!
//! ```text
//! (ψ, φ) ↦ ( Pψ + ∫Q(s)φ(s)ds ,  s ↦ rQᵀ(s)ψ + ∫R(s,θ)φ(θ)dθ + S(s)φ(s) )
//! ```
//!
//! and its quadratic form `⟨z, 𝒫z⟩` is the Lyapunov-Krasovskii value. The
//! separable subclass (`Q = HZ(s)`, `R = Zᵀ(s)ΓZ(θ)`) has a closed-form
//! inverse, built by [`invert_separable`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LkError, Result, SingularWhich};
use crate::matrix::{asymmetry, checked_inverse, from_rows_shaped, spectral_radius, symmetrize, to_rows};
use crate::polyalg::{gauss_rule, Interval, PolyMat1, PolyMat2, QuadratureRule, DEFAULT_QUAD_NODES};

/// Default number of uniform points when a function is tabulated.
pub const DEFAULT_GRID_POINTS: usize = 201;

/// Relative asymmetry tolerated (and then removed) on symmetric inputs.
const SYMMETRY_TOL: f64 = 1e-9;

pub type PhiFn = Arc<dyn Fn(f64) -> Result<DVector<f64>> + Send + Sync>;

/// The function part `φ` of a state.
#[derive(Clone)]
pub enum Phi {
    /// An `m × 1` polynomial.
    Polynomial(PolyMat1),
    /// Values on an increasing grid from `-r` to `0`, linearly interpolated.
    Sampled { grid: Vec<f64>, values: Vec<DVector<f64>> },
    /// Anything evaluable pointwise, e.g. a rational function.
    Evaluable(PhiFn),
}

/// An element `(ψ, φ)` of `Z`.
#[derive(Clone)]
pub struct StateFunction {
    pub psi: DVector<f64>,
    phi: Phi,
    m: usize,
    interval: Interval,
}

impl fmt::Debug for StateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("StateFunction");
        d.field("psi", &self.psi.as_slice()).field("m", &self.m).field("r", &self.interval.r());
        match &self.phi {
            Phi::Polynomial(p) => d.field("phi", p),
            Phi::Sampled { grid, .. } => d.field("phi", &format_args!("sampled on {} points", grid.len())),
            Phi::Evaluable(_) => d.field("phi", &"evaluable"),
        };
        d.finish()
    }
}

impl StateFunction {
    pub fn polynomial(psi: DVector<f64>, phi: PolyMat1) -> Result<Self> {
        if phi.cols() != 1 {
            return Err(LkError::DimensionMismatch { context: "StateFunction phi", left: phi.shape(), right: (phi.rows(), 1) });
        }
        Ok(StateFunction { psi, m: phi.rows(), interval: phi.interval(), phi: Phi::Polynomial(phi) })
    }

    pub fn sampled(psi: DVector<f64>, grid: Vec<f64>, values: Vec<DVector<f64>>, interval: Interval) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(LkError::InvalidArgument(format!(
                "sampled phi needs matching grid/value lengths ≥ 2, got {} and {}",
                grid.len(),
                values.len()
            )));
        }
        let slack = 1e-9 * interval.r();
        if (grid[0] - interval.lower()).abs() > slack || grid[grid.len() - 1].abs() > slack {
            return Err(LkError::InvalidArgument("sample grid must span [-r, 0]".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LkError::InvalidArgument("sample grid must be strictly increasing".into()));
        }
        let m = values[0].len();
        if values.iter().any(|v| v.len() != m) {
            return Err(LkError::InvalidArgument("sampled phi values have inconsistent length".into()));
        }
        Ok(StateFunction { psi, phi: Phi::Sampled { grid, values }, m, interval })
    }

    /// Tabulates `f` on `points` uniform nodes.
    pub fn sampled_from(
        psi: DVector<f64>,
        m: usize,
        interval: Interval,
        points: usize,
        f: impl Fn(f64) -> DVector<f64>,
    ) -> Result<Self> {
        let grid = uniform_grid(interval, points.max(2));
        let values: Vec<DVector<f64>> = grid.iter().map(|&s| f(s)).collect();
        if values[0].len() != m {
            return Err(LkError::DimensionMismatch { context: "sampled phi", left: (values[0].len(), 1), right: (m, 1) });
        }
        Self::sampled(psi, grid, values, interval)
    }

    pub fn evaluable(psi: DVector<f64>, m: usize, interval: Interval, f: PhiFn) -> Self {
        StateFunction { psi, phi: Phi::Evaluable(f), m, interval }
    }

    pub fn n(&self) -> usize {
        self.psi.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn phi(&self) -> &Phi {
        &self.phi
    }

    pub fn repr_tag(&self) -> &'static str {
        match self.phi {
            Phi::Polynomial(_) => "polynomial",
            Phi::Sampled { .. } => "sampled",
            Phi::Evaluable(_) => "evaluable",
        }
    }

    pub fn phi_at(&self, s: f64) -> Result<DVector<f64>> {
        let v = match &self.phi {
            Phi::Polynomial(p) => p.eval(s).column(0).into_owned(),
            Phi::Sampled { grid, values } => interpolate(grid, values, s),
            Phi::Evaluable(f) => f(s)?,
        };
        if v.len() != self.m {
            return Err(LkError::DimensionMismatch { context: "phi value", left: (v.len(), 1), right: (self.m, 1) });
        }
        Ok(v)
    }

    fn poly_degree(&self) -> usize {
        match &self.phi {
            Phi::Polynomial(p) => p.degree(),
            Phi::Sampled { .. } => 1,
            Phi::Evaluable(_) => 0,
        }
    }

    /// Tabulated copy on `points` uniform nodes (sampled inputs keep their grid).
    pub fn to_sampled(&self, points: usize) -> Result<Self> {
        if let Phi::Sampled { .. } = self.phi {
            return Ok(self.clone());
        }
        let grid = uniform_grid(self.interval, points.max(2));
        let values = grid.iter().map(|&s| self.phi_at(s)).collect::<Result<Vec<_>>>()?;
        Self::sampled(self.psi.clone(), grid, values, self.interval)
    }

    /// `a·x + b·y`, staying polynomial or on a shared grid where possible.
    pub fn combine(a: f64, x: &StateFunction, b: f64, y: &StateFunction) -> Result<StateFunction> {
        check_same_space(x, y)?;
        let psi = &x.psi * a + &y.psi * b;
        match (&x.phi, &y.phi) {
            (Phi::Polynomial(p), Phi::Polynomial(q)) => Self::polynomial(psi, p.scale(a).add(&q.scale(b))?),
            (Phi::Sampled { grid: g1, values: v1 }, Phi::Sampled { grid: g2, values: v2 }) if g1 == g2 => {
                let values = v1.iter().zip(v2).map(|(u, w)| u * a + w * b).collect();
                Self::sampled(psi, g1.clone(), values, x.interval)
            }
            _ => {
                let (xc, yc) = (x.clone(), y.clone());
                let f: PhiFn = Arc::new(move |s| Ok(xc.phi_at(s)? * a + yc.phi_at(s)? * b));
                Ok(Self::evaluable(psi, x.m, x.interval, f))
            }
        }
    }

    /// CSV with header `s,phi_0,…`; sampled functions use their own grid.
    pub fn to_csv(&self, points: usize) -> Result<String> {
        let tab = self.to_sampled(points)?;
        let Phi::Sampled { grid, values } = &tab.phi else { unreachable!() };
        let mut out = String::from("s");
        for a in 0..self.m {
            out.push_str(&format!(",phi_{a}"));
        }
        out.push('\n');
        for (s, v) in grid.iter().zip(values) {
            out.push_str(&format!("{s:.16e}"));
            for x in v.iter() {
                out.push_str(&format!(",{x:.16e}"));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn uniform_grid(interval: Interval, points: usize) -> Vec<f64> {
    let r = interval.r();
    let n = points - 1;
    (0..=n).map(|k| if k == n { 0.0 } else { -r + r * k as f64 / n as f64 }).collect()
}

fn interpolate(grid: &[f64], values: &[DVector<f64>], s: f64) -> DVector<f64> {
    let last = grid.len() - 1;
    if s <= grid[0] {
        return values[0].clone();
    }
    if s >= grid[last] {
        return values[last].clone();
    }
    let k = grid.partition_point(|&g| g <= s).min(last) - 1;
    let t = (s - grid[k]) / (grid[k + 1] - grid[k]);
    &values[k] * (1.0 - t) + &values[k + 1] * t
}

fn check_same_space(x: &StateFunction, y: &StateFunction) -> Result<()> {
    if x.interval.r() != y.interval.r() {
        return Err(LkError::IntervalMismatch(x.interval.r(), y.interval.r()));
    }
    if x.n() != y.n() || x.m != y.m {
        return Err(LkError::DimensionMismatch { context: "state space", left: (x.n(), x.m), right: (y.n(), y.m) });
    }
    Ok(())
}

/// A rule integrating products of the given states' `φ` with a polynomial of
/// degree `extra_degree`; evaluable inputs fall back to `fallback`.
fn joint_rule(zs: &[&StateFunction], extra_degree: usize, fallback: &QuadratureRule) -> QuadratureRule {
    let needed = extra_degree + zs.iter().map(|z| z.poly_degree()).sum::<usize>();
    let mut breaks: Vec<f64> = Vec::new();
    for z in zs {
        if let Phi::Sampled { grid, .. } = &z.phi {
            breaks.extend_from_slice(grid);
        }
    }
    if !breaks.is_empty() {
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
        let per_cell = needed.div_ceil(2).max(2);
        return QuadratureRule::composite(&breaks, per_cell);
    }
    if zs.iter().any(|z| matches!(z.phi, Phi::Evaluable(_))) || fallback.order >= needed {
        return fallback.clone();
    }
    gauss_rule(needed / 2 + 1, zs[0].interval)
}

pub fn default_rule(interval: Interval) -> QuadratureRule {
    gauss_rule(DEFAULT_QUAD_NODES, interval)
}

/// `m_j = ∫ s^j φ(s) ds` for `j = 0..=max_power`.
fn moments(z: &StateFunction, max_power: usize, fallback: &QuadratureRule) -> Result<Vec<DVector<f64>>> {
    if let Phi::Polynomial(p) = &z.phi {
        let iv = z.interval;
        return Ok((0..=max_power)
            .map(|j| {
                let mut acc = DVector::zeros(z.m);
                for (k, c) in p.coeffs().iter().enumerate() {
                    acc += c.column(0) * iv.monomial_integral(j + k);
                }
                acc
            })
            .collect());
    }
    let rule = joint_rule(&[z], max_power, fallback);
    let mut out = vec![DVector::zeros(z.m); max_power + 1];
    for (s, w) in rule.points() {
        let v = z.phi_at(s)?;
        let mut pw = w;
        for m in out.iter_mut() {
            *m += &v * pw;
            pw *= s;
        }
    }
    Ok(out)
}

fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let total = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(total);
    let mut k = 0;
    for b in blocks {
        out.rows_mut(k, b.len()).copy_from(b);
        k += b.len();
    }
    out
}

/// `Zᵀ(s)·a` for `a` of length `(d+1)m`, as an `m × 1` polynomial.
fn zt_times(a: &DVector<f64>, m: usize, interval: Interval) -> PolyMat1 {
    let coeffs = (0..a.len() / m).map(|i| DMatrix::from_column_slice(m, 1, a.rows(i * m, m).as_slice())).collect();
    PolyMat1::new(m, 1, coeffs, interval).expect("shape preserved")
}

/// Second component `c(s) + S(s)φ(s)` where `c` is a polynomial vector.
fn second_component(
    z: &StateFunction,
    psi: DVector<f64>,
    c: PolyMat1,
    s_poly: &PolyMat1,
) -> Result<StateFunction> {
    match &z.phi {
        Phi::Polynomial(p) => StateFunction::polynomial(psi, c.add(&s_poly.mul(p)?)?),
        Phi::Sampled { grid, values } => {
            let vals = grid
                .iter()
                .zip(values)
                .map(|(&s, v)| c.eval(s).column(0) + s_poly.eval(s) * v)
                .collect();
            StateFunction::sampled(psi, grid.clone(), vals, z.interval)
        }
        Phi::Evaluable(_) => {
            let (zc, sp) = (z.clone(), s_poly.clone());
            let f: PhiFn = Arc::new(move |s| Ok(c.eval(s).column(0) + sp.eval(s) * zc.phi_at(s)?));
            Ok(StateFunction::evaluable(psi, z.m, z.interval, f))
        }
    }
}

/// `∫ φᵀ(s) W(s) φ(s) ds` for a polynomial weight.
fn weighted_square(z: &StateFunction, w: &PolyMat1, fallback: &QuadratureRule) -> Result<f64> {
    if let Phi::Polynomial(p) = &z.phi {
        return Ok(p.transpose().mul(w)?.mul(p)?.integrate_full()[(0, 0)]);
    }
    let rule = joint_rule(&[z, z], w.degree(), fallback);
    let mut acc = 0.0;
    for (s, wt) in rule.points() {
        let v = z.phi_at(s)?;
        acc += wt * v.dot(&(w.eval(s) * &v));
    }
    Ok(acc)
}

/// `r ψ₁ᵀψ₂ + ∫ φ₁ᵀφ₂`.
pub fn inner_product(z1: &StateFunction, z2: &StateFunction) -> Result<f64> {
    inner_product_with(z1, z2, &default_rule(z1.interval))
}

pub fn inner_product_with(z1: &StateFunction, z2: &StateFunction, fallback: &QuadratureRule) -> Result<f64> {
    check_same_space(z1, z2)?;
    let head = z1.interval.r() * z1.psi.dot(&z2.psi);
    if let (Phi::Polynomial(p), Phi::Polynomial(q)) = (&z1.phi, &z2.phi) {
        return Ok(head + p.transpose().mul(q)?.integrate_full()[(0, 0)]);
    }
    let rule = joint_rule(&[z1, z2], 0, fallback);
    let mut acc = 0.0;
    for (s, w) in rule.points() {
        acc += w * z1.phi_at(s)?.dot(&z2.phi_at(s)?);
    }
    Ok(head + acc)
}

pub fn state_norm(z: &StateFunction, fallback: &QuadratureRule) -> Result<f64> {
    Ok(inner_product_with(z, z, fallback)?.max(0.0).sqrt())
}

/// Random state with normal `ψ` and a polynomial `φ` of degree ≤ `max_degree`,
/// scaled to unit norm.
pub fn random_state(n: usize, m: usize, interval: Interval, max_degree: usize, rng: &mut impl Rng) -> StateFunction {
    let deg = rng.random_range(0..=max_degree);
    let psi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let coeffs = (0..=deg)
        .map(|k| DMatrix::from_fn(m, 1, |_, _| rng.sample::<f64, _>(StandardNormal) / interval.r().powi(k as i32)))
        .collect();
    let phi = PolyMat1::new(m, 1, coeffs, interval).expect("shape preserved");
    let z = StateFunction::polynomial(psi, phi).expect("column polynomial");
    let norm = state_norm(&z, &default_rule(interval)).unwrap_or(1.0);
    if norm > 0.0 {
        StateFunction::combine(1.0 / norm, &z, 0.0, &z).expect("same space")
    } else {
        z
    }
}

/// Generator for sample `index` of a seeded batch.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Random unit-norm state satisfying `φ(0) = Cψ + Dφ(−r)`.
pub fn random_state_in_domain(bd: &BoundaryData, interval: Interval, rng: &mut impl Rng) -> Result<StateFunction> {
    let (m, n) = bd.c.shape();
    let z = random_state(n, m, interval, 3, rng);
    let Phi::Polynomial(p) = &z.phi else { unreachable!() };
    let gap = &bd.c * &z.psi + &bd.d * p.eval(interval.lower()).column(0) - p.eval(0.0).column(0);
    let lhs = DMatrix::identity(m, m) - &bd.d;
    let shift = checked_inverse(&lhs, SingularWhich::Other("I-D"))? * gap;
    let phi = p.add(&PolyMat1::constant(DMatrix::from_column_slice(m, 1, shift.as_slice()), interval))?;
    let z = StateFunction::polynomial(z.psi.clone(), phi)?;
    let norm = state_norm(&z, &default_rule(interval))?;
    StateFunction::combine(1.0 / norm.max(f64::MIN_POSITIVE), &z, 0.0, &z)
}

/// Boundary coupling `φ(0) = Cψ + Dφ(−r)` of the domain `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    #[serde(rename = "C", with = "crate::matrix::serde_mat")]
    pub c: DMatrix<f64>,
    #[serde(rename = "D", with = "crate::matrix::serde_mat")]
    pub d: DMatrix<f64>,
}

impl BoundaryData {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() != c.nrows() || !d.is_square() {
            return Err(LkError::DimensionMismatch { context: "BoundaryData", left: c.shape(), right: d.shape() });
        }
        Ok(BoundaryData { c, d })
    }

    /// Fails unless `ρ(D) < 1`.
    pub fn check_stable_difference(&self) -> Result<f64> {
        let rho = spectral_radius(&self.d);
        if rho < 1.0 {
            Ok(rho)
        } else {
            Err(LkError::InvalidArgument(format!("spectral radius of D is {rho} ≥ 1")))
        }
    }

    /// `‖φ(0) − Cψ − Dφ(−r)‖`.
    pub fn boundary_gap(&self, z: &StateFunction) -> Result<f64> {
        let r = z.interval.r();
        Ok((z.phi_at(0.0)? - &self.c * &z.psi - &self.d * z.phi_at(-r)?).norm())
    }
}

fn symmetric_checked(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(LkError::InvalidArgument(format!("{what} must be square, got {:?}", m.shape())));
    }
    if asymmetry(m) > SYMMETRY_TOL * (1.0 + m.norm()) {
        return Err(LkError::InvalidArgument(format!("{what} is not symmetric (asymmetry {:e})", asymmetry(m))));
    }
    Ok(symmetrize(m))
}

fn symmetric_poly(p: &PolyMat1, what: &str) -> Result<PolyMat1> {
    let coeffs = p.coeffs().iter().map(|c| symmetric_checked(c, what)).collect::<Result<Vec<_>>>()?;
    PolyMat1::new(p.rows(), p.cols(), coeffs, p.interval())
}

/// Operators whose quadratic form can serve as a Lyapunov-Krasovskii value.
pub trait LyapunovOperator: Send + Sync {
    fn dims(&self) -> (usize, usize);
    fn interval(&self) -> Interval;
    fn apply_state(&self, z: &StateFunction) -> Result<StateFunction>;
    fn quadratic_form(&self, z: &StateFunction) -> Result<f64>;
}

fn check_dims(context: &'static str, op: (usize, usize), z: &StateFunction) -> Result<()> {
    if op != (z.n(), z.m) {
        return Err(LkError::DimensionMismatch { context, left: op, right: (z.n(), z.m) });
    }
    Ok(())
}

/// General operator with polynomial `Q`, `R`, `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelOperator {
    pub p: DMatrix<f64>,
    pub q: PolyMat1,
    pub r: PolyMat2,
    pub s: PolyMat1,
    interval: Interval,
}

impl KernelOperator {
    /// Checks shapes and the symmetry conditions `P = Pᵀ`, `S(s) = Sᵀ(s)`,
    /// `R(s,θ) = Rᵀ(θ,s)`; tiny asymmetries are projected away.
    pub fn new(p: DMatrix<f64>, q: PolyMat1, r: PolyMat2, s: PolyMat1) -> Result<Self> {
        let interval = q.interval();
        for iv in [r.interval(), s.interval()] {
            if iv.r() != interval.r() {
                return Err(LkError::IntervalMismatch(interval.r(), iv.r()));
            }
        }
        let n = p.nrows();
        let m = s.rows();
        if q.shape() != (n, m) {
            return Err(LkError::DimensionMismatch { context: "KernelOperator Q", left: q.shape(), right: (n, m) });
        }
        if r.shape() != (m, m) || s.shape() != (m, m) {
            return Err(LkError::DimensionMismatch { context: "KernelOperator R/S", left: r.shape(), right: s.shape() });
        }
        let p = symmetric_checked(&p, "P")?;
        let s = symmetric_poly(&s, "S")?;
        let adj = r.adjoint();
        let gap = r.sub(&adj)?.coeff_norm();
        if gap > SYMMETRY_TOL * (1.0 + r.coeff_norm()) {
            return Err(LkError::InvalidArgument(format!("R(s,θ) ≠ Rᵀ(θ,s) (gap {gap:e})")));
        }
        let r = r.add(&adj)?.scale(0.5);
        Ok(KernelOperator { p, q, r, s, interval })
    }

    pub fn identity(n: usize, m: usize, interval: Interval) -> Self {
        KernelOperator {
            p: DMatrix::identity(n, n),
            q: PolyMat1::zeros(n, m, interval),
            r: PolyMat2::zeros(m, m, interval),
            s: PolyMat1::constant(DMatrix::identity(m, m), interval),
            interval,
        }
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.s.rows()
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn apply(&self, z: &StateFunction, fallback: &QuadratureRule) -> Result<StateFunction> {
        check_dims("apply_operator", (self.n(), self.m()), z)?;
        let iv = self.interval;
        let mom = moments(z, self.q.degree().max(self.r.degree_theta()), fallback)?;
        let mut first = &self.p * &z.psi;
        for (i, qi) in self.q.coeffs().iter().enumerate() {
            first += qi * &mom[i];
        }
        let mut c = self.q.transpose().mul_right(&DMatrix::from_column_slice(self.n(), 1, z.psi.as_slice()))?.scale(iv.r());
        let mut extra = vec![DMatrix::zeros(self.m(), 1); self.r.degree_s() + 1];
        for (&(i, j), cij) in self.r.coeffs() {
            extra[i] += cij * &mom[j];
        }
        c = c.add(&PolyMat1::new(self.m(), 1, extra, iv)?)?;
        second_component(z, first, c, &self.s)
    }

    pub fn value(&self, z: &StateFunction, fallback: &QuadratureRule) -> Result<f64> {
        check_dims("lk_value", (self.n(), self.m()), z)?;
        let r = self.interval.r();
        let mom = moments(z, self.q.degree().max(self.r.degree_theta()).max(self.r.degree_s()), fallback)?;
        let mut qg = DVector::zeros(self.n());
        for (i, qi) in self.q.coeffs().iter().enumerate() {
            qg += qi * &mom[i];
        }
        let mut rr = 0.0;
        for (&(i, j), cij) in self.r.coeffs() {
            rr += mom[i].dot(&(cij * &mom[j]));
        }
        Ok(r * z.psi.dot(&(&self.p * &z.psi)) + 2.0 * r * z.psi.dot(&qg) + rr + weighted_square(z, &self.s, fallback)?)
    }
}

impl LyapunovOperator for KernelOperator {
    fn dims(&self) -> (usize, usize) {
        (self.n(), self.m())
    }
    fn interval(&self) -> Interval {
        self.interval
    }
    fn apply_state(&self, z: &StateFunction) -> Result<StateFunction> {
        self.apply(z, &default_rule(self.interval))
    }
    fn quadratic_form(&self, z: &StateFunction) -> Result<f64> {
        self.value(z, &default_rule(self.interval))
    }
}

/// Residual norms of the three boundary conditions under which the operator
/// maps the domain `X` into itself:
///
/// * `rQᵀ(0) + S(0)C − CP − rDQᵀ(−r)`
/// * `R(0,s) − CQ(s) − DR(−r,s)` (coefficient norm, as a polynomial in `s`)
/// * `DS(−r) − S(0)D`
pub fn invariance_residual(op: &KernelOperator, bd: &BoundaryData) -> Result<(f64, f64, f64)> {
    let (n, m) = (op.n(), op.m());
    if bd.c.shape() != (m, n) || bd.d.shape() != (m, m) {
        return Err(LkError::DimensionMismatch { context: "invariance_residual", left: bd.c.shape(), right: (m, n) });
    }
    let r = op.interval.r();
    let low = op.interval.lower();
    let e1 = op.q.eval(0.0).transpose() * r + op.s.eval(0.0) * &bd.c - &bd.c * &op.p - &bd.d * op.q.eval(low).transpose() * r;
    let e2 = op.r.eval_s(0.0).sub(&op.q.mul_left(&bd.c)?)?.sub(&op.r.eval_s(low).mul_left(&bd.d)?)?;
    let e3 = &bd.d * op.s.eval(low) - op.s.eval(0.0) * &bd.d;
    Ok((e1.norm(), e2.coeff_norm(), e3.norm()))
}

/// Separable operator: `Q(s) = H Z(s)`, `R(s,θ) = Zᵀ(s) Γ Z(θ)` with
/// `Z = (1, s, …, s^d)ᵀ ⊗ I_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableKernelOperator {
    pub p: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub s: PolyMat1,
    degree: usize,
    z: PolyMat1,
}

impl SeparableKernelOperator {
    pub fn new(p: DMatrix<f64>, h: DMatrix<f64>, gamma: DMatrix<f64>, s: PolyMat1, degree: usize) -> Result<Self> {
        let m = s.rows();
        let n = p.nrows();
        let q = (degree + 1) * m;
        if h.shape() != (n, q) {
            return Err(LkError::DimensionMismatch { context: "separable H", left: h.shape(), right: (n, q) });
        }
        if gamma.shape() != (q, q) {
            return Err(LkError::DimensionMismatch { context: "separable Gamma", left: gamma.shape(), right: (q, q) });
        }
        if s.rows() != s.cols() {
            return Err(LkError::DimensionMismatch { context: "separable S", left: s.shape(), right: (m, m) });
        }
        let p = symmetric_checked(&p, "P")?;
        let gamma = symmetric_checked(&gamma, "Gamma")?;
        let s = symmetric_poly(&s, "S")?;
        let z = PolyMat1::monomial_basis(degree, m, s.interval());
        Ok(SeparableKernelOperator { p, h, gamma, s, degree, z })
    }

    /// Extracts `H` and `Γ` from a general operator whose kernels fit the basis.
    pub fn from_kernel(op: &KernelOperator, degree: usize) -> Result<Self> {
        let (n, m) = (op.n(), op.m());
        let qd = (degree + 1) * m;
        let found = op.q.degree().max(op.r.degree_s()).max(op.r.degree_theta());
        if found > degree {
            return Err(LkError::BasisMismatch { degree, found });
        }
        let mut h = DMatrix::zeros(n, qd);
        for i in 0..=degree {
            h.view_mut((0, i * m), (n, m)).copy_from(&op.q.coeff(i));
        }
        let mut gamma = DMatrix::zeros(qd, qd);
        for (&(i, j), c) in op.r.coeffs() {
            gamma.view_mut((i * m, j * m), (m, m)).copy_from(c);
        }
        Self::new(op.p.clone(), h, gamma, op.s.clone(), degree)
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.s.rows()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn basis(&self) -> &PolyMat1 {
        &self.z
    }

    pub fn interval(&self) -> Interval {
        self.s.interval()
    }

    pub fn to_kernel(&self) -> Result<KernelOperator> {
        let q = self.z.mul_left(&self.h)?;
        let r = self.z.transpose().mul_right(&self.gamma)?.outer(&self.z)?;
        KernelOperator::new(self.p.clone(), q, r, self.s.clone())
    }

    /// `g = ∫ Z(s) φ(s) ds`.
    fn basis_moment(&self, z: &StateFunction, fallback: &QuadratureRule) -> Result<DVector<f64>> {
        Ok(stack(&moments(z, self.degree, fallback)?))
    }

    pub fn apply(&self, z: &StateFunction, fallback: &QuadratureRule) -> Result<StateFunction> {
        check_dims("apply_operator", (self.n(), self.m()), z)?;
        let g = self.basis_moment(z, fallback)?;
        let first = &self.p * &z.psi + &self.h * &g;
        let a = self.h.transpose() * &z.psi * self.interval().r() + &self.gamma * &g;
        second_component(z, first, zt_times(&a, self.m(), self.interval()), &self.s)
    }

    pub fn value(&self, z: &StateFunction, fallback: &QuadratureRule) -> Result<f64> {
        check_dims("lk_value", (self.n(), self.m()), z)?;
        let r = self.interval().r();
        let g = self.basis_moment(z, fallback)?;
        Ok(r * z.psi.dot(&(&self.p * &z.psi))
            + 2.0 * r * z.psi.dot(&(&self.h * &g))
            + g.dot(&(&self.gamma * &g))
            + weighted_square(z, &self.s, fallback)?)
    }

    pub fn to_json(&self) -> SeparableOperatorJson {
        SeparableOperatorJson {
            n: self.n(),
            m: self.m(),
            r: self.interval().r(),
            degree: self.degree,
            p: to_rows(&self.p),
            h: to_rows(&self.h),
            gamma: to_rows(&self.gamma),
            s_coeffs: self.s.coeffs().iter().map(to_rows).collect(),
        }
    }
}

impl LyapunovOperator for SeparableKernelOperator {
    fn dims(&self) -> (usize, usize) {
        (self.n(), self.m())
    }
    fn interval(&self) -> Interval {
        self.s.interval()
    }
    fn apply_state(&self, z: &StateFunction) -> Result<StateFunction> {
        self.apply(z, &default_rule(self.interval()))
    }
    fn quadratic_form(&self, z: &StateFunction) -> Result<f64> {
        self.value(z, &default_rule(self.interval()))
    }
}

/// Wire form of a separable operator; matrices are row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparableOperatorJson {
    pub n: usize,
    pub m: usize,
    pub r: f64,
    pub degree: usize,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "Gamma")]
    pub gamma: Vec<Vec<f64>>,
    #[serde(rename = "S_coeffs")]
    pub s_coeffs: Vec<Vec<Vec<f64>>>,
}

impl SeparableOperatorJson {
    pub fn into_operator(self) -> Result<SeparableKernelOperator> {
        let iv = Interval::new(self.r)?;
        let q = (self.degree + 1) * self.m;
        let p = from_rows_shaped(&self.p, self.n, self.n)?;
        let h = from_rows_shaped(&self.h, self.n, q)?;
        let gamma = from_rows_shaped(&self.gamma, q, q)?;
        if self.s_coeffs.is_empty() {
            return Err(LkError::Parse("S_coeffs must hold at least one coefficient".into()));
        }
        let s = self
            .s_coeffs
            .iter()
            .map(|c| from_rows_shaped(c, self.m, self.m))
            .collect::<Result<Vec<_>>>()?;
        SeparableKernelOperator::new(p, h, gamma, PolyMat1::new(self.m, self.m, s, iv)?, self.degree)
    }
}

/// Inverse of a separable operator. With constant `S` it is again separable
/// (see [`InverseKernelOperator::to_separable`]); otherwise `S(s)⁻¹` is
/// applied pointwise.
#[derive(Clone, Debug)]
pub struct InverseKernelOperator {
    pub p_hat: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    pub gamma_hat: DMatrix<f64>,
    pub s: PolyMat1,
    /// `∫ Z S⁻¹ Zᵀ`.
    pub k: DMatrix<f64>,
    /// `(I + KΓ − r K Hᵀ P⁻¹ H)⁻¹`.
    pub t: DMatrix<f64>,
    s_inv_const: Option<DMatrix<f64>>,
    degree: usize,
    rule: QuadratureRule,
}

impl InverseKernelOperator {
    pub fn n(&self) -> usize {
        self.p_hat.nrows()
    }

    pub fn m(&self) -> usize {
        self.s.rows()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interval(&self) -> Interval {
        self.s.interval()
    }

    /// Rule used for `K`; reuse it for integrals against `S⁻¹` to keep
    /// compositions exact up to rounding.
    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn s_inv_at(&self, s: f64) -> Result<DMatrix<f64>> {
        match &self.s_inv_const {
            Some(c) => Ok(c.clone()),
            None => checked_inverse(&self.s.eval(s), SingularWhich::SAtNode(s)),
        }
    }

    /// `Ẑ(s) = Z(s) S(s)⁻¹`, `q × m`.
    pub fn z_hat_at(&self, s: f64) -> Result<DMatrix<f64>> {
        let m = self.m();
        let sinv = self.s_inv_at(s)?;
        let mut out = DMatrix::zeros((self.degree + 1) * m, m);
        let mut pw = 1.0;
        for i in 0..=self.degree {
            out.view_mut((i * m, 0), (m, m)).copy_from(&(&sinv * pw));
            pw *= s;
        }
        Ok(out)
    }

    pub fn q_hat_at(&self, s: f64) -> Result<DMatrix<f64>> {
        Ok(&self.h_hat * self.z_hat_at(s)?)
    }

    pub fn r_hat_at(&self, s: f64, theta: f64) -> Result<DMatrix<f64>> {
        Ok(self.z_hat_at(s)?.transpose() * &self.gamma_hat * self.z_hat_at(theta)?)
    }

    /// `ĝ = ∫ Ẑ(s) φ(s) ds`.
    fn basis_moment(&self, z: &StateFunction, quad: &QuadratureRule) -> Result<DVector<f64>> {
        if let Some(sinv) = &self.s_inv_const {
            let mom = moments(z, self.degree, quad)?;
            return Ok(stack(&mom.iter().map(|v| sinv * v).collect::<Vec<_>>()));
        }
        let rule = joint_rule(&[z], self.degree, quad);
        let mut g = DVector::zeros((self.degree + 1) * self.m());
        for (s, w) in rule.points() {
            g += self.z_hat_at(s)? * z.phi_at(s)? * w;
        }
        Ok(g)
    }

    pub fn apply(&self, z: &StateFunction, quad: &QuadratureRule) -> Result<StateFunction> {
        check_dims("apply_inverse", (self.n(), self.m()), z)?;
        let iv = self.interval();
        let g = self.basis_moment(z, quad)?;
        let first = &self.p_hat * &z.psi + &self.h_hat * &g;
        let a = self.h_hat.transpose() * &z.psi * iv.r() + &self.gamma_hat * &g;
        let c = zt_times(&a, self.m(), iv);
        if let Some(sinv) = &self.s_inv_const {
            let sinv_poly = PolyMat1::constant(sinv.clone(), iv);
            let shifted = c.mul_left(sinv)?;
            return second_component(z, first, shifted, &sinv_poly);
        }
        let this = self.clone();
        let zc = z.clone();
        match &z.phi {
            Phi::Sampled { grid, values } => {
                let vals = grid
                    .iter()
                    .zip(values)
                    .map(|(&s, v)| Ok(this.s_inv_at(s)? * (c.eval(s).column(0) + v)))
                    .collect::<Result<Vec<_>>>()?;
                StateFunction::sampled(first, grid.clone(), vals, iv)
            }
            _ => {
                let f: PhiFn = Arc::new(move |s| Ok(this.s_inv_at(s)? * (c.eval(s).column(0) + zc.phi_at(s)?)));
                Ok(StateFunction::evaluable(first, z.m, iv, f))
            }
        }
    }

    pub fn value(&self, z: &StateFunction, quad: &QuadratureRule) -> Result<f64> {
        check_dims("lk_value", (self.n(), self.m()), z)?;
        let r = self.interval().r();
        let g = self.basis_moment(z, quad)?;
        let tail = match &self.s_inv_const {
            Some(sinv) => weighted_square(z, &PolyMat1::constant(sinv.clone(), self.interval()), quad)?,
            None => {
                let rule = joint_rule(&[z, z], 0, quad);
                let mut acc = 0.0;
                for (s, w) in rule.points() {
                    let v = z.phi_at(s)?;
                    acc += w * v.dot(&(self.s_inv_at(s)? * &v));
                }
                acc
            }
        };
        Ok(r * z.psi.dot(&(&self.p_hat * &z.psi))
            + 2.0 * r * z.psi.dot(&(&self.h_hat * &g))
            + g.dot(&(&self.gamma_hat * &g))
            + tail)
    }

    /// Separable form of the inverse, available when `S` is constant:
    /// `Ẑ = (I ⊗ S⁻¹) Z` folds `S⁻¹` into `H` and `Γ`.
    pub fn to_separable(&self) -> Result<SeparableKernelOperator> {
        let sinv = self
            .s_inv_const
            .as_ref()
            .ok_or_else(|| LkError::InvalidArgument("inverse with non-constant S is not separable".into()))?;
        let blocks: Vec<&DMatrix<f64>> = (0..=self.degree).map(|_| sinv).collect();
        let lift = crate::matrix::block_diag(&blocks);
        let iv = self.interval();
        SeparableKernelOperator::new(
            symmetrize(&self.p_hat),
            &self.h_hat * &lift,
            symmetrize(&(&lift * &self.gamma_hat * &lift)),
            PolyMat1::constant(symmetrize(sinv), iv),
            self.degree,
        )
    }
}

impl LyapunovOperator for InverseKernelOperator {
    fn dims(&self) -> (usize, usize) {
        (self.n(), self.m())
    }
    fn interval(&self) -> Interval {
        self.s.interval()
    }
    fn apply_state(&self, z: &StateFunction) -> Result<StateFunction> {
        self.apply(z, &self.rule)
    }
    fn quadratic_form(&self, z: &StateFunction) -> Result<f64> {
        self.value(z, &self.rule)
    }
}

/// Relative agreement demanded between `K` on the given rule and on a finer one.
pub const K_RECHECK_TOL: f64 = 1e-9;

fn k_matrix(op: &SeparableKernelOperator, rule: &QuadratureRule) -> Result<DMatrix<f64>> {
    let m = op.m();
    let qd = (op.degree + 1) * m;
    let mut k = DMatrix::zeros(qd, qd);
    for (s, w) in rule.points() {
        let sinv = checked_inverse(&op.s.eval(s), SingularWhich::SAtNode(s))?;
        for i in 0..=op.degree {
            for j in 0..=op.degree {
                let f = w * s.powi((i + j) as i32);
                let mut blk = k.view_mut((i * m, j * m), (m, m));
                blk += &sinv * f;
            }
        }
    }
    Ok(k)
}

/// Closed-form inverse of a separable operator. `quad` integrates
/// `K = ∫ Z S⁻¹ Zᵀ` when `S` is not constant (the result is cross-checked
/// on a rule with ten more nodes).
pub fn invert_separable(op: &SeparableKernelOperator, quad: &QuadratureRule) -> Result<InverseKernelOperator> {
    let iv = op.interval();
    let r = iv.r();
    let m = op.m();
    let qd = (op.degree + 1) * m;
    let p_inv = checked_inverse(&op.p, SingularWhich::P)?;

    let (k, s_inv_const) = if op.s.is_constant() {
        let sinv = checked_inverse(&op.s.coeff(0), SingularWhich::SAtNode(0.0))?;
        let mut k = DMatrix::zeros(qd, qd);
        for i in 0..=op.degree {
            for j in 0..=op.degree {
                k.view_mut((i * m, j * m), (m, m)).copy_from(&(&sinv * iv.monomial_integral(i + j)));
            }
        }
        (k, Some(sinv))
    } else {
        let k = k_matrix(op, quad)?;
        let fine = k_matrix(op, &gauss_rule(quad.len() + 10, iv))?;
        let diff = (&k - &fine).norm() / k.norm().max(f64::MIN_POSITIVE);
        if diff > K_RECHECK_TOL {
            return Err(LkError::QuadratureMismatch { what: "K", difference: diff });
        }
        (k, None)
    };

    let eye = DMatrix::<f64>::identity(qd, qd);
    let k_gamma = &k * &op.gamma;
    let inner = &eye + &k_gamma - &k * op.h.transpose() * &p_inv * &op.h * r;
    let t = checked_inverse(&inner, SingularWhich::TInner)?;
    let ipkg_inv = checked_inverse(&(&eye + &k_gamma), SingularWhich::IPlusKGamma)?;

    let h_hat = -&p_inv * &op.h * &t;
    let n = op.n();
    let p_hat = (DMatrix::identity(n, n) + &p_inv * &op.h * &t * &k * op.h.transpose() * r) * &p_inv;
    let gamma_hat = (t.transpose() * op.h.transpose() * &p_inv * &op.h * r - &op.gamma) * ipkg_inv;

    Ok(InverseKernelOperator {
        p_hat,
        h_hat,
        gamma_hat,
        s: op.s.clone(),
        k,
        t,
        s_inv_const,
        degree: op.degree,
        rule: quad.clone(),
    })
}

/// Largest of `‖𝒫̂𝒫z − z‖` and `‖𝒫𝒫̂z − z‖` over `samples` random unit states.
pub fn composition_residual(
    op: &SeparableKernelOperator,
    inv: &InverseKernelOperator,
    samples: usize,
    quad: &QuadratureRule,
    seed: u64,
) -> Result<f64> {
    let iv = op.interval();
    let errs = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let z = random_state(op.n(), op.m(), iv, 3, &mut rng);
            let a = inv.apply(&op.apply(&z, quad)?, quad)?;
            let b = op.apply(&inv.apply(&z, quad)?, quad)?;
            let ea = state_norm(&StateFunction::combine(1.0, &a, -1.0, &z)?, quad)?;
            let eb = state_norm(&StateFunction::combine(1.0, &b, -1.0, &z)?, quad)?;
            Ok(ea.max(eb))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Largest boundary gap of `𝒫̂z` over random unit states `z ∈ X`.
pub fn inverse_invariance_residual(
    inv: &InverseKernelOperator,
    bd: &BoundaryData,
    samples: usize,
    quad: &QuadratureRule,
    seed: u64,
) -> Result<f64> {
    if bd.c.shape() != (inv.m(), inv.n()) {
        return Err(LkError::DimensionMismatch {
            context: "inverse_invariance_residual",
            left: bd.c.shape(),
            right: (inv.m(), inv.n()),
        });
    }
    let iv = inv.interval();
    let gaps = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let z = random_state_in_domain(bd, iv, &mut rng)?;
            bd.boundary_gap(&inv.apply(&z, quad)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

pub fn apply_operator(op: &dyn LyapunovOperator, z: &StateFunction) -> Result<StateFunction> {
    op.apply_state(z)
}

pub fn lk_value(op: &dyn LyapunovOperator, z: &StateFunction) -> Result<f64> {
    op.quadratic_form(z)
}

pub fn apply_inverse(inv: &InverseKernelOperator, z: &StateFunction, quad: &QuadratureRule) -> Result<StateFunction> {
    inv.apply(z, quad)
}
