//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use lkfsyn::lkoperator::{BoundaryData, SeparableKernelOperator, StateFunction};
use lkfsyn::polyalg::{gauss_rule, Interval, PolyMat1};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn iv(r: f64) -> Interval {
    Interval::new(r).unwrap()
}

pub fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn spd(side: usize, floor: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = uniform(side, side, 1.0, rng);
    &g * g.transpose() / side as f64 + DMatrix::identity(side, side) * floor
}

pub fn sym(side: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = uniform(side, side, scale, rng);
    (&g + g.transpose()) * 0.5
}

/// Random separable operator. With `poly_s` the multiplier is
/// `S₀ + s S₁ + s² S₂` kept well inside the SPD cone on `[-r, 0]`.
pub fn random_separable(n: usize, m: usize, d: usize, r: f64, poly_s: bool, rng: &mut impl Rng) -> SeparableKernelOperator {
    let q = (d + 1) * m;
    let interval = iv(r);
    let p = spd(n, 1.0, rng);
    let h = uniform(n, q, 0.5, rng);
    let gamma = sym(q, 0.3, rng);
    let s = if poly_s {
        let base = spd(m, 1.5, rng);
        let s1 = sym(m, 0.4 / r, rng);
        let s2 = sym(m, 0.4 / (r * r), rng);
        PolyMat1::new(m, m, vec![base, s1, s2], interval).unwrap()
    } else {
        PolyMat1::constant(spd(m, 1.0, rng), interval)
    };
    SeparableKernelOperator::new(p, h, gamma, s, d).unwrap()
}

pub fn random_boundary(n: usize, m: usize, rng: &mut impl Rng) -> BoundaryData {
    let c = uniform(m, n, 1.0, rng);
    let mut d = uniform(m, m, 1.0, rng);
    let rho = lkfsyn::matrix::spectral_radius(&d);
    if rho > 0.0 {
        d *= rng.random_range(0.0..0.8) / rho;
    }
    BoundaryData::new(c, d).unwrap()
}

/// Stacked residuals of the three boundary equalities, computed directly from
/// the kernels without the library's residual routine.
pub fn boundary_equations(op: &SeparableKernelOperator, bd: &BoundaryData) -> DVector<f64> {
    let k = op.to_kernel().unwrap();
    let r = op.interval().r();
    let (c, d) = (&bd.c, &bd.d);
    let mut out: Vec<f64> = Vec::new();
    let e28 = k.q.eval(0.0).transpose() * r + k.s.eval(0.0) * c - c * &k.p - d * k.q.eval(-r).transpose() * r;
    out.extend(e28.iter());
    let deg = op.degree();
    // (29) on enough points to pin a degree-`deg` polynomial
    for j in 0..=deg {
        let s = -r * (j as f64 + 0.5) / (deg as f64 + 1.0);
        let e29 = k.r.eval(0.0, s) - c * k.q.eval(s) - d * k.r.eval(-r, s);
        out.extend(e29.iter());
    }
    let e30 = d * k.s.eval(-r) - k.s.eval(0.0) * d;
    out.extend(e30.iter());
    DVector::from_vec(out)
}

struct Layout {
    n: usize,
    m: usize,
    d: usize,
}

impl Layout {
    fn q(&self) -> usize {
        (self.d + 1) * self.m
    }

    fn count(&self) -> usize {
        let (n, m, q) = (self.n, self.m, self.q());
        n * (n + 1) / 2 + n * q + q * (q + 1) / 2 + (self.d + 1) * m * (m + 1) / 2
    }

    fn build(&self, x: &[f64], interval: Interval) -> SeparableKernelOperator {
        let (n, m, q, d) = (self.n, self.m, self.q(), self.d);
        let mut it = x.iter().copied();
        let mut symm = |side: usize| {
            let mut a = DMatrix::zeros(side, side);
            for j in 0..side {
                for i in 0..=j {
                    let v = it.next().unwrap();
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            a
        };
        let p = symm(n);
        let gamma = symm(q);
        let s: Vec<DMatrix<f64>> = (0..=d).map(|_| symm(m)).collect();
        let h = DMatrix::from_iterator(n, q, it.by_ref().take(n * q));
        SeparableKernelOperator::new(p, h, gamma, PolyMat1::new(m, m, s, interval).unwrap(), d).unwrap()
    }
}

/// Random separable operator satisfying the boundary equalities for `bd`:
/// the identity plus a small random element of the null space of the
/// (linear) equality map. Returns the operator and its equality residual.
pub fn random_invariant_operator(bd: &BoundaryData, d: usize, r: f64, rng: &mut impl Rng) -> (SeparableKernelOperator, f64) {
    let (m, n) = bd.c.shape();
    let layout = Layout { n, m, d };
    let interval = iv(r);
    let dim = layout.count();
    let zero = boundary_equations(&layout.build(&vec![0.0; dim], interval), bd);
    let mut a = DMatrix::zeros(zero.len(), dim);
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        let col = boundary_equations(&layout.build(&e, interval), bd) - &zero;
        a.set_column(k, &col);
    }
    let eig = (a.transpose() * &a).symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.amax().max(1.0);
    let mut x = DVector::zeros(dim);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= tol {
            x += eig.eigenvectors.column(k) * rng.random_range(-1.0..1.0);
        }
    }
    if x.norm() > 0.0 {
        x *= 0.3 / x.norm();
    }
    let base = SeparableKernelOperator::new(
        DMatrix::identity(n, n),
        DMatrix::zeros(n, layout.q()),
        DMatrix::zeros(layout.q(), layout.q()),
        PolyMat1::constant(DMatrix::identity(m, m), interval),
        d,
    )
    .unwrap();
    let pert = layout.build(x.as_slice(), interval);
    let mut s = pert.s.clone();
    s = s.add(&base.s).unwrap();
    let op = SeparableKernelOperator::new(&pert.p + &base.p, pert.h.clone(), pert.gamma.clone(), s, d).unwrap();
    let residual = boundary_equations(&op, bd).amax();
    (op, residual)
}

/// Nyström discretisation of an operator on a Gauss grid: returns the matrix
/// acting on `(ψ, φ(s_k))` and the grid.
pub fn nystrom(op: &SeparableKernelOperator, nodes: usize) -> (DMatrix<f64>, Vec<f64>) {
    let k = op.to_kernel().unwrap();
    let (n, m) = (op.n(), op.m());
    let rule = gauss_rule(nodes, op.interval());
    let pts: Vec<(f64, f64)> = rule.points().collect();
    let r = op.interval().r();
    let size = n + m * nodes;
    let mut a = DMatrix::zeros(size, size);
    a.view_mut((0, 0), (n, n)).copy_from(&k.p);
    for (j, &(t, w)) in pts.iter().enumerate() {
        a.view_mut((0, n + j * m), (n, m)).copy_from(&(k.q.eval(t) * w));
    }
    for (i, &(s, _)) in pts.iter().enumerate() {
        a.view_mut((n + i * m, 0), (m, n)).copy_from(&(k.q.eval(s).transpose() * r));
        for (j, &(t, w)) in pts.iter().enumerate() {
            let mut blk = k.r.eval(s, t) * w;
            if i == j {
                blk += k.s.eval(s);
            }
            a.view_mut((n + i * m, n + j * m), (m, m)).copy_from(&blk);
        }
    }
    (a, pts.iter().map(|p| p.0).collect())
}

pub fn discretise(z: &StateFunction, grid: &[f64]) -> DVector<f64> {
    let (n, m) = (z.n(), z.m());
    let mut v = DVector::zeros(n + m * grid.len());
    v.rows_mut(0, n).copy_from(&z.psi);
    for (i, &s) in grid.iter().enumerate() {
        v.rows_mut(n + i * m, m).copy_from(&z.phi_at(s).unwrap());
    }
    v
}
