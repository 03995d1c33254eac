//! Fixed-step simulation of
//!
//! ```text
//! ẋ(t) = A x(t) + B y(t−r) + ∫ H(θ) y(t+θ) dθ + F u(t)
//! y(t) = C x(t) + D y(t−r)
//! ```
//!
//! by RK4 on `x` with the step tied to `r/N`, so every delayed lookup at a step
//! boundary lands on a stored node. Half-step lookups use linear
//! interpolation and distributed terms the trapezoid rule on the node grid.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LkError, Result};
use crate::lkoperator::{uniform_grid, LyapunovOperator, StateFunction};
use crate::matrix::serde_mat;
use crate::polyalg::{Interval, PolyMat1};

pub use crate::matrix::spectral_radius;

/// The plant; `F` (input map) and `H` (distributed kernel) are optional.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f: Option<DMatrix<f64>>,
    pub h: Option<PolyMat1>,
    pub interval: Interval,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, interval: Interval) -> Result<Self> {
        let n = a.nrows();
        let m = d.nrows();
        let checks = [
            ("A", a.shape(), (n, n)),
            ("B", b.shape(), (n, m)),
            ("C", c.shape(), (m, n)),
            ("D", d.shape(), (m, m)),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(LkError::InvalidArgument(format!("{what} has shape {got:?}, expected {want:?}")));
            }
        }
        Ok(PlantModel { a, b, c, d, f: None, h: None, interval })
    }

    pub fn with_input(mut self, f: DMatrix<f64>) -> Result<Self> {
        if f.nrows() != self.n() {
            return Err(LkError::InvalidArgument(format!("F has {} rows, expected {}", f.nrows(), self.n())));
        }
        self.f = Some(f);
        Ok(self)
    }

    pub fn with_distributed(mut self, h: PolyMat1) -> Result<Self> {
        if h.shape() != (self.n(), self.m()) {
            return Err(LkError::DimensionMismatch { context: "distributed kernel", left: h.shape(), right: (self.n(), self.m()) });
        }
        self.h = Some(h);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.d.nrows()
    }

    /// Number of inputs (0 without `F`).
    pub fn p(&self) -> usize {
        self.f.as_ref().map_or(0, |f| f.ncols())
    }
}

/// `u(t) = K₀x(t) + K₁y(t−r) + ∫ K₂(s) y(t+s) ds`.
pub trait StateFeedback: Sync {
    fn k0(&self) -> &DMatrix<f64>;
    fn k1(&self) -> &DMatrix<f64>;
    fn k2_at(&self, s: f64) -> Result<DMatrix<f64>>;
}

/// Feedback with polynomial `K₂`, e.g. published gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFeedback {
    #[serde(rename = "K0", with = "serde_mat")]
    pub k0: DMatrix<f64>,
    #[serde(rename = "K1", with = "serde_mat")]
    pub k1: DMatrix<f64>,
    /// Coefficients of `K₂`, lowest degree first.
    #[serde(rename = "K2_coeffs")]
    pub k2: Vec<Vec<Vec<f64>>>,
}

impl PolynomialFeedback {
    pub fn new(k0: DMatrix<f64>, k1: DMatrix<f64>, k2: &[DMatrix<f64>]) -> Self {
        PolynomialFeedback { k0, k1, k2: k2.iter().map(crate::matrix::to_rows).collect() }
    }
}

impl StateFeedback for PolynomialFeedback {
    fn k0(&self) -> &DMatrix<f64> {
        &self.k0
    }
    fn k1(&self) -> &DMatrix<f64> {
        &self.k1
    }
    fn k2_at(&self, s: f64) -> Result<DMatrix<f64>> {
        let (p, m) = self.k1.shape();
        let mut acc = DMatrix::zeros(p, m);
        for c in self.k2.iter().rev() {
            acc *= s;
            acc += crate::matrix::from_rows_shaped(c, p, m)?;
        }
        Ok(acc)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(serialize_with = "ser_vecs")]
    pub x: Vec<DVector<f64>>,
    #[serde(serialize_with = "ser_vecs")]
    pub y: Vec<DVector<f64>>,
    #[serde(serialize_with = "ser_vecs")]
    pub u: Vec<DVector<f64>>,
    pub v: Option<Vec<f64>>,
    /// `y` on the initial interval at `t = −r, …, −dt` (`N` values).
    #[serde(serialize_with = "ser_vecs")]
    pub history: Vec<DVector<f64>>,
    pub dt: f64,
    pub steps_per_delay: usize,
    #[serde(skip)]
    pub interval: Interval,
}

fn ser_vecs<S: serde::Serializer>(v: &[DVector<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    v.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>().serialize(s)
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `y` at node `j` (negative indices reach into the initial history).
    pub fn y_node(&self, j: isize) -> &DVector<f64> {
        if j >= 0 {
            &self.y[j as usize]
        } else {
            &self.history[(self.steps_per_delay as isize + j) as usize]
        }
    }

    /// The state `(x(t_j), y_{t_j})` as a sampled element of `Z`.
    pub fn state_at(&self, j: usize) -> Result<StateFunction> {
        let n = self.steps_per_delay;
        let grid = uniform_grid(self.interval, n + 1);
        let values = (0..=n).map(|k| self.y_node(j as isize - n as isize + k as isize).clone()).collect();
        StateFunction::sampled(self.x[j].clone(), grid, values, self.interval)
    }

    /// `max ‖y(t) − Cx(t) − Dy(t−r)‖` over stored times.
    pub fn constraint_residual(&self, plant: &PlantModel) -> f64 {
        let n = self.steps_per_delay as isize;
        (0..self.len())
            .map(|j| (&self.y[j] - &plant.c * &self.x[j] - &plant.d * self.y_node(j as isize - n)).norm())
            .fold(0.0, f64::max)
    }

    /// Largest `|x_i|` over the whole run and at the final time.
    pub fn decay_ratio(&self) -> f64 {
        let peak = self.x.iter().map(|x| x.amax()).fold(0.0, f64::max);
        let last = self.x.last().map_or(0.0, |x| x.amax());
        if peak == 0.0 {
            0.0
        } else {
            last / peak
        }
    }

    /// CSV `t,x_1..,y_1..,u_1..,V` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let (n, m, p) = (
            self.x.first().map_or(0, |v| v.len()),
            self.y.first().map_or(0, |v| v.len()),
            self.u.first().map_or(0, |v| v.len()),
        );
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",y{i}");
        }
        for i in 1..=p {
            let _ = write!(out, ",u{i}");
        }
        out.push_str(",V\n");
        for j in 0..self.len() {
            let _ = write!(out, "{:.16e}", self.times[j]);
            for v in self.x[j].iter().chain(self.y[j].iter()).chain(self.u[j].iter()) {
                let _ = write!(out, ",{v:.16e}");
            }
            match &self.v {
                Some(vs) => {
                    let _ = writeln!(out, ",{:.16e}", vs[j]);
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }

    /// Gnuplot script plotting the states from `csv_name`.
    pub fn plot_script(&self, csv_name: &str, title: &str) -> String {
        let n = self.x.first().map_or(0, |v| v.len());
        let mut s = String::new();
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set key autotitle columnhead");
        let _ = writeln!(s, "set title '{title}'");
        let _ = writeln!(s, "set xlabel 't'");
        let _ = writeln!(s, "set grid");
        let cols: Vec<String> = (0..n).map(|i| format!("'{csv_name}' using 1:{} with lines", i + 2)).collect();
        let _ = writeln!(s, "plot {}", cols.join(", \\\n     "));
        s
    }
}

/// Number of steps per delay interval; `dt` must divide `r`.
pub fn steps_per_delay(r: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LkError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let n = (r / dt).round();
    if n < 1.0 || ((r / dt) - n).abs() > 1e-9 * n.max(1.0) {
        return Err(LkError::InvalidArgument(format!("dt = {dt} does not divide r = {r}")));
    }
    Ok(n as usize)
}

struct Weights {
    trap: Vec<f64>,
    k2: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
}

/// Runs the plant from `(ψ, φ)`; `φ(0)` need not equal `Cψ + Dφ(−r)`, the
/// recorded `y(0)` always satisfies the difference equation.
pub fn simulate(
    plant: &PlantModel,
    controller: Option<&dyn StateFeedback>,
    init: &StateFunction,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    if init.n() != n || init.m() != m {
        return Err(LkError::DimensionMismatch { context: "initial state", left: (init.n(), init.m()), right: (n, m) });
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(LkError::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    let r = plant.interval.r();
    let big_n = steps_per_delay(r, dt)?;
    let h = r / big_n as f64;
    let steps = (t_end / h).round().max(1.0) as usize;
    if let Some(k) = controller {
        if k.k0().shape() != (p, n) || k.k1().shape() != (p, m) {
            return Err(LkError::DimensionMismatch { context: "controller gains", left: k.k0().shape(), right: (p, n) });
        }
    }

    let nodes: Vec<f64> = (0..=big_n).map(|k| -(k as f64) * h).collect();
    let mut trap = vec![h; big_n + 1];
    trap[0] = 0.5 * h;
    trap[big_n] = 0.5 * h;
    let weights = Weights {
        k2: match controller {
            Some(k) => nodes.iter().map(|&s| k.k2_at(s)).collect::<Result<_>>()?,
            None => Vec::new(),
        },
        h: plant.h.as_ref().map_or_else(Vec::new, |hk| nodes.iter().map(|&s| hk.eval(s)).collect()),
        trap,
    };

    let history: Vec<DVector<f64>> =
        (0..big_n).map(|k| init.phi_at(-r + k as f64 * h)).collect::<Result<_>>()?;
    let mut ys: Vec<DVector<f64>> = history.clone();
    let x0 = init.psi.clone();
    let y0 = &plant.c * &x0 + &plant.d * &ys[0];
    ys.push(y0);
    // ys[big_n + j] = y(t_j)

    let mut xs = vec![x0];
    let mut us = Vec::with_capacity(steps + 1);
    let mut times = vec![0.0];

    // y(t_j + c h − s_k) for the trapezoid, with the newest value supplied.
    let delayed_sum = |ys: &[DVector<f64>], j: usize, half: bool, newest: &DVector<f64>, kern: &[DMatrix<f64>], rows: usize| {
        let mut acc = DVector::zeros(rows);
        for k in 0..=big_n {
            let w = weights.trap[k];
            let yv = if k == 0 {
                newest.clone()
            } else if half {
                (&ys[big_n + j - k] + &ys[big_n + j - k + 1]) * 0.5
            } else {
                ys[big_n + j + 1 - k].clone()
            };
            acc += &kern[k] * yv * w;
        }
        acc
    };

    let eval = |ys: &[DVector<f64>], j: usize, stage: u8, x: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        // stage 0: t_j, 1: t_j + h/2, 2: t_j + h
        let y_delay = match stage {
            0 => ys[j].clone(),
            1 => (&ys[j] + &ys[j + 1]) * 0.5,
            _ => ys[j + 1].clone(),
        };
        let y_now = if stage == 0 { ys[big_n + j].clone() } else { &plant.c * x + &plant.d * &y_delay };
        let integral = |kern: &[DMatrix<f64>], rows: usize| match stage {
            0 => {
                let mut acc = DVector::zeros(rows);
                for k in 0..=big_n {
                    acc += &kern[k] * &ys[big_n + j - k] * weights.trap[k];
                }
                acc
            }
            1 => delayed_sum(ys, j, true, &y_now, kern, rows),
            _ => delayed_sum(ys, j, false, &y_now, kern, rows),
        };
        let u = match controller {
            Some(k) => k.k0() * x + k.k1() * &y_delay + integral(&weights.k2, p),
            None => DVector::zeros(p),
        };
        let mut dx = &plant.a * x + &plant.b * &y_delay;
        if !weights.h.is_empty() {
            dx += integral(&weights.h, n);
        }
        if let Some(f) = &plant.f {
            dx += f * &u;
        }
        (dx, u)
    };

    for j in 0..steps {
        let x = &xs[j];
        let (k1, u) = eval(&ys, j, 0, x);
        us.push(u);
        let (k2, _) = eval(&ys, j, 1, &(x + &k1 * (0.5 * h)));
        let (k3, _) = eval(&ys, j, 1, &(x + &k2 * (0.5 * h)));
        let (k4, _) = eval(&ys, j, 2, &(x + &k3 * h));
        let x_next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t = (j + 1) as f64 * h;
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(LkError::NonFiniteState { t });
        }
        let y_next = &plant.c * &x_next + &plant.d * &ys[j + 1];
        if y_next.iter().any(|v| !v.is_finite()) {
            return Err(LkError::NonFiniteState { t });
        }
        ys.push(y_next);
        xs.push(x_next);
        times.push(t);
    }
    let last = xs.len() - 1;
    let (_, u_last) = eval(&ys, last, 0, &xs[last]);
    us.push(u_last);

    let y = ys.split_off(big_n);
    Ok(Trajectory { times, x: xs, y, u: us, v: None, history, dt: h, steps_per_delay: big_n, interval: plant.interval })
}

/// Lyapunov values along a run and their finite-difference slope.
#[derive(Clone, Debug, Serialize)]
pub struct VSeries {
    pub values: Vec<f64>,
    /// Central differences inside, one-sided at the ends.
    pub slope: Vec<f64>,
}

impl VSeries {
    pub fn max_interior_slope(&self) -> f64 {
        let n = self.slope.len();
        if n < 3 {
            return f64::NEG_INFINITY;
        }
        self.slope[1..n - 1].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn evaluate_v_along(traj: &Trajectory, op: &dyn LyapunovOperator) -> Result<VSeries> {
    let n = traj.x.first().map_or(0, |v| v.len());
    let m = traj.y.first().map_or(0, |v| v.len());
    if op.dims() != (n, m) {
        return Err(LkError::DimensionMismatch { context: "evaluate_V_along", left: op.dims(), right: (n, m) });
    }
    if op.interval().r() != traj.interval.r() {
        return Err(LkError::IntervalMismatch(op.interval().r(), traj.interval.r()));
    }
    let values = (0..traj.len())
        .into_par_iter()
        .map(|j| op.quadratic_form(&traj.state_at(j)?))
        .collect::<Result<Vec<f64>>>()?;
    let h = traj.dt;
    let len = values.len();
    let slope = (0..len)
        .map(|j| {
            if len < 2 {
                0.0
            } else if j == 0 {
                (values[1] - values[0]) / h
            } else if j == len - 1 {
                (values[len - 1] - values[len - 2]) / h
            } else {
                (values[j + 1] - values[j - 1]) / (2.0 * h)
            }
        })
        .collect();
    Ok(VSeries { values, slope })
}

/// Attaches `V` values to a trajectory.
pub fn with_v(mut traj: Trajectory, series: &VSeries) -> Trajectory {
    traj.v = Some(series.values.clone());
    traj
}
