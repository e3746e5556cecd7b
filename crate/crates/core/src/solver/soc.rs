//! Linear maximization over a box cut by one second-order-cone constraint.
//!
//! The primary path is a log-barrier Newton solve followed by a push toward
//! the box corner along a segment of increasing objective. When the barrier
//! cannot run (a degenerate box face, or a Newton system that is numerically
//! indefinite) the solver falls back to Lagrangian dual bisection.
//!
//! In the fallback the Lagrangian `cᵀx − λ(aᵀx + β‖x‖_W − C)` is maximized over the box for a
//! fixed multiplier by projected gradient ascent with a backtracking line
//! search; the multiplier is then located by bisection on the sign of the
//! constraint margin. The inner objective is positively homogeneous, so near
//! the optimal multiplier its maximizer can jump along a ray (or between box
//! faces); the final feasible/infeasible pair is therefore polished by a
//! search along the segment joining them, which recovers the boundary point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::barrier::barrier_solve;
use super::{linear_max_single_linear_constraint, BoxSet, SocConstraint};
use crate::error::{ensure_dim, ensure_finite, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const MAX_BISECTION_STEPS: usize = 60;

const MAX_INNER_ITERS: usize = 5000;
const MAX_BACKTRACKS: usize = 60;
const MAX_DOUBLINGS: usize = 200;
const SEGMENT_STEPS: usize = 60;
/// Barrier target gap relative to `tol`.
const BARRIER_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSolution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Constraint margin at `x`; never negative.
    pub margin: f64,
    /// Final dual multiplier (0 when the constraint is inactive).
    pub dual: f64,
    /// Certified upper bound on the optimum minus `value`.
    pub gap: f64,
    /// Newton steps on the barrier path, or bisection steps in the fallback.
    pub iterations: usize,
}

/// Dense small-dimension kernel for `f(x) = qᵀx − κ‖x‖_W` on a box.
struct Penalized<'a> {
    q: Vec<f64>,
    kappa: f64,
    w: &'a [f64],
    lower: &'a [f64],
    upper: &'a [f64],
}

impl Penalized<'_> {
    fn n(&self) -> usize {
        self.q.len()
    }

    fn w_norm(&self, x: &[f64], wx: &mut [f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            let s: f64 = self.w[i * n..(i + 1) * n].iter().zip(x).map(|(w, v)| w * v).sum();
            wx[i] = s;
            acc += s * x[i];
        }
        acc.max(0.0).sqrt()
    }

    fn value(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let lin: f64 = self.q.iter().zip(x).map(|(a, b)| a * b).sum();
        if self.kappa == 0.0 {
            lin
        } else {
            lin - self.kappa * self.w_norm(x, scratch)
        }
    }

    fn gradient(&self, x: &[f64], g: &mut [f64], scratch: &mut [f64]) {
        let norm = self.w_norm(x, scratch);
        for i in 0..self.n() {
            // subgradient 0 for the norm term at the origin
            g[i] = if norm > 1e-300 { self.q[i] - self.kappa * scratch[i] / norm } else { self.q[i] };
        }
    }

    fn corner(&self) -> Vec<f64> {
        (0..self.n()).map(|i| if self.q[i] >= 0.0 { self.upper[i] } else { self.lower[i] }).collect()
    }

    fn maximize(&self) -> Vec<f64> {
        let n = self.n();
        let mut x = self.corner();
        if self.kappa == 0.0 {
            return x;
        }
        let mut scratch = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut fx = self.value(&x, &mut scratch);
        let extent = (0..n).map(|i| self.upper[i] - self.lower[i]).fold(0.0, f64::max);
        let mut step = f64::NAN;

        for _ in 0..MAX_INNER_ITERS {
            self.gradient(&x, &mut g, &mut scratch);
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm == 0.0 {
                break;
            }
            if !step.is_finite() {
                step = extent / gnorm;
            }
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut moved = 0.0;
                let mut lin = 0.0;
                for i in 0..n {
                    y[i] = (x[i] + step * g[i]).clamp(self.lower[i], self.upper[i]);
                    let d = y[i] - x[i];
                    moved += d * d;
                    lin += g[i] * d;
                }
                if moved == 0.0 {
                    break;
                }
                let fy = self.value(&y, &mut scratch);
                if fy >= fx + lin - moved / (2.0 * step) - 1e-15 * (1.0 + fx.abs()) {
                    accepted = Some(fy);
                    break;
                }
                step *= 0.5;
            }
            let Some(fy) = accepted else { break };
            let change = fy - fx;
            x.copy_from_slice(&y);
            fx = fy;
            if change.abs() <= 1e-13 * (1.0 + fx.abs()) {
                break;
            }
            step *= 2.0;
        }
        if fx < 0.0 {
            // f(0) = 0 and the maximizer may sit at the kink
            x.iter_mut().for_each(|v| *v = 0.0);
        }
        x
    }
}

fn inner_solve(c: &DVector<f64>, con: &SocConstraint<'_>, lam: f64, bounds: &BoxSet) -> DVector<f64> {
    let n = c.len();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = con.metric[(i, j)];
        }
    }
    let problem = Penalized {
        q: (0..n).map(|i| c[i] - lam * con.direction[i]).collect(),
        kappa: lam * con.radius,
        w: &w,
        lower: bounds.lower.as_slice(),
        upper: bounds.upper.as_slice(),
    };
    DVector::from_vec(problem.maximize())
}

fn validate(c: &DVector<f64>, con: &SocConstraint<'_>, bounds: &BoxSet) -> Result<()> {
    ensure_dim(bounds.dim(), c.len())?;
    ensure_dim(bounds.dim(), con.dim())?;
    ensure_finite(c.as_slice(), "objective")
}

/// Maximizer over the box of `cᵀx − λ(aᵀx + β‖x‖_{V⁻¹} − C)` for a fixed `λ ≥ 0`.
pub fn penalized_inner_max(
    c: &DVector<f64>,
    con: &SocConstraint<'_>,
    lam_dual: f64,
    bounds: &BoxSet,
) -> Result<DVector<f64>> {
    validate(c, con, bounds)?;
    if !(lam_dual >= 0.0 && lam_dual.is_finite()) {
        return Err(Error::InvalidParameter(format!("dual multiplier must be nonnegative, got {lam_dual}")));
    }
    Ok(inner_solve(c, con, lam_dual, bounds))
}

/// Scales `x` toward the origin until the margin is nonnegative. The margin
/// is affine along the ray, `m(sx) = C − s(aᵀx + β‖x‖)`, so this is exact.
fn back_off(x: DVector<f64>, con: &SocConstraint<'_>) -> DVector<f64> {
    let m = con.margin(&x);
    if m >= 0.0 {
        return x;
    }
    let load = con.level - m;
    let mut s = con.level / load;
    let mut y = &x * s;
    let mut shrink = f64::EPSILON;
    while con.margin(&y) < 0.0 {
        s *= 1.0 - shrink;
        shrink *= 2.0;
        y = &x * s;
    }
    y
}

/// Largest feasible point on the segment from `feasible` toward `infeasible`.
fn segment_boundary(feasible: &DVector<f64>, infeasible: &DVector<f64>, con: &SocConstraint<'_>) -> DVector<f64> {
    let dir = infeasible - feasible;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..SEGMENT_STEPS {
        let mid = 0.5 * (lo + hi);
        if con.margin(&(feasible + &dir * mid)) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    feasible + dir * lo
}

struct Tracker {
    best: DVector<f64>,
    best_value: f64,
    upper_bound: f64,
}

impl Tracker {
    fn offer(&mut self, x: DVector<f64>, c: &DVector<f64>, con: &SocConstraint<'_>) {
        if con.margin(&x) < 0.0 {
            return;
        }
        let v = c.dot(&x);
        if v > self.best_value {
            self.best_value = v;
            self.best = x;
        }
    }

    fn gap(&self) -> f64 {
        (self.upper_bound - self.best_value).max(0.0)
    }
}

/// Maximizer of `cᵀx` over `box ∩ {aᵀx + β‖x‖_{V⁻¹} ≤ C}`.
///
/// Returns early with the sign-matched corner when it is feasible, and with
/// the exact knapsack solution when β = 0. Otherwise follows the barrier path
/// to a relative gap of `tol·1e-3`, falling back to [`dual_bisection`]. The
/// returned point always satisfies the box and has a nonnegative margin.
pub fn safe_linear_max(c: &DVector<f64>, con: &SocConstraint<'_>, bounds: &BoxSet, tol: f64) -> Result<SafeSolution> {
    validate(c, con, bounds)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let done = |x: DVector<f64>, dual: f64, gap: f64, steps: usize| {
        let value = c.dot(&x);
        let margin = con.margin(&x);
        SafeSolution { x, value, margin, dual, gap, iterations: steps }
    };

    if con.radius == 0.0 {
        let (x, _) = linear_max_single_linear_constraint(c, &con.direction, con.level, bounds)?;
        return Ok(done(back_off(x, con), 0.0, 0.0, 0));
    }
    let corner = bounds.corner_for(c);
    if con.margin(&corner) >= 0.0 {
        return Ok(done(corner, 0.0, 0.0, 0));
    }
    if c.iter().all(|&v| v == 0.0) {
        return Ok(done(DVector::zeros(c.len()), 0.0, 0.0, 0));
    }
    if let Some(p) = barrier_solve(c, con, bounds, BARRIER_GAP * tol) {
        let bound = c.dot(&p.x) + p.gap;
        let mut track = Tracker { best: DVector::zeros(c.len()), best_value: 0.0, upper_bound: bound };
        track.offer(segment_boundary(&p.x, &corner, con), c, con);
        track.offer(p.x, c, con);
        let gap = track.gap();
        return Ok(done(back_off(track.best, con), p.dual, gap, p.newton_steps));
    }
    dual_bisection(c, con, bounds, tol)
}

/// The bisection path of [`safe_linear_max`], for a constraint whose
/// sign-matched corner is infeasible.
pub fn dual_bisection(c: &DVector<f64>, con: &SocConstraint<'_>, bounds: &BoxSet, tol: f64) -> Result<SafeSolution> {
    validate(c, con, bounds)?;
    let done = |x: DVector<f64>, dual: f64, gap: f64, steps: usize| {
        let value = c.dot(&x);
        let margin = con.margin(&x);
        SafeSolution { x, value, margin, dual, gap, iterations: steps }
    };
    let corner = bounds.corner_for(c);
    if con.margin(&corner) >= 0.0 {
        return Ok(done(corner, 0.0, 0.0, 0));
    }

    // g(λ) = λC + max_box [(c − λa)ᵀx − λβ‖x‖] bounds the optimum from above.
    let dual_value = |lam: f64, x: &DVector<f64>| c.dot(x) + lam * con.margin(x);
    let mut track = Tracker { best: DVector::zeros(c.len()), best_value: 0.0, upper_bound: dual_value(0.0, &corner) };

    let (mut lo, mut x_lo) = (0.0, corner);
    let mut hi = 1.0;
    let mut x_hi = inner_solve(c, con, hi, bounds);
    let mut doublings = 0;
    while con.margin(&x_hi) < 0.0 {
        track.upper_bound = track.upper_bound.min(dual_value(hi, &x_hi));
        lo = hi;
        x_lo = x_hi;
        hi *= 2.0;
        x_hi = inner_solve(c, con, hi, bounds);
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::SolverNotConverged { best: DVector::zeros(c.len()), value: 0.0, gap: f64::INFINITY });
        }
    }
    track.upper_bound = track.upper_bound.min(dual_value(hi, &x_hi));
    track.offer(x_hi.clone(), c, con);
    track.offer(segment_boundary(&x_hi, &x_lo, con), c, con);

    let gap_tol = |v: f64| tol * (1.0 + v.abs());
    let mut steps = 0;
    let mut converged = track.gap() <= gap_tol(track.best_value);
    while !converged && steps < MAX_BISECTION_STEPS {
        steps += 1;
        let mid = 0.5 * (lo + hi);
        let x_mid = inner_solve(c, con, mid, bounds);
        let m = con.margin(&x_mid);
        track.upper_bound = track.upper_bound.min(dual_value(mid, &x_mid));
        if m >= 0.0 {
            hi = mid;
            x_hi = x_mid;
            track.offer(x_hi.clone(), c, con);
            if m <= tol {
                converged = true;
            }
        } else {
            lo = mid;
            x_lo = x_mid;
        }
        track.offer(segment_boundary(&x_hi, &x_lo, con), c, con);
        converged |= track.gap() <= gap_tol(track.best_value);
    }

    let gap = track.gap();
    if !converged && gap > gap_tol(track.best_value).sqrt() {
        return Err(Error::SolverNotConverged { best: track.best, value: track.best_value, gap });
    }
    Ok(done(back_off(track.best, con), hi, gap, steps))
}
