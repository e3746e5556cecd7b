//! Log-barrier path following for `max cᵀx` over `box ∩ {aᵀx + β‖x‖_W ≤ C}`.
//!
//! The cone constraint enters as `−ln((C − aᵀx)² − β²xᵀWx)` restricted to
//! `C − aᵀx > 0`, each box face as `−ln` of its slack. Newton's method is
//! affine invariant, so an ill-conditioned `W` only costs linear-solve
//! precision, not iterations.

use nalgebra::{DMatrix, DVector};

use super::{BoxSet, SocConstraint};

const GROWTH: f64 = 16.0;
const MAX_NEWTON: usize = 80;
const MAX_OUTER: usize = 40;
const CENTERING_TOL: f64 = 1e-11;

pub(super) struct BarrierPoint {
    /// Strictly feasible central point.
    pub x: DVector<f64>,
    /// Suboptimality bound `ν/t` of `x`.
    pub gap: f64,
    /// Multiplier estimate for the cone constraint.
    pub dual: f64,
    pub newton_steps: usize,
}

struct Barrier<'a> {
    c: &'a DVector<f64>,
    con: &'a SocConstraint<'a>,
    bounds: &'a BoxSet,
}

impl Barrier<'_> {
    /// `(C − aᵀx, (C − aᵀx)² − β²xᵀWx, Wx)` or `None` outside the domain.
    fn slacks(&self, x: &DVector<f64>) -> Option<(f64, f64, DVector<f64>)> {
        for i in 0..x.len() {
            if !(x[i] > self.bounds.lower[i] && x[i] < self.bounds.upper[i]) {
                return None;
            }
        }
        let s = self.con.level - self.con.direction.dot(x);
        let wx = self.con.metric * x;
        let g = s * s - self.con.radius.powi(2) * x.dot(&wx);
        (s > 0.0 && g > 0.0).then_some((s, g, wx))
    }

    fn objective(&self, t: f64, x: &DVector<f64>) -> Option<f64> {
        let (_, g, _) = self.slacks(x)?;
        let mut f = -t * self.c.dot(x) - g.ln();
        for i in 0..x.len() {
            f -= (self.bounds.upper[i] - x[i]).ln() + (x[i] - self.bounds.lower[i]).ln();
        }
        Some(f)
    }

    /// Newton direction and squared decrement at a domain point.
    fn newton(&self, t: f64, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        let (s, g, wx) = self.slacks(x)?;
        let a = &self.con.direction;
        let b2 = self.con.radius.powi(2);
        // ∇g = −2sa − 2β²Wx,  ∇²g = 2aaᵀ − 2β²W
        let dg = a * (-2.0 * s) - &wx * (2.0 * b2);
        let mut grad = self.c * (-t) - &dg / g;
        let mut hess: DMatrix<f64> = &dg * dg.transpose() / (g * g);
        hess += (self.con.metric * (2.0 * b2) - a * a.transpose() * 2.0) / g;
        for i in 0..x.len() {
            let up = self.bounds.upper[i] - x[i];
            let lo = x[i] - self.bounds.lower[i];
            grad[i] += 1.0 / up - 1.0 / lo;
            hess[(i, i)] += 1.0 / (up * up) + 1.0 / (lo * lo);
        }
        let step = hess.cholesky()?.solve(&(-&grad));
        let decrement = -grad.dot(&step);
        (decrement.is_finite() && step.iter().all(|v| v.is_finite())).then_some((step, decrement))
    }

    fn center(&self, t: f64, x: &mut DVector<f64>, steps: &mut usize) -> Option<()> {
        for _ in 0..MAX_NEWTON {
            let (dx, dec) = self.newton(t, x)?;
            if dec <= 2.0 * CENTERING_TOL {
                return Some(());
            }
            *steps += 1;
            let f0 = self.objective(t, x)?;
            let mut alpha = 1.0;
            loop {
                let y = &*x + &dx * alpha;
                if let Some(f) = self.objective(t, &y) {
                    if f <= f0 - 0.25 * alpha * dec {
                        *x = y;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    // no progress is representable; the point is as central as it gets
                    return Some(());
                }
            }
        }
        Some(())
    }
}

/// Central-path point with `ν/t ≤ target`, or `None` when the box is
/// degenerate or a Newton system is not positive definite.
pub(super) fn barrier_solve(
    c: &DVector<f64>,
    con: &SocConstraint<'_>,
    bounds: &BoxSet,
    target: f64,
) -> Option<BarrierPoint> {
    let n = c.len();
    if (0..n).any(|i| bounds.upper[i] <= bounds.lower[i]) {
        return None;
    }
    let problem = Barrier { c, con, bounds };
    let mid = (&bounds.lower + &bounds.upper) * 0.5;
    let load = con.level - con.margin(&mid);
    let mut x = if load > 0.5 * con.level { mid * (0.5 * con.level / load) } else { mid };
    problem.slacks(&x)?;

    let nu = 2.0 + 2.0 * n as f64;
    let spread = (c.dot(&bounds.corner_for(c)) - c.dot(&x)).max(f64::MIN_POSITIVE);
    let mut t = nu / spread;
    let mut steps = 0;
    for _ in 0..MAX_OUTER {
        problem.center(t, &mut x, &mut steps)?;
        if nu / t <= target * (1.0 + c.dot(&x).abs()) {
            let (s, g, _) = problem.slacks(&x)?;
            let cone = s - (s * s - g).max(0.0).sqrt();
            return Some(BarrierPoint { x, gap: nu / t, dual: 1.0 / (t * cone), newton_steps: steps });
        }
        t *= GROWTH;
    }
    None
}
