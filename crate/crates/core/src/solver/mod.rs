//! Safe action selection.
//!
//! The estimated safe set is `{x ∈ box : aᵀx + β‖x‖_{V⁻¹} ≤ C}`, a box cut by
//! one second-order cone. Maximizing a linear objective over it is handled by
//! [`safe_linear_max`] (log-barrier Newton, with Lagrangian dual bisection as
//! the fallback); the β = 0 case reduces to a continuous knapsack solved
//! exactly by [`linear_max_single_linear_constraint`]. [`grid_oracle`] is the brute-force
//! reference used by the tests and the verification suite.

mod barrier;
mod grid;
mod knapsack;
mod lucb;
mod soc;

pub use grid::{grid_oracle, GRID_WARN_DIM};
pub use knapsack::linear_max_single_linear_constraint;
pub use lucb::{lucb_vertex_argmax, LucbChoice};
pub use soc::{dual_bisection, penalized_inner_max, safe_linear_max, SafeSolution, DEFAULT_TOL, MAX_BISECTION_STEPS};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::linalg::{quad_form, RlsState};

/// Axis-aligned action box containing the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        ensure_dim(lower.len(), upper.len())?;
        ensure_finite(lower.as_slice(), "box lower bound")?;
        ensure_finite(upper.as_slice(), "box upper bound")?;
        if lower.is_empty() {
            return Err(Error::InvalidParameter("box must have positive dimension".into()));
        }
        for (l, u) in lower.iter().zip(upper.iter()) {
            if l > u {
                return Err(Error::InvalidParameter(format!("box bound {l} exceeds {u}")));
            }
            if *l > 0.0 || *u < 0.0 {
                return Err(Error::InvalidParameter("box must contain the origin".into()));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, lo), DVector::from_element(dim, hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// `L = max_x ‖x‖₂` over the box, attained at a corner.
    pub fn action_bound(&self) -> f64 {
        self.lower.iter().zip(self.upper.iter()).map(|(l, u)| l.abs().max(u.abs()).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &DVector<f64>, slack: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| *v >= l - slack && *v <= u + slack)
    }

    /// Corner maximizing `cᵀx`; coordinates with `c_i = 0` go to the upper face.
    pub fn corner_for(&self, c: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| if c[i] >= 0.0 { self.upper[i] } else { self.lower[i] }),
        )
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| x[i].clamp(self.lower[i], self.upper[i])))
    }
}

/// `aᵀx + β‖x‖_{V⁻¹} ≤ C`.
#[derive(Debug, Clone)]
pub struct SocConstraint<'a> {
    pub direction: DVector<f64>,
    pub radius: f64,
    /// The inverse Gram matrix `V⁻¹`.
    pub metric: &'a DMatrix<f64>,
    pub level: f64,
}

impl<'a> SocConstraint<'a> {
    pub fn new(direction: DVector<f64>, radius: f64, metric: &'a DMatrix<f64>, level: f64) -> Result<Self> {
        ensure_dim(metric.nrows(), direction.len())?;
        ensure_finite(direction.as_slice(), "constraint direction")?;
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("radius must be nonnegative, got {radius}")));
        }
        if !(level > 0.0 && level.is_finite()) {
            return Err(Error::InvalidParameter(format!("safety level must be positive, got {level}")));
        }
        Ok(Self { direction, radius, metric, level })
    }

    /// The estimated-safe-set constraint `x ᵀμ̂ + β‖x‖_{V⁻¹} ≤ C` of an RLS state.
    pub fn from_state(mu_hat: DVector<f64>, radius: f64, state: &'a RlsState, level: f64) -> Result<Self> {
        Self::new(mu_hat, radius, state.gram_inv(), level)
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        let norm = if self.radius == 0.0 { 0.0 } else { quad_form(self.metric, x).max(0.0).sqrt() };
        self.level - self.direction.dot(x) - self.radius * norm
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.margin(x) >= -tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_basics() {
        let b = BoxSet::cube(4, -1.0, 1.0).unwrap();
        assert_eq!(b.action_bound(), 2.0);
        assert!(BoxSet::cube(2, 0.5, 1.0).is_err());
        assert!(BoxSet::cube(2, 1.0, -1.0).is_err());
        let c = DVector::from_vec(vec![0.5, -2.0, 0.0, 1.0]);
        assert_eq!(b.corner_for(&c).as_slice(), &[1.0, -1.0, 1.0, 1.0]);
        assert!(b.contains(&DVector::from_vec(vec![1.0, -1.0, 0.0, 0.3]), 0.0));
        assert!(!b.contains(&DVector::from_vec(vec![1.0 + 1e-9, 0.0, 0.0, 0.0]), 0.0));
    }
}
