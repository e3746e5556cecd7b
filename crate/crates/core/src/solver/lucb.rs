use nalgebra::DVector;

use super::{safe_linear_max, BoxSet, SocConstraint};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{inv_sqrt_factor, RlsState};

#[derive(Debug, Clone, PartialEq)]
pub struct LucbChoice {
    pub x: DVector<f64>,
    /// The extreme point of the reward confidence set paired with `x`.
    pub theta_vertex: DVector<f64>,
    /// Optimistic value `xᵀθ_vertex`.
    pub value: f64,
}

/// Optimistic action over an ℓ1 reward confidence set.
///
/// The set `{θ : ‖V^{1/2}(θ − θ̂)‖₁ ≤ β√d}` contains the ℓ2 ellipsoid of
/// radius β and has the `2d` extreme points `θ̂ ± β√d·V^{-1/2}e_i`, so the
/// bilinear problem `max_x max_θ xᵀθ` splits into one safe linear
/// maximization per vertex. Ties keep the first vertex (`+e_1, −e_1, +e_2, …`).
pub fn lucb_vertex_argmax(
    theta_hat: &DVector<f64>,
    beta_reward: f64,
    state: &RlsState,
    con: &SocConstraint<'_>,
    bounds: &BoxSet,
    tol: f64,
) -> Result<LucbChoice> {
    ensure_dim(state.dim(), theta_hat.len())?;
    if !(beta_reward >= 0.0) {
        return Err(Error::InvalidParameter(format!("reward radius must be nonnegative, got {beta_reward}")));
    }
    if beta_reward == 0.0 {
        let sol = safe_linear_max(theta_hat, con, bounds, tol)?;
        return Ok(LucbChoice { x: sol.x, theta_vertex: theta_hat.clone(), value: sol.value });
    }

    let d = state.dim();
    let root = inv_sqrt_factor(state.gram())?;
    let reach = beta_reward * (d as f64).sqrt();
    let mut best: Option<LucbChoice> = None;
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let vertex = theta_hat + root.column(i) * (sign * reach);
            let sol = safe_linear_max(&vertex, con, bounds, tol)?;
            if best.as_ref().is_none_or(|b| sol.value > b.value) {
                best = Some(LucbChoice { x: sol.x, theta_vertex: vertex, value: sol.value });
            }
        }
    }
    Ok(best.expect("at least one vertex"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::grid_oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn zero_radius_is_greedy() {
        let s = RlsState::new(2, 1.0).unwrap();
        let b = BoxSet::cube(2, -1.0, 1.0).unwrap();
        let con = SocConstraint::from_state(v(&[0.2, 0.1]), 0.5, &s, 0.4).unwrap();
        let th = v(&[0.7, -0.3]);
        let choice = lucb_vertex_argmax(&th, 0.0, &s, &con, &b, 1e-6).unwrap();
        let direct = safe_linear_max(&th, &con, &b, 1e-6).unwrap();
        assert_eq!(choice.x, direct.x);
        assert_eq!(choice.theta_vertex, th);
    }

    #[test]
    fn identity_metric_vertices() {
        let s = RlsState::new(2, 1.0).unwrap();
        let b = BoxSet::cube(2, -1.0, 1.0).unwrap();
        let con = SocConstraint::from_state(v(&[0.3, 0.2]), 0.4, &s, 0.5).unwrap();
        let th = v(&[1.0, 0.0]);
        let choice = lucb_vertex_argmax(&th, 1.0, &s, &con, &b, 1e-6).unwrap();
        let r = 2f64.sqrt();
        let vertices = [v(&[1.0 + r, 0.0]), v(&[1.0 - r, 0.0]), v(&[1.0, r]), v(&[1.0, -r])];
        let mut best = f64::NEG_INFINITY;
        for vert in &vertices {
            let (_, val) = grid_oracle(vert, |x| con.margin(x) >= 0.0, &b, 0.005).unwrap();
            best = best.max(val);
        }
        assert!(vertices.iter().any(|vert| (vert - &choice.theta_vertex).amax() < 1e-12));
        assert!((choice.value - best).abs() <= 0.005 * (1.0 + 2.0 * r));
    }

    #[test]
    fn optimistic_value_dominates_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = BoxSet::cube(2, -1.0, 1.0).unwrap();
        for _ in 0..20 {
            let mut s = RlsState::new(2, 1.0).unwrap();
            for _ in 0..rng.random_range(0..30) {
                let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                s.gram_update(&x, rng.random(), rng.random()).unwrap();
            }
            let th = s.rls_estimate(crate::linalg::Channel::Reward);
            let mu = s.rls_estimate(crate::linalg::Channel::Safety);
            let con = SocConstraint::from_state(mu, 1.0, &s, 0.3).unwrap();
            let greedy = safe_linear_max(&th, &con, &b, 1e-6).unwrap().value;
            let opt = lucb_vertex_argmax(&th, 1.2, &s, &con, &b, 1e-6).unwrap();
            assert!(opt.value >= greedy - 1e-6);
            let wider = lucb_vertex_argmax(&th, 2.4, &s, &con, &b, 1e-6).unwrap();
            assert!(wider.value >= opt.value - 1e-6);
        }
    }
}
