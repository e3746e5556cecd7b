//! Online regularized least squares shared by the reward and safety channels.
//!
//! Both estimators see the same actions, so a single Gram matrix
//! `V_t = λI + Σ_{s<t} x_s x_sᵀ` serves them. The inverse is maintained with
//! Sherman–Morrison rank-one updates and periodically rebuilt from `V` by a
//! Cholesky factorization so that drift stays bounded over long episodes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};

/// Default number of rank-one updates between direct refactorizations.
pub const DEFAULT_REFACTOR_PERIOD: usize = 256;

const SYMMETRY_TOL: f64 = 1e-10;
const MIN_EIGENVALUE: f64 = 1e-12;

/// Which response the estimate is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Rewards `r_s`, estimating θ★.
    Reward,
    /// Side measurements `w_s`, estimating μ★.
    Safety,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsState {
    dim: usize,
    lambda: f64,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    b_reward: DVector<f64>,
    b_safety: DVector<f64>,
    /// Number of absorbed observations plus one.
    round: usize,
    refactor_period: usize,
    since_refactor: usize,
}

impl RlsState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("regularizer must be positive, got {lambda}")));
        }
        Ok(Self {
            dim,
            lambda,
            gram: DMatrix::identity(dim, dim) * lambda,
            gram_inv: DMatrix::identity(dim, dim) / lambda,
            b_reward: DVector::zeros(dim),
            b_safety: DVector::zeros(dim),
            round: 1,
            refactor_period: DEFAULT_REFACTOR_PERIOD,
            since_refactor: 0,
        })
    }

    /// Sets how many rank-one updates may accumulate before `V⁻¹` is rebuilt.
    /// A period of zero disables refactorization.
    pub fn with_refactor_period(mut self, period: usize) -> Self {
        self.refactor_period = period;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The current round `t`; the state holds `t - 1` observations.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    pub fn response(&self, which: Channel) -> &DVector<f64> {
        match which {
            Channel::Reward => &self.b_reward,
            Channel::Safety => &self.b_safety,
        }
    }

    /// Absorbs one observation `(x, r, w)`.
    pub fn gram_update(&mut self, x: &DVector<f64>, r: f64, w: f64) -> Result<()> {
        ensure_dim(self.dim, x.len())?;
        ensure_finite(x.as_slice(), "action")?;
        ensure_finite(&[r, w], "observation")?;

        self.round += 1;
        if x.iter().all(|&v| v == 0.0) {
            return Ok(());
        }

        self.gram.ger(1.0, x, x, 1.0);
        self.b_reward.axpy(r, x, 1.0);
        self.b_safety.axpy(w, x, 1.0);

        self.since_refactor += 1;
        if self.refactor_period > 0 && self.since_refactor >= self.refactor_period {
            self.refactor()?;
        } else {
            // (V + xxᵀ)⁻¹ = V⁻¹ − (V⁻¹x)(V⁻¹x)ᵀ / (1 + xᵀV⁻¹x)
            let vx = &self.gram_inv * x;
            let denom = 1.0 + x.dot(&vx);
            self.gram_inv.ger(-1.0 / denom, &vx, &vx, 1.0);
            self.symmetrize_inverse();
        }
        Ok(())
    }

    /// Rebuilds `V⁻¹` from `V` by Cholesky factorization.
    pub fn refactor(&mut self) -> Result<()> {
        self.gram_inv = direct_inverse(&self.gram)?;
        self.since_refactor = 0;
        Ok(())
    }

    fn symmetrize_inverse(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self.gram_inv[(i, j)] + self.gram_inv[(j, i)]);
                self.gram_inv[(i, j)] = m;
                self.gram_inv[(j, i)] = m;
            }
        }
    }

    /// The regularized least-squares estimate `V⁻¹ b` for one channel.
    pub fn rls_estimate(&self, which: Channel) -> DVector<f64> {
        &self.gram_inv * self.response(which)
    }

    /// `‖x‖_{V⁻¹}` using the maintained inverse.
    pub fn inv_norm(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.gram_inv, x).max(0.0).sqrt()
    }

    /// `‖x‖_V`.
    pub fn gram_norm(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.gram, x).max(0.0).sqrt()
    }
}

/// `xᵀ M x` without allocating.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += m[(i, j)] * x[i];
        }
        acc += col * x[j];
    }
    acc
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `√(xᵀMx)` for a symmetric positive semidefinite metric `M`.
pub fn weighted_norm(x: &DVector<f64>, m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::InvalidParameter("metric must be square".into()));
    }
    ensure_dim(m.nrows(), x.len())?;
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(quad_form(m, x).max(0.0).sqrt())
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn direct_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| Error::NotPositiveDefinite(smallest_eigenvalue(m)))
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Symmetric square root of `V⁻¹`, from the eigendecomposition `V = QΛQᵀ`.
pub fn inv_sqrt_factor(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !v.is_square() {
        return Err(Error::InvalidParameter("matrix must be square".into()));
    }
    let asym = max_asymmetry(v);
    if asym > SYMMETRY_TOL * (1.0 + v.amax()) {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = v.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min >= MIN_EIGENVALUE) {
        return Err(Error::NotPositiveDefinite(min));
    }
    let scaled = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&scaled) * q.transpose();
    // exact symmetry for downstream consumers
    let n = out.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    Ok(out)
}

/// `Σ_s ‖x_s‖²_{V_s⁻¹}` over a recorded history of actions and the Gram
/// matrices they were chosen under.
pub fn elliptical_potential(history: &[(DVector<f64>, DMatrix<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, v) in history {
        ensure_dim(v.nrows(), x.len())?;
        let chol = v.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(smallest_eigenvalue(v)))?;
        let y = chol.solve(x);
        total += x.dot(&y);
    }
    Ok(total)
}

/// Upper bound `2d·log(1 + tL²/λ)` on the elliptical potential after `t` rounds.
pub fn elliptical_potential_bound(dim: usize, t: usize, action_bound: f64, lambda: f64) -> f64 {
    2.0 * dim as f64 * (1.0 + t as f64 * action_bound * action_bound / lambda).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    fn random_vec(rng: &mut impl Rng, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_update_matches_dense_accumulation() {
        let mut s = RlsState::new(2, 1.0).unwrap();
        s.gram_update(&DVector::from_vec(vec![1.0, 0.0]), 1.0, 0.0).unwrap();
        assert_eq!(s.gram(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])));
        assert_eq!(s.response(Channel::Reward).as_slice(), &[1.0, 0.0]);
        assert_eq!(s.response(Channel::Safety).as_slice(), &[0.0, 0.0]);
        assert_eq!(s.round(), 2);
    }

    #[test]
    fn zero_action_leaves_state_unchanged() {
        let mut s = RlsState::new(3, 2.0).unwrap();
        s.gram_update(&DVector::from_vec(vec![0.3, -0.2, 0.9]), 0.5, 0.1).unwrap();
        let before = s.clone();
        s.gram_update(&DVector::zeros(3), 7.0, -3.0).unwrap();
        assert_eq!(s.gram(), before.gram());
        assert_eq!(s.gram_inv(), before.gram_inv());
        assert_eq!(s.response(Channel::Reward), before.response(Channel::Reward));
        assert_eq!(s.round(), before.round() + 1);
    }

    #[test]
    fn rejects_non_finite_and_wrong_dimension() {
        let mut s = RlsState::new(2, 1.0).unwrap();
        assert!(matches!(s.gram_update(&DVector::from_vec(vec![f64::NAN, 0.0]), 0.0, 0.0), Err(Error::NonFinite(_))));
        assert!(matches!(
            s.gram_update(&DVector::from_vec(vec![1.0, 0.0]), f64::INFINITY, 0.0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(s.gram_update(&DVector::from_vec(vec![1.0]), 0.0, 0.0), Err(Error::DimensionMismatch { .. })));
        assert!(RlsState::new(2, 0.0).is_err());
    }

    #[test]
    fn inverse_tracks_direct_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // no refactorization: pure rank-one updates
        let mut s = RlsState::new(4, 1.0).unwrap().with_refactor_period(0);
        for _ in 0..100 {
            let x = random_vec(&mut rng, 4);
            s.gram_update(&x, rng.random(), rng.random()).unwrap();
        }
        let direct = direct_inverse(s.gram()).unwrap();
        assert!(max_abs_diff(s.gram_inv(), &direct) <= 1e-8);
    }

    #[test]
    fn gram_equals_regularizer_plus_outer_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = RlsState::new(3, 1.5).unwrap();
        let mut dense = DMatrix::<f64>::identity(3, 3) * 1.5;
        for _ in 0..300 {
            let x = random_vec(&mut rng, 3);
            dense += &x * x.transpose();
            s.gram_update(&x, 0.0, 0.0).unwrap();
        }
        assert!(max_abs_diff(s.gram(), &dense) <= 1e-10);
        let prod = s.gram() * s.gram_inv();
        assert!(max_abs_diff(&prod, &DMatrix::identity(3, 3)) <= 1e-8);
    }

    #[test]
    fn estimate_without_data_is_zero() {
        let s = RlsState::new(3, 1.0).unwrap();
        assert_eq!(s.rls_estimate(Channel::Reward), DVector::zeros(3));
        assert_eq!(s.rls_estimate(Channel::Safety), DVector::zeros(3));
    }

    #[test]
    fn estimate_after_one_observation() {
        // V = diag(2,1), b = (1,0) → θ̂ = (0.5, 0)
        let mut s = RlsState::new(2, 1.0).unwrap();
        s.gram_update(&DVector::from_vec(vec![1.0, 0.0]), 1.0, 0.0).unwrap();
        let th = s.rls_estimate(Channel::Reward);
        assert_abs_diff_eq!(th[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(th[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn noiseless_estimate_has_ridge_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = DVector::from_vec(vec![0.4, -0.7, 0.2]);
        let mut s = RlsState::new(3, 1.0).unwrap();
        for _ in 0..40 {
            let x = random_vec(&mut rng, 3);
            s.gram_update(&x, x.dot(&theta), 0.0).unwrap();
        }
        let v = s.gram().clone();
        let expected = v.clone().lu().solve(&((&v - DMatrix::identity(3, 3)) * &theta)).unwrap();
        let est = s.rls_estimate(Channel::Reward);
        assert!((est - expected).amax() <= 1e-10);
    }

    #[test]
    fn weighted_norm_examples() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(weighted_norm(&e1, &DMatrix::identity(2, 2)).unwrap(), 1.0);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let ones = DVector::from_vec(vec![1.0, 1.0]);
        assert_abs_diff_eq!(weighted_norm(&ones, &m).unwrap(), 3f64.sqrt(), epsilon = 1e-15);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(weighted_norm(&ones, &asym), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn inv_sqrt_examples() {
        assert!(max_abs_diff(&inv_sqrt_factor(&DMatrix::identity(3, 3)).unwrap(), &DMatrix::identity(3, 3)) < 1e-15);
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = inv_sqrt_factor(&v).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0 / 3.0]));
        assert!(max_abs_diff(&r, &expected) < 1e-15);
    }

    #[test]
    fn inv_sqrt_reconstructs_identity_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let v = &a * a.transpose() + DMatrix::identity(4, 4);
            let r = inv_sqrt_factor(&v).unwrap();
            assert_eq!(max_asymmetry(&r), 0.0);
            assert!(max_abs_diff(&(&r * &v * &r), &DMatrix::identity(4, 4)) <= 1e-8);
        }
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(inv_sqrt_factor(&v), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn potential_examples() {
        let h = vec![(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2))];
        assert_abs_diff_eq!(elliptical_potential(&h).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(elliptical_potential_bound(2, 1, 2.0, 1.0), 4.0 * 5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(elliptical_potential_bound(2, 1, 2.0, 1.0), 6.4378, epsilon = 1e-4);
        let zeros = vec![(DVector::zeros(2), DMatrix::identity(2, 2)); 5];
        assert_eq!(elliptical_potential(&zeros).unwrap(), 0.0);
    }

    #[test]
    fn potential_of_random_sequence_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = RlsState::new(2, 1.0).unwrap();
        let mut history = Vec::new();
        for _ in 0..500 {
            let x = random_vec(&mut rng, 2);
            history.push((x.clone(), s.gram().clone()));
            s.gram_update(&x, 0.0, 0.0).unwrap();
        }
        let l = 2f64.sqrt();
        assert!(elliptical_potential(&history).unwrap() < elliptical_potential_bound(2, 500, l, 1.0));
    }

    proptest::proptest! {
        #[test]
        fn cauchy_schwarz_in_gram_metric(
            xs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 0..30),
            probe in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let mut s = RlsState::new(3, 1.0).unwrap();
            for x in &xs {
                s.gram_update(&DVector::from_vec(x.clone()), 0.0, 0.0).unwrap();
            }
            let p = DVector::from_vec(probe);
            let lhs = s.gram_norm(&p) * s.inv_norm(&p);
            proptest::prop_assert!(lhs >= p.norm_squared() * (1.0 - 1e-10) - 1e-12);
        }

        #[test]
        fn gram_sequence_is_monotone(
            xs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 2), 1..30),
            probe in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let mut s = RlsState::new(2, 1.0).unwrap();
            let p = DVector::from_vec(probe);
            let mut prev = s.gram_norm(&p);
            for x in &xs {
                s.gram_update(&DVector::from_vec(x.clone()), 0.0, 0.0).unwrap();
                let cur = s.gram_norm(&p);
                proptest::prop_assert!(cur >= prev - 1e-12);
                prev = cur;
            }
            let eig = s.gram().clone().symmetric_eigen();
            proptest::prop_assert!(eig.eigenvalues.iter().all(|&l| l >= 1.0 - 1e-12));
        }
    }
}
