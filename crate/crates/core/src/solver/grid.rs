use log::warn;
use nalgebra::DVector;

use super::BoxSet;
use crate::error::{ensure_dim, Error, Result};

/// Dimension above which exhaustive grid search logs a cost warning.
pub const GRID_WARN_DIM: usize = 3;

/// Best feasible point of the regular grid `lower + k·step` (clamped to the
/// upper face) under the objective `cᵀx`. Ties keep the first point in
/// lexicographic order.
pub fn grid_oracle<F>(c: &DVector<f64>, feasible: F, bounds: &BoxSet, step: f64) -> Result<(DVector<f64>, f64)>
where
    F: Fn(&DVector<f64>) -> bool,
{
    ensure_dim(bounds.dim(), c.len())?;
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("grid step must be positive, got {step}")));
    }
    let d = bounds.dim();
    if d > GRID_WARN_DIM {
        warn!("grid oracle in dimension {d}: cost grows as (extent/step)^{d}");
    }
    let counts: Vec<usize> =
        (0..d).map(|i| ((bounds.upper[i] - bounds.lower[i]) / step + 1e-9).floor() as usize + 1).collect();
    let coord = |i: usize, k: usize| (bounds.lower[i] + k as f64 * step).min(bounds.upper[i]);

    let mut idx = vec![0usize; d];
    let mut point = DVector::from_iterator(d, (0..d).map(|i| coord(i, 0)));
    let mut best: Option<(DVector<f64>, f64)> = None;
    loop {
        if feasible(&point) {
            let val = c.dot(&point);
            if best.as_ref().is_none_or(|(_, b)| val > *b) {
                best = Some((point.clone(), val));
            }
        }
        // odometer increment, last coordinate fastest
        let mut i = d;
        loop {
            if i == 0 {
                return best.ok_or(Error::EmptyGrid);
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < counts[i] {
                point[i] = coord(i, idx[i]);
                break;
            }
            idx[i] = 0;
            point[i] = coord(i, 0);
        }
    }
}
