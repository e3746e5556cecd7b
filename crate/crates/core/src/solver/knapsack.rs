use nalgebra::DVector;

use super::BoxSet;
use crate::error::{ensure_dim, ensure_finite, Error, Result};

/// Exact maximizer of `cᵀx` subject to `aᵀx ≤ C` over a box.
///
/// Continuous-knapsack greedy: start from the corner maximizing `cᵀx` and,
/// while the constraint is violated, pull coordinates toward their opposite
/// face in increasing order of `|c_i|/|a_i|` (objective lost per unit of
/// constraint recovered). Only moves that strictly decrease `aᵀx` qualify;
/// ties go to the lowest index.
pub fn linear_max_single_linear_constraint(
    c: &DVector<f64>,
    a: &DVector<f64>,
    level: f64,
    bounds: &BoxSet,
) -> Result<(DVector<f64>, f64)> {
    ensure_dim(bounds.dim(), c.len())?;
    ensure_dim(bounds.dim(), a.len())?;
    ensure_finite(c.as_slice(), "objective")?;
    ensure_finite(a.as_slice(), "constraint direction")?;
    if !(level > 0.0) {
        return Err(Error::InvalidParameter(format!("safety level must be positive, got {level}")));
    }

    let mut x = bounds.corner_for(c);
    let mut excess = a.dot(&x) - level;
    if excess > 0.0 {
        // (ratio, index, opposite face, max constraint decrease)
        let mut moves: Vec<(f64, usize, f64, f64)> = (0..x.len())
            .filter_map(|i| {
                let opposite = if x[i] == bounds.upper[i] { bounds.lower[i] } else { bounds.upper[i] };
                let decrease = -a[i] * (opposite - x[i]);
                (decrease > 0.0).then(|| (c[i].abs() / a[i].abs(), i, opposite, decrease))
            })
            .collect();
        moves.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));

        for (_, i, opposite, decrease) in moves {
            if decrease >= excess {
                x[i] += (opposite - x[i]) * (excess / decrease);
                break;
            }
            x[i] = opposite;
            excess -= decrease;
        }
    }
    let value = c.dot(&x);
    Ok((x, value))
}
