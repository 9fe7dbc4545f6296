//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::DMatrix;

/// Reciprocal-condition proxy below which a square system is treated as
/// singular. Linearly dependent binding rows land far below this; genuinely
/// well-posed KKT systems in this problem class sit far above it.
pub const RCOND_MIN: f64 = 1e-10;

/// Invert a small square matrix, rejecting rank-deficient or severely
/// ill-conditioned inputs.
///
/// The condition estimate is the ratio of the smallest to largest LU pivot
/// magnitude, which is scale-invariant and cheap for the matrix sizes used
/// here (a few dozen rows at most).
pub fn invert_checked(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    debug_assert_eq!(m.nrows(), m.ncols());
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let lu = m.clone().lu();
    let diag = lu.u().diagonal();
    let mut max_pivot = 0.0f64;
    let mut min_pivot = f64::INFINITY;
    for p in diag.iter() {
        max_pivot = max_pivot.max(p.abs());
        min_pivot = min_pivot.min(p.abs());
    }
    if max_pivot == 0.0 || min_pivot / max_pivot < RCOND_MIN {
        return None;
    }
    lu.try_inverse()
}
