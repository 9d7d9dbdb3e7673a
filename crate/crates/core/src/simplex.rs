//! Euclidean projection onto the probability simplex.

use crate::error::{Error, Result};

/// Projects `v` onto the probability simplex (nonnegative, sums to 1).
///
/// Sort-and-threshold algorithm: exact in O(n log n), no iterative
/// tolerance. Returns the unique minimizer of ||x - v||_2 over the simplex.
pub fn project_row_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidParameter("empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite entry in simplex projection".into()));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            tau = t;
        }
    }
    Ok(v.iter().map(|&x| (x - tau).max(0.0)).collect())
}

/// Row-wise simplex projection of a flat `rows x cols` parameter vector,
/// in place.
pub fn project_rows_in_place(theta: &mut [f64], cols: usize) -> Result<()> {
    debug_assert_eq!(theta.len() % cols, 0);
    for row in theta.chunks_mut(cols) {
        let p = project_row_simplex(row)?;
        row.copy_from_slice(&p);
    }
    Ok(())
}
