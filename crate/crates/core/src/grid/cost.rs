use ndarray::ArrayView2;

use super::types::LocalViewDescriptor;
use crate::error::{invalid, Result};

/// Mean over rows of the per-row L2 distance between two matrices of equal shape.
pub fn row_distance_mean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    let total: f64 = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(ra, rb)| ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    total / n as f64
}

/// Matching cost between two aligned local-view descriptors: the mean row
/// distance. Lies in `[0, 2]` for unit rows.
pub fn matching_cost(a: &LocalViewDescriptor, b: &LocalViewDescriptor) -> Result<f64> {
    if a.data().dim() != b.data().dim() {
        return invalid(format!(
            "descriptor shapes differ: {:?} vs {:?}",
            a.data().dim(),
            b.data().dim()
        ));
    }
    Ok(row_distance_mean(a.view(), b.view()))
}
