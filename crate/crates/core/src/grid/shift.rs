use ndarray::{Array, ArrayBase, Axis, Data, Dimension, Slice};

use crate::error::{invalid, Result};

/// Shifts below this distance from an integer are treated as exact integer rolls.
const INTEGER_SNAP: f64 = 1e-9;

/// Exact circular roll by an integer number of positions: `out[i] = a[i - k]`.
pub fn roll<S, D>(a: &ArrayBase<S, D>, k: i64, axis: Axis) -> Array<f64, D>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    let n = a.len_of(axis);
    let mut out = a.to_owned();
    if n == 0 {
        return out;
    }
    let k = k.rem_euclid(n as i64) as usize;
    if k == 0 {
        return out;
    }
    out.slice_axis_mut(axis, Slice::from(k..))
        .assign(&a.slice_axis(axis, Slice::from(..n - k)));
    out.slice_axis_mut(axis, Slice::from(..k))
        .assign(&a.slice_axis(axis, Slice::from(n - k..)));
    out
}

/// Circular shift by a real number of bins along `axis`.
///
/// A fractional shift `phi` blends the two neighbouring integer rolls:
/// `(⌊phi⌋ + 1 - phi) · roll(⌊phi⌋) + (phi - ⌊phi⌋) · roll(⌊phi⌋ + 1)`,
/// which reduces to the exact roll at integers.
pub fn circular_shift<S, D>(a: &ArrayBase<S, D>, phi: f64, axis: usize) -> Result<Array<f64, D>>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if !phi.is_finite() {
        return invalid(format!("shift must be finite, got {phi}"));
    }
    if axis >= a.ndim() {
        return invalid(format!("axis {axis} out of range for a rank-{} array", a.ndim()));
    }
    let ax = Axis(axis);
    let n = a.len_of(ax);
    if n == 0 {
        return invalid("cannot shift along an empty axis");
    }
    let phi = phi.rem_euclid(n as f64);
    let nearest = phi.round();
    if (phi - nearest).abs() < INTEGER_SNAP {
        return Ok(roll(a, nearest as i64, ax));
    }
    let lo = phi.floor();
    let frac = phi - lo;
    let mut out = roll(a, lo as i64, ax);
    out *= 1.0 - frac;
    out.scaled_add(frac, &roll(a, lo as i64 + 1, ax));
    Ok(out)
}
