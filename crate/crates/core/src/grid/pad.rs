use ndarray::{s, Axis};

use super::shift::circular_shift;
use super::types::BevGrid;
use crate::error::{invalid, Result};

const SNAP: f64 = 1e-9;

/// Rounds values within `1e-9` of an integer onto it, so that e.g.
/// `0.9 / 0.3` counts as exactly three cells.
pub fn snap_integer(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// BEV padding: shifts the grid by a hypothesised ego translation and
/// overwrites the wrapped-in band with the constant 1.
///
/// The grid is circularly shifted by `-x/g` rows and `-y/g` columns
/// (fractional shifts interpolate). For `x ≥ 0` the last `⌈x/g⌉` rows are
/// filled, otherwise the first `⌈|x|/g⌉`; columns likewise for `y`.
pub fn bev_pad(q: &BevGrid, x_m: f64, y_m: f64) -> Result<BevGrid> {
    let geo = q.geometry();
    let (ext_x, ext_y) = geo.extent_m();
    if !(x_m.is_finite() && y_m.is_finite()) {
        return invalid("padding translation must be finite");
    }
    if x_m.abs() >= ext_x || y_m.abs() >= ext_y {
        return invalid(format!(
            "padding translation ({x_m}, {y_m}) exceeds the grid extent ({ext_x}, {ext_y})"
        ));
    }
    let g = geo.grid_size_m;
    let row_shift = snap_integer(-x_m / g);
    let col_shift = snap_integer(-y_m / g);

    let mut data = if row_shift == 0.0 && col_shift == 0.0 {
        q.data().clone()
    } else {
        let rows = circular_shift(q.data(), row_shift, 0)?;
        circular_shift(&rows, col_shift, 1)?
    };

    let band_rows = snap_integer(x_m.abs() / g).ceil() as usize;
    let band_cols = snap_integer(y_m.abs() / g).ceil() as usize;
    let (h, w) = (geo.height, geo.width);
    if band_rows > 0 {
        let range = if x_m >= 0.0 { h - band_rows..h } else { 0..band_rows };
        data.slice_axis_mut(Axis(0), range.into()).fill(1.0);
    }
    if band_cols > 0 {
        let range = if y_m >= 0.0 { w - band_cols..w } else { 0..band_cols };
        data.slice_mut(s![.., range, ..]).fill(1.0);
    }
    Ok(BevGrid::from_parts_unchecked(data, g))
}
