use crate::error::{invalid, Result};
use crate::grid::LocalViewDescriptor;
use crate::pose::wrap_deg;

/// Golden-section iterations per half-bracket. Each iteration shrinks the
/// bracket by 0.618, so 60 iterations resolve the shift to ~3e-13 bins.
pub const DEFAULT_REFINE_ITERS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YawEstimate {
    /// Relative yaw in degrees, in `[-180, 180)`.
    pub yaw_deg: f64,
    /// Matching cost at the optimal shift.
    pub cost: f64,
    /// Optimal (possibly fractional) shift of the source rows, in bins.
    pub shift_bins: f64,
}

/// Converts a row shift into the yaw it represents: `-360 · shift / T`.
pub fn shift_to_yaw(shift_bins: f64, angular_bins: usize) -> f64 {
    wrap_deg(-360.0 * shift_bins / angular_bins as f64)
}

/// Matching cost of `source` circularly shifted by `phi` rows against `target`.
///
/// Evaluated without materializing the shifted descriptor.
pub fn shifted_cost(source: &LocalViewDescriptor, target: &LocalViewDescriptor, phi: f64) -> f64 {
    let t = source.rows();
    let c = source.channels();
    let a = source.data().as_slice().expect("standard layout");
    let b = target.data().as_slice().expect("standard layout");
    let phi = phi.rem_euclid(t as f64);
    let lo = phi.floor();
    let f = phi - lo;
    let lo = lo as usize % t;
    let mut total = 0.0;
    for i in 0..t {
        let r0 = (i + t - lo) % t;
        let row0 = &a[r0 * c..(r0 + 1) * c];
        let tgt = &b[i * c..(i + 1) * c];
        let mut s = 0.0;
        if f == 0.0 {
            for (x, y) in row0.iter().zip(tgt) {
                s += (x - y) * (x - y);
            }
        } else {
            let r1 = (r0 + t - 1) % t;
            let row1 = &a[r1 * c..(r1 + 1) * c];
            for ((x0, x1), y) in row0.iter().zip(row1).zip(tgt) {
                let d = (1.0 - f) * x0 + f * x1 - y;
                s += d * d;
            }
        }
        total += s.sqrt();
    }
    total / t as f64
}

/// Yaw between two local-view descriptors by minimizing the matching cost
/// over circular shifts of `ds`.
pub fn estimate_yaw(ds: &LocalViewDescriptor, dp: &LocalViewDescriptor) -> Result<YawEstimate> {
    estimate_yaw_with(ds, dp, DEFAULT_REFINE_ITERS)
}

/// All integer shifts are scored; the best is then refined by golden-section
/// search on each of the two adjacent unit intervals, where the interpolated
/// cost is convex. Ties prefer the smallest `|yaw|`.
pub fn estimate_yaw_with(ds: &LocalViewDescriptor, dp: &LocalViewDescriptor, refine_iters: usize) -> Result<YawEstimate> {
    if ds.data().dim() != dp.data().dim() {
        return invalid(format!("descriptor shapes differ: {:?} vs {:?}", ds.data().dim(), dp.data().dim()));
    }
    let t = ds.rows();
    let ds = standard(ds);
    let dp = standard(dp);

    let mut best_k = 0usize;
    let mut best_cost = f64::INFINITY;
    for k in 0..t {
        let cost = shifted_cost(&ds, &dp, k as f64);
        let better = cost < best_cost
            || (cost == best_cost && shift_to_yaw(k as f64, t).abs() < shift_to_yaw(best_k as f64, t).abs());
        if better {
            best_k = k;
            best_cost = cost;
        }
    }

    let mut best_shift = best_k as f64;
    if t > 1 && refine_iters > 0 {
        let k = best_k as f64;
        for (lo, hi) in [(k - 1.0, k), (k, k + 1.0)] {
            let (phi, cost) = golden_section(|p| shifted_cost(&ds, &dp, p), lo, hi, refine_iters);
            if cost < best_cost {
                best_cost = cost;
                best_shift = phi;
            }
        }
    }
    Ok(YawEstimate {
        yaw_deg: shift_to_yaw(best_shift, t),
        cost: best_cost,
        shift_bins: best_shift.rem_euclid(t as f64),
    })
}

fn standard(d: &LocalViewDescriptor) -> std::borrow::Cow<'_, LocalViewDescriptor> {
    if d.data().is_standard_layout() {
        std::borrow::Cow::Borrowed(d)
    } else {
        let mut owned = d.clone();
        owned = LocalViewDescriptor::new(owned.data().as_standard_layout().into_owned()).expect("finite");
        std::borrow::Cow::Owned(owned)
    }
}

/// Minimizes `f` on `[lo, hi]`; returns the best point evaluated in the interior.
fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    best
}
