use ndarray::Array3;

use super::types::{BevGrid, GridGeometry, PolarGrid};
use crate::error::{invalid, Result};

/// Slack on the disk-inside-grid precondition, in meters.
const EXTENT_TOLERANCE_M: f64 = 1e-9;

/// Precomputed bilinear taps mapping a Cartesian grid onto polar bin centres.
///
/// Building the sampler once and reusing it avoids recomputing the trigonometry
/// when many grids of the same geometry are resampled (e.g. per search
/// hypothesis).
#[derive(Clone, Debug)]
pub struct PolarSampler {
    geometry: GridGeometry,
    angular_bins: usize,
    radial_bins: usize,
    radial_step_m: f64,
    /// `angular_bins * radial_bins` groups of four `(flat cell index, weight)` taps.
    taps: Vec<[(usize, f64); 4]>,
}

impl PolarSampler {
    /// Sampler whose polar disk exactly inscribes the grid.
    pub fn new(geometry: GridGeometry, angular_bins: usize, radial_bins: usize) -> Result<Self> {
        if radial_bins == 0 {
            return invalid("radial bin count must be positive");
        }
        let step = geometry.inscribed_radius_m() / radial_bins as f64;
        Self::with_step(geometry, angular_bins, radial_bins, step)
    }

    pub fn with_step(geometry: GridGeometry, angular_bins: usize, radial_bins: usize, radial_step_m: f64) -> Result<Self> {
        geometry.validate()?;
        if angular_bins == 0 || radial_bins == 0 {
            return invalid(format!("polar bins must be positive, got T={angular_bins} R={radial_bins}"));
        }
        if !(radial_step_m > 0.0 && radial_step_m.is_finite()) {
            return invalid(format!("radial step must be positive, got {radial_step_m}"));
        }
        let reach = radial_bins as f64 * radial_step_m;
        if reach > geometry.inscribed_radius_m() + EXTENT_TOLERANCE_M {
            return invalid(format!(
                "polar disk of radius {reach} m exceeds the inscribed grid radius {} m",
                geometry.inscribed_radius_m()
            ));
        }

        let (h, w) = (geometry.height, geometry.width);
        let g = geometry.grid_size_m;
        let mut taps = Vec::with_capacity(angular_bins * radial_bins);
        for t in 0..angular_bins {
            let theta = ((t as f64 + 0.5) * 360.0 / angular_bins as f64).to_radians();
            let (s, c) = theta.sin_cos();
            for r in 0..radial_bins {
                let rho = (r as f64 + 0.5) * radial_step_m;
                let (x, y) = (rho * s, rho * c);
                // continuous coordinates relative to cell centres
                let u = h as f64 / 2.0 - x / g - 0.5;
                let v = w as f64 / 2.0 - y / g - 0.5;
                taps.push(bilinear_taps(u, v, h, w)?);
            }
        }
        Ok(Self {
            geometry,
            angular_bins,
            radial_bins,
            radial_step_m,
            taps,
        })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn angular_bins(&self) -> usize {
        self.angular_bins
    }

    pub fn radial_bins(&self) -> usize {
        self.radial_bins
    }

    pub fn radial_step_m(&self) -> f64 {
        self.radial_step_m
    }

    pub fn sample(&self, q: &BevGrid) -> Result<PolarGrid> {
        let geo = q.geometry();
        if geo != self.geometry {
            return invalid(format!("grid geometry {geo:?} does not match sampler {:?}", self.geometry));
        }
        let c = geo.channels;
        let src = q.data().as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.taps.len() * c];
        for (dst, taps) in out.chunks_exact_mut(c).zip(&self.taps) {
            for &(cell, weight) in taps {
                if weight == 0.0 {
                    continue;
                }
                let row = &src[cell * c..(cell + 1) * c];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += weight * s;
                }
            }
        }
        let data = Array3::from_shape_vec((self.angular_bins, self.radial_bins, c), out).expect("shape");
        PolarGrid::new(data, self.radial_step_m)
    }
}

fn bilinear_taps(u: f64, v: f64, h: usize, w: usize) -> Result<[(usize, f64); 4]> {
    let (i0, fu) = split_coordinate(u, h)?;
    let (j0, fv) = split_coordinate(v, w)?;
    let i1 = (i0 + 1).min(h - 1);
    let j1 = (j0 + 1).min(w - 1);
    Ok([
        (i0 * w + j0, (1.0 - fu) * (1.0 - fv)),
        (i0 * w + j1, (1.0 - fu) * fv),
        (i1 * w + j0, fu * (1.0 - fv)),
        (i1 * w + j1, fu * fv),
    ])
}

fn split_coordinate(u: f64, n: usize) -> Result<(usize, f64)> {
    let max = (n - 1) as f64;
    if !(-1e-9..=max + 1e-9).contains(&u) {
        return invalid(format!("polar sample at cell coordinate {u} falls outside [0, {max}]"));
    }
    let u = u.clamp(0.0, max);
    let i = (u.floor() as usize).min(n - 1);
    Ok((i, u - i as f64))
}

/// Resamples a grid onto `angular_bins × radial_bins` polar bins whose disk
/// inscribes the grid.
pub fn polar_transform(q: &BevGrid, angular_bins: usize, radial_bins: usize) -> Result<PolarGrid> {
    PolarSampler::new(q.geometry(), angular_bins, radial_bins)?.sample(q)
}

pub fn polar_transform_with_step(q: &BevGrid, angular_bins: usize, radial_bins: usize, radial_step_m: f64) -> Result<PolarGrid> {
    PolarSampler::with_step(q.geometry(), angular_bins, radial_bins, radial_step_m)?.sample(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(n: usize, c: usize) -> GridGeometry {
        GridGeometry {
            height: n,
            width: n,
            channels: c,
            grid_size_m: 0.3,
        }
    }

    #[test]
    fn constant_grid_stays_constant() {
        let q = BevGrid::from_fn(geo(20, 3), |_, _, k| 0.25 + k as f64).unwrap();
        let p = polar_transform(&q, 24, 8).unwrap();
        assert_eq!(p.data().dim(), (24, 8, 3));
        for ((_, _, k), v) in p.data().indexed_iter() {
            assert!((v - (0.25 + k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_beyond_grid_is_rejected() {
        let q = BevGrid::zeros(geo(20, 1)).unwrap();
        // inscribed radius is 3 m
        assert!(polar_transform_with_step(&q, 8, 10, 0.31).is_err());
        assert!(polar_transform_with_step(&q, 8, 10, 0.3).is_ok());
    }

    #[test]
    fn angular_convention_left_is_zero_forward_is_ninety() {
        // a field equal to x (forward distance) peaks in the sector around 90°
        let q = BevGrid::from_fn(geo(40, 1), |x, _, _| x).unwrap();
        let p = polar_transform(&q, 4, 4).unwrap();
        // sector 0 centre is 45° (front-left), sector 2 centre is 225° (rear-right)
        assert!(p.data()[[0, 3, 0]] > 0.0);
        assert!(p.data()[[1, 3, 0]] > 0.0);
        assert!(p.data()[[2, 3, 0]] < 0.0);
        assert!(p.data()[[3, 3, 0]] < 0.0);
        // a field equal to y is positive in sector 0 (left) and negative in sector 1 (right)
        let q = BevGrid::from_fn(geo(40, 1), |_, y, _| y).unwrap();
        let p = polar_transform(&q, 4, 4).unwrap();
        assert!(p.data()[[0, 3, 0]] > 0.0);
        assert!(p.data()[[1, 3, 0]] < 0.0);
    }

    #[test]
    fn linear_field_is_reproduced_exactly() {
        // bilinear interpolation is exact for affine fields
        let q = BevGrid::from_fn(geo(30, 1), |x, y, _| 2.0 * x - 0.5 * y + 1.0).unwrap();
        let s = PolarSampler::new(q.geometry(), 12, 5).unwrap();
        let p = s.sample(&q).unwrap();
        for t in 0..12 {
            let theta = ((t as f64 + 0.5) * 30.0).to_radians();
            for r in 0..5 {
                let rho = (r as f64 + 0.5) * s.radial_step_m();
                let (x, y) = (rho * theta.sin(), rho * theta.cos());
                assert!((p.data()[[t, r, 0]] - (2.0 * x - 0.5 * y + 1.0)).abs() < 1e-9);
            }
        }
    }
}
