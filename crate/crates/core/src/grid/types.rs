use std::fmt;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Identifier of a keyframe within a dataset or index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameId(pub u32);

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Shape and resolution of a Cartesian BEV grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub grid_size_m: f64,
}

impl GridGeometry {
    /// 100 × 100 cells of 0.3 m with 256 channels.
    pub const DEFAULT: GridGeometry = GridGeometry {
        height: 100,
        width: 100,
        channels: 256,
        grid_size_m: 0.3,
    };

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 || self.channels < 1 {
            return invalid(format!(
                "grid must be at least 2x2x1, got {}x{}x{}",
                self.height, self.width, self.channels
            ));
        }
        if !(self.grid_size_m > 0.0 && self.grid_size_m.is_finite()) {
            return invalid(format!("grid size must be positive, got {}", self.grid_size_m));
        }
        Ok(())
    }

    /// Radius of the disk inscribed in the grid, in meters.
    pub fn inscribed_radius_m(&self) -> f64 {
        self.height.min(self.width) as f64 / 2.0 * self.grid_size_m
    }

    pub fn extent_m(&self) -> (f64, f64) {
        (self.height as f64 * self.grid_size_m, self.width as f64 * self.grid_size_m)
    }
}

/// Cartesian H×W×C feature grid in the ego frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    data: Array3<f64>,
    grid_size_m: f64,
}

impl BevGrid {
    pub fn new(data: Array3<f64>, grid_size_m: f64) -> Result<Self> {
        let (h, w, c) = data.dim();
        GridGeometry {
            height: h,
            width: w,
            channels: c,
            grid_size_m,
        }
        .validate()?;
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("BEV grid contains non-finite values");
        }
        Ok(Self { data, grid_size_m })
    }

    pub fn zeros(geometry: GridGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(Self {
            data: Array3::zeros((geometry.height, geometry.width, geometry.channels)),
            grid_size_m: geometry.grid_size_m,
        })
    }

    /// Builds a grid by evaluating `f(x_m, y_m, channel)` at every cell centre.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(f64, f64, usize) -> f64) -> Result<Self> {
        geometry.validate()?;
        let g = geometry.grid_size_m;
        let (h, w) = (geometry.height as f64, geometry.width as f64);
        let data = Array3::from_shape_fn((geometry.height, geometry.width, geometry.channels), |(i, j, k)| {
            let x = (h / 2.0 - (i as f64 + 0.5)) * g;
            let y = (w / 2.0 - (j as f64 + 0.5)) * g;
            f(x, y, k)
        });
        Self::new(data, g)
    }

    pub fn geometry(&self) -> GridGeometry {
        let (h, w, c) = self.data.dim();
        GridGeometry {
            height: h,
            width: w,
            channels: c,
            grid_size_m: self.grid_size_m,
        }
    }

    pub fn grid_size_m(&self) -> f64 {
        self.grid_size_m
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub(crate) fn from_parts_unchecked(data: Array3<f64>, grid_size_m: f64) -> Self {
        Self { data, grid_size_m }
    }
}

/// T×R×C angular/radial resampling of a [`BevGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolarGrid {
    data: Array3<f64>,
    radial_step_m: f64,
}

impl PolarGrid {
    pub fn new(data: Array3<f64>, radial_step_m: f64) -> Result<Self> {
        let (t, r, c) = data.dim();
        if t == 0 || r == 0 || c == 0 {
            return invalid(format!("polar grid must be non-empty, got {t}x{r}x{c}"));
        }
        if !(radial_step_m > 0.0 && radial_step_m.is_finite()) {
            return invalid(format!("radial step must be positive, got {radial_step_m}"));
        }
        Ok(Self { data, radial_step_m })
    }

    pub fn angular_bins(&self) -> usize {
        self.data.dim().0
    }

    pub fn radial_bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn radial_step_m(&self) -> f64 {
        self.radial_step_m
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// T×C matrix of per-sector features; row `t` covers the sector
/// `[t, t+1) · 360/T` degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalViewDescriptor {
    data: Array2<f64>,
    normalized: bool,
}

impl LocalViewDescriptor {
    /// Wraps raw rows without normalizing them.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return invalid("local-view descriptor must be non-empty");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("local-view descriptor contains non-finite values");
        }
        Ok(Self {
            data,
            normalized: false,
        })
    }

    /// L2-normalizes every row. All-zero rows stay zero.
    pub fn normalized(data: Array2<f64>) -> Result<Self> {
        let mut d = Self::new(data)?;
        normalize_rows(&mut d.data);
        d.normalized = true;
        Ok(d)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

pub(crate) fn normalize_rows(data: &mut Array2<f64>) {
    for mut row in data.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n > 1e-12 {
            row /= n;
        }
    }
}

/// Fixed-length unit vector used for retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDescriptor {
    data: Array1<f64>,
    frame_id: Option<FrameId>,
}

impl GlobalDescriptor {
    /// Normalizes `data` to unit length.
    pub fn new(mut data: Array1<f64>) -> Result<Self> {
        if data.is_empty() {
            return invalid("global descriptor must be non-empty");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("global descriptor contains non-finite values");
        }
        let n = data.dot(&data).sqrt();
        if n <= 1e-12 {
            return invalid("cannot normalize an all-zero global descriptor");
        }
        data /= n;
        Ok(Self { data, frame_id: None })
    }

    pub fn with_frame_id(mut self, id: FrameId) -> Self {
        self.frame_id = Some(id);
        self
    }

    pub fn frame_id(&self) -> Option<FrameId> {
        self.frame_id
    }

    pub fn data(&self) -> &Array1<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn distance(&self, other: &GlobalDescriptor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
