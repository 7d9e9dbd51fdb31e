//! Grid types and the geometric primitives shared by every other module.
//!
//! Coordinate conventions (shared crate-wide):
//!
//! ```text
//!            +x (forward)            row index grows downwards,
//!                ^                   column index grows rightwards;
//!                |                   the ego sits at the exact grid
//!       +y <-----+ ego               centre, continuous (H/2, W/2).
//!      (left)
//!
//!  polar angle θ is measured from +y towards +x:
//!  θ = 0 points left, θ = 90° points forward.
//! ```
//!
//! A point `(x, y)` in the ego frame lies at continuous cell coordinates
//! `(H/2 - x/g, W/2 - y/g)`; cell `(i, j)` spans `[i, i+1) × [j, j+1)`.

mod cost;
mod pad;
mod polar;
mod shift;
mod types;

pub use cost::{matching_cost, row_distance_mean};
pub use pad::{bev_pad, snap_integer};
pub use polar::{polar_transform, polar_transform_with_step, PolarSampler};
pub use shift::{circular_shift, roll};
pub use types::{BevGrid, FrameId, GlobalDescriptor, GridGeometry, LocalViewDescriptor, PolarGrid};
