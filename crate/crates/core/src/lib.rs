//! BEV-grid localization engine.
//!
//! Consumes bird's-eye-view feature grids and provides:
//!
//! - [`grid`]: grid types, circular shifting, polar resampling, BEV padding
//!   and the descriptor matching cost;
//! - [`net`]: forward passes of the descriptor networks (radius- and
//!   theta-aware self-attention, cross-attention interaction, pooling);
//! - [`localizer`]: yaw estimation, coarse-to-fine metric pose search,
//!   retrieval, re-ranking and loop candidates;
//! - [`losses`]: the training losses with analytic gradients and the
//!   hard-mining triplet sampler;
//! - [`synth`]: a deterministic synthetic world used as a ground-truth oracle;
//! - [`eval`]: reports and evaluation metrics.

pub mod blob;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grid;
pub mod localizer;
pub mod losses;
pub mod net;
pub mod pose;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{BevGrid, FrameId, GlobalDescriptor, GridGeometry, LocalViewDescriptor, PolarGrid};
pub use pose::{wrap_deg, Pose2D};
