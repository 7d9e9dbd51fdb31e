use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{GlobalDescriptor, PolarGrid};

/// Aggregation of polar cells into a global descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pooling {
    /// Generalized mean: per channel `(mean |v|^p)^(1/p)`.
    Gem { p: f64 },
    Mean,
    Max,
}

impl Pooling {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Pooling::Gem { p } if !(p >= 1.0 && p.is_finite()) => invalid(format!("GeM exponent must be >= 1, got {p}")),
            _ => Ok(()),
        }
    }
}

/// Pools every polar cell per channel, then L2-normalizes.
pub fn global_pool(polar: &PolarGrid, pooling: Pooling) -> Result<GlobalDescriptor> {
    pooling.validate()?;
    let (t, r, c) = polar.data().dim();
    let cells = polar.data().view().into_shape_with_order((t * r, c)).expect("contiguous polar grid");
    let pooled: Array1<f64> = match pooling {
        Pooling::Gem { p } => {
            let n = (t * r) as f64;
            let mut acc = Array1::<f64>::zeros(c);
            for row in cells.axis_iter(Axis(0)) {
                for (a, v) in acc.iter_mut().zip(row.iter()) {
                    *a += v.abs().powf(p);
                }
            }
            acc.mapv(|s| (s / n).powf(1.0 / p))
        }
        Pooling::Mean => cells.mean_axis(Axis(0)).expect("non-empty"),
        Pooling::Max => cells.fold_axis(Axis(0), f64::NEG_INFINITY, |m, v| m.max(*v)),
    };
    GlobalDescriptor::new(pooled)
}
