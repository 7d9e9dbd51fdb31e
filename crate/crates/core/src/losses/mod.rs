//! Training losses as plain forward functions with analytic gradients, and
//! the hard-mining triplet sampler.
//!
//! Losses are defined on raw arrays so that gradients can be checked by
//! perturbing individual entries; the typed wrappers take descriptors.

mod grad;
mod sampler;
pub mod verify;

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{bev_pad, circular_shift, BevGrid, GlobalDescriptor, LocalViewDescriptor};
use crate::localizer::Engine;
use crate::net::DecoderWeights;
use crate::pose::Pose2D;

pub use grad::{loss_gradients, loss_value, Gradients, LossKind, KINK_EPS};
pub use sampler::{SampleFrame, SamplerConfig, Triplet, TripletSampler};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossMargins {
    pub triplet: f64,
    pub hinge_pos: f64,
    pub hinge_neg: f64,
    /// Log scale of the yaw loss.
    pub gamma: f64,
    pub yaw_pos: f64,
    pub yaw_neg: f64,
    pub translation: f64,
}

impl Default for LossMargins {
    fn default() -> Self {
        Self {
            triplet: 0.1,
            hinge_pos: 0.1,
            hinge_neg: 0.2,
            gamma: 40.0,
            yaw_pos: 0.1,
            yaw_neg: 1.4,
            translation: 0.1,
        }
    }
}

impl LossMargins {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.triplet,
            self.hinge_pos,
            self.hinge_neg,
            self.gamma,
            self.yaw_pos,
            self.yaw_neg,
            self.translation,
        ];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid("all loss margins must be positive");
        }
        if self.hinge_neg <= self.hinge_pos || self.yaw_neg <= self.yaw_pos {
            return invalid("negative margins must exceed positive margins");
        }
        Ok(())
    }
}

pub(crate) fn l2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn triplet_margin_loss(gs: &GlobalDescriptor, gp: &GlobalDescriptor, gn: &GlobalDescriptor, m: &LossMargins) -> f64 {
    triplet_raw(gs.data().view(), gp.data().view(), gn.data().view(), m)
}

pub fn hinge_loss(gs: &GlobalDescriptor, gp: &GlobalDescriptor, gn: &GlobalDescriptor, m: &LossMargins) -> f64 {
    hinge_raw(gs.data().view(), gp.data().view(), gn.data().view(), m)
}

pub(crate) fn triplet_raw(gs: ArrayView1<f64>, gp: ArrayView1<f64>, gn: ArrayView1<f64>, m: &LossMargins) -> f64 {
    (l2(gs, gp) - l2(gs, gn) + m.triplet).max(0.0)
}

pub(crate) fn hinge_raw(gs: ArrayView1<f64>, gp: ArrayView1<f64>, gn: ArrayView1<f64>, m: &LossMargins) -> f64 {
    (l2(gs, gp) - m.hinge_pos).max(0.0) + (m.hinge_neg - l2(gs, gn)).max(0.0)
}

/// Yaw loss between an aligned source descriptor and the positive descriptor.
///
/// Per row `i`: `log(1 + exp(P_i) · Σ_{j≠i} exp(N_ij))` with
/// `P_i = γ(δ_ii − m_p)²` and `N_ij = γ(m_n − δ_ij)²`, evaluated as
/// `softplus(P_i + logsumexp_j N_ij)`. Rows pair by plain index.
pub fn circle_yaw_loss(ds_aligned: &LocalViewDescriptor, dp: &LocalViewDescriptor, m: &LossMargins) -> Result<f64> {
    check_pair(ds_aligned.view(), dp.view())?;
    circle_raw(ds_aligned.view(), dp.view(), m)
}

pub(crate) fn check_pair(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return invalid(format!("descriptor shapes differ: {:?} vs {:?}", a.dim(), b.dim()));
    }
    if a.iter().chain(b.iter()).any(|v| v.is_nan()) {
        return invalid("descriptor contains NaN");
    }
    Ok(())
}

pub(crate) fn circle_raw(a: ArrayView2<f64>, b: ArrayView2<f64>, m: &LossMargins) -> Result<f64> {
    check_pair(a, b)?;
    let t = a.nrows();
    let mut total = 0.0;
    for i in 0..t {
        let pos = m.gamma * (l2(a.row(i), b.row(i)) - m.yaw_pos).powi(2);
        let neg: Vec<f64> = (0..t)
            .filter(|&j| j != i)
            .map(|j| m.gamma * (m.yaw_neg - l2(a.row(i), b.row(j))).powi(2))
            .collect();
        if neg.is_empty() {
            continue;
        }
        total += softplus(pos + log_sum_exp(&neg));
    }
    Ok(total / t as f64)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn translation_bias_loss(
    d_true: &LocalViewDescriptor,
    d_biased: &LocalViewDescriptor,
    dp: &LocalViewDescriptor,
    m: &LossMargins,
) -> Result<f64> {
    translation_raw(d_true.view(), d_biased.view(), dp.view(), m)
}

pub(crate) fn translation_raw(t: ArrayView2<f64>, b: ArrayView2<f64>, p: ArrayView2<f64>, m: &LossMargins) -> Result<f64> {
    check_pair(t, p)?;
    check_pair(b, p)?;
    Ok((row_cost(t, p) - row_cost(b, p) + m.translation).max(0.0))
}

pub(crate) fn row_cost(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let t = a.nrows();
    (0..t).map(|i| l2(a.row(i), b.row(i))).sum::<f64>() / t as f64
}

impl Engine {
    /// Source descriptor after padding by the alignment's translation and
    /// rolling by `−T·yaw/360` rows, so that it lines up with the target.
    pub fn aligned_source_descriptor(&self, qs: &BevGrid, xi: &Pose2D) -> Result<LocalViewDescriptor> {
        let padded = bev_pad(qs, xi.x_m, xi.y_m)?;
        let d = self.local_view(&self.polar(&padded)?)?;
        let shift = -(self.angular_bins() as f64) * xi.yaw_deg / 360.0;
        LocalViewDescriptor::new(circular_shift(d.data(), shift, 0)?)
    }
}

pub fn aligned_source_descriptor(qs: &BevGrid, xi: &Pose2D, weights: &DecoderWeights) -> Result<LocalViewDescriptor> {
    Engine::new(weights.clone(), qs.geometry())?.aligned_source_descriptor(qs, xi)
}

/// Translation perturbation drawn uniformly (by area) from the annulus
/// `0.3 m ≤ ‖Δ‖ ≤ 1.5 m`.
pub fn sample_translation_bias(rng: &mut impl Rng) -> [f64; 2] {
    const INNER: f64 = 0.3;
    const OUTER: f64 = 1.5;
    let r = (INNER * INNER + rng.random::<f64>() * (OUTER * OUTER - INNER * INNER)).sqrt();
    let a = std::f64::consts::TAU * rng.random::<f64>();
    [r * a.cos(), r * a.sin()]
}
