use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{bev_pad, BevGrid, GridGeometry, LocalViewDescriptor};
use crate::net::DecoderWeights;
use crate::pose::Pose2D;

use super::engine::Engine;
use super::yaw::DEFAULT_REFINE_ITERS;

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub coarse_step_m: f64,
    /// Half-width of the square coarse grid.
    pub coarse_extent_m: f64,
    pub coarse_keep: usize,
    /// Random translations drawn around each kept coarse cell.
    pub fine_samples: usize,
    pub fine_radius_m: f64,
    pub yaw_refine_iters: usize,
    pub confidence_threshold: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            coarse_step_m: 0.9,
            coarse_extent_m: 6.0,
            coarse_keep: 5,
            fine_samples: 32,
            fine_radius_m: 0.45,
            yaw_refine_iters: DEFAULT_REFINE_ITERS,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, geometry: GridGeometry) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.coarse_step_m) {
            return invalid(format!("coarse step must be positive, got {}", self.coarse_step_m));
        }
        if !(self.coarse_extent_m >= 0.0 && self.fine_radius_m >= 0.0) {
            return invalid("search extent and fine radius must be non-negative");
        }
        if self.coarse_keep < 1 {
            return invalid("coarse_keep must be at least 1");
        }
        if !(self.confidence_threshold >= 0.0) {
            return invalid(format!("confidence threshold must be non-negative, got {}", self.confidence_threshold));
        }
        let (h, w) = geometry.extent_m();
        let half = h.min(w) / 2.0;
        let reach = self.coarse_extent_m + self.fine_radius_m;
        if reach > half {
            return invalid(format!(
                "search reaches {reach} m but the grid only allows {half} m"
            ));
        }
        Ok(())
    }

    /// Coarse translations in row-major order, `x` outer.
    pub fn coarse_grid(&self) -> Vec<[f64; 2]> {
        let n = (self.coarse_extent_m / self.coarse_step_m + 1e-9).floor() as i64;
        let mut out = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
        for i in -n..=n {
            for j in -n..=n {
                out.push([i as f64 * self.coarse_step_m, j as f64 * self.coarse_step_m]);
            }
        }
        out
    }

    /// Uniform draws from the disk of radius `fine_radius_m` around each center.
    pub fn fine_translations(&self, centers: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(centers.len() * self.fine_samples);
        for c in centers {
            for _ in 0..self.fine_samples {
                let r = self.fine_radius_m * rng.random::<f64>().sqrt();
                let a = std::f64::consts::TAU * rng.random::<f64>();
                out.push([c[0] + r * a.cos(), c[1] + r * a.sin()]);
            }
        }
        out
    }
}

/// A translation hypothesis scored by the yaw estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hypothesis {
    pub translation: [f64; 2],
    pub yaw_deg: f64,
    pub cost: f64,
}

impl Hypothesis {
    fn beats(&self, other: &Hypothesis) -> bool {
        self.cost < other.cost || (self.cost == other.cost && self.yaw_deg.abs() < other.yaw_deg.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    /// Alignment from the source frame to the target frame.
    pub pose: Pose2D,
    pub cost: f64,
    pub accepted: bool,
}

impl PoseEstimate {
    pub fn from_hypothesis(h: &Hypothesis, threshold: f64) -> Self {
        Self {
            pose: Pose2D::new(h.translation[0], h.translation[1], h.yaw_deg),
            cost: h.cost,
            accepted: h.cost < threshold,
        }
    }
}

/// Index of the best hypothesis; earlier entries win exact ties.
pub fn best_hypothesis(hyps: &[Hypothesis]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, h) in hyps.iter().enumerate() {
        if best.is_none_or(|b| h.beats(&hyps[b])) {
            best = Some(i);
        }
    }
    best
}

impl Engine {
    /// Pads the source by each translation, decodes it, and matches it
    /// against the target descriptor. Output order follows `translations`.
    pub fn evaluate_translations(
        &self,
        source: &BevGrid,
        target: &LocalViewDescriptor,
        translations: &[[f64; 2]],
        refine_iters: usize,
    ) -> Result<Vec<Hypothesis>> {
        self.check_geometry(source)?;
        translations
            .par_iter()
            .map(|t| {
                let padded = bev_pad(source, t[0], t[1])?;
                let ds = self.local_view(&self.polar(&padded)?)?;
                let e = self.match_pair_with(&ds, target, refine_iters)?;
                Ok(Hypothesis { translation: *t, yaw_deg: e.yaw_deg, cost: e.cost })
            })
            .collect()
    }

    /// Coarse-to-fine search for the alignment of `source` onto `target`.
    pub fn metric_localize(&self, source: &BevGrid, target: &BevGrid, cfg: &SearchConfig) -> Result<PoseEstimate> {
        self.metric_localize_with(source, target, cfg, &[])
    }

    /// As [`Engine::metric_localize`], with extra translations scored in the
    /// coarse stage.
    pub fn metric_localize_with(
        &self,
        source: &BevGrid,
        target: &BevGrid,
        cfg: &SearchConfig,
        extra: &[[f64; 2]],
    ) -> Result<PoseEstimate> {
        let dt = self.local_view(&self.polar(target)?)?;
        self.metric_localize_to(source, &dt, cfg, extra)
    }

    /// Search against an already decoded target descriptor.
    pub fn metric_localize_to(
        &self,
        source: &BevGrid,
        dt: &LocalViewDescriptor,
        cfg: &SearchConfig,
        extra: &[[f64; 2]],
    ) -> Result<PoseEstimate> {
        self.check_geometry(source)?;
        cfg.validate(self.geometry())?;

        let mut coarse_t = cfg.coarse_grid();
        coarse_t.extend_from_slice(extra);
        let coarse = self.evaluate_translations(source, dt, &coarse_t, cfg.yaw_refine_iters)?;

        let mut order: Vec<usize> = (0..coarse.len()).collect();
        order.sort_by(|&a, &b| {
            let (ha, hb) = (&coarse[a], &coarse[b]);
            ha.cost
                .total_cmp(&hb.cost)
                .then(ha.yaw_deg.abs().total_cmp(&hb.yaw_deg.abs()))
                .then(a.cmp(&b))
        });
        let kept: Vec<[f64; 2]> = order.iter().take(cfg.coarse_keep).map(|&i| coarse[i].translation).collect();
        let fine = self.evaluate_translations(source, dt, &cfg.fine_translations(&kept), cfg.yaw_refine_iters)?;

        let mut all = coarse;
        all.extend(fine);
        let best = best_hypothesis(&all).expect("coarse grid is never empty");
        Ok(PoseEstimate::from_hypothesis(&all[best], cfg.confidence_threshold))
    }
}

pub fn metric_localize(
    source: &BevGrid,
    target: &BevGrid,
    weights: &DecoderWeights,
    cfg: &SearchConfig,
) -> Result<PoseEstimate> {
    Engine::new(weights.clone(), source.geometry())?.metric_localize(source, target, cfg)
}
