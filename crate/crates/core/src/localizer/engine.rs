use crate::error::{invalid, Result};
use crate::grid::{BevGrid, GlobalDescriptor, GridGeometry, LocalViewDescriptor, PolarGrid, PolarSampler};
use crate::net::{decode_local_view, global_pool, interact, DecoderWeights};

use super::yaw::{estimate_yaw_with, YawEstimate, DEFAULT_REFINE_ITERS};

/// Decoder weights bound to a grid geometry, with the polar sampling taps
/// precomputed. Cheap to share across threads.
#[derive(Clone, Debug)]
pub struct Engine {
    weights: DecoderWeights,
    sampler: PolarSampler,
}

impl Engine {
    pub fn new(weights: DecoderWeights, geometry: GridGeometry) -> Result<Self> {
        weights.validate()?;
        let cfg = &weights.config;
        if geometry.channels != cfg.channels {
            return invalid(format!(
                "grid has {} channels, decoder expects {}",
                geometry.channels, cfg.channels
            ));
        }
        let sampler = PolarSampler::new(geometry, cfg.angular_bins, cfg.radial_bins)?;
        Ok(Self { weights, sampler })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.sampler.geometry()
    }

    pub fn weights(&self) -> &DecoderWeights {
        &self.weights
    }

    pub fn angular_bins(&self) -> usize {
        self.weights.config.angular_bins
    }

    pub fn polar(&self, q: &BevGrid) -> Result<PolarGrid> {
        self.check_geometry(q)?;
        self.sampler.sample(q)
    }

    pub fn global_descriptor(&self, polar: &PolarGrid) -> Result<GlobalDescriptor> {
        global_pool(polar, self.weights.config.pooling)
    }

    pub fn local_view(&self, polar: &PolarGrid) -> Result<LocalViewDescriptor> {
        decode_local_view(polar, &self.weights)
    }

    /// Runs the interactor on the pair and estimates yaw on its outputs.
    pub fn match_pair(&self, ds: &LocalViewDescriptor, dt: &LocalViewDescriptor) -> Result<YawEstimate> {
        self.match_pair_with(ds, dt, DEFAULT_REFINE_ITERS)
    }

    pub fn match_pair_with(&self, ds: &LocalViewDescriptor, dt: &LocalViewDescriptor, refine_iters: usize) -> Result<YawEstimate> {
        let (a, b) = interact(ds, dt, &self.weights)?;
        estimate_yaw_with(&a, &b, refine_iters)
    }

    pub(crate) fn check_geometry(&self, q: &BevGrid) -> Result<()> {
        let g = q.geometry();
        if g != self.geometry() {
            return invalid(format!("grid geometry {g:?} does not match engine geometry {:?}", self.geometry()));
        }
        Ok(())
    }
}
