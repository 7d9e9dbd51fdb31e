use crate::error::{invalid, Result};
use crate::grid::{FrameId, LocalViewDescriptor};

use super::engine::Engine;
use super::index::Candidate;
use super::yaw::{estimate_yaw, YawEstimate};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedCandidate {
    pub frame_id: FrameId,
    pub global_distance: f64,
    /// Padding-free matching cost; `None` when reranking was skipped.
    pub cost: Option<f64>,
    pub yaw_deg: Option<f64>,
}

impl RankedCandidate {
    pub fn unscored(c: &Candidate) -> Self {
        Self {
            frame_id: c.frame_id,
            global_distance: c.distance,
            cost: None,
            yaw_deg: None,
        }
    }
}

/// Reorders candidates by yaw-matching cost with the plain estimator.
pub fn rerank(
    candidates: &[Candidate],
    source: &LocalViewDescriptor,
    descriptors: &[LocalViewDescriptor],
) -> Result<Vec<RankedCandidate>> {
    rerank_by(candidates, source, descriptors, estimate_yaw)
}

/// Reorders candidates by the cost `matcher` reports against `source`.
/// Sort key: cost, then `|yaw|`, then frame id.
pub fn rerank_by(
    candidates: &[Candidate],
    source: &LocalViewDescriptor,
    descriptors: &[LocalViewDescriptor],
    matcher: impl Fn(&LocalViewDescriptor, &LocalViewDescriptor) -> Result<YawEstimate>,
) -> Result<Vec<RankedCandidate>> {
    if candidates.len() != descriptors.len() {
        return invalid(format!(
            "{} candidates but {} descriptors",
            candidates.len(),
            descriptors.len()
        ));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for (c, d) in candidates.iter().zip(descriptors) {
        let e = matcher(source, d)?;
        out.push(RankedCandidate {
            frame_id: c.frame_id,
            global_distance: c.distance,
            cost: Some(e.cost),
            yaw_deg: Some(e.yaw_deg),
        });
    }
    out.sort_by(|a, b| {
        let key = |r: &RankedCandidate| (r.cost.unwrap_or(f64::INFINITY), r.yaw_deg.unwrap_or(0.0).abs());
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.frame_id.cmp(&b.frame_id))
    });
    Ok(out)
}

impl Engine {
    /// Reranks with the interactor in the loop, as the full matcher does.
    pub fn rerank(
        &self,
        candidates: &[Candidate],
        source: &LocalViewDescriptor,
        descriptors: &[LocalViewDescriptor],
    ) -> Result<Vec<RankedCandidate>> {
        rerank_by(candidates, source, descriptors, |a, b| self.match_pair(a, b))
    }
}
