use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BevGrid, FrameId, LocalViewDescriptor};
use crate::net::DecoderWeights;

use super::engine::Engine;
use super::index::{Candidate, DescriptorIndex};
use super::rerank::RankedCandidate;
use super::search::{PoseEstimate, SearchConfig};

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    pub top_k: usize,
    pub rerank: bool,
    pub search: SearchConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            rerank: true,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalLocalization {
    /// Candidates in global-descriptor order.
    pub retrieved: Vec<Candidate>,
    /// Final ordering; equals `retrieved` when reranking is skipped.
    pub ranking: Vec<RankedCandidate>,
    pub top1: FrameId,
    /// Alignment from the query to the Top-1 map frame.
    pub estimate: PoseEstimate,
}

impl Engine {
    /// Retrieval, reranking and metric localization against the Top-1 frame.
    /// Every retrieved entry must carry a local-view descriptor.
    pub fn localize_global(&self, index: &DescriptorIndex, query: &BevGrid, cfg: &GlobalConfig) -> Result<GlobalLocalization> {
        let polar = self.polar(query)?;
        let g = self.global_descriptor(&polar)?;
        let ds = self.local_view(&polar)?;
        let retrieved = index.topo_retrieve(&g, cfg.top_k)?;
        let views = retrieved
            .iter()
            .map(|c| local_view_of(index, c.frame_id))
            .collect::<Result<Vec<_>>>()?;
        let ranking = if cfg.rerank && retrieved.len() > 1 {
            self.rerank(&retrieved, &ds, &views)?
        } else {
            retrieved.iter().map(RankedCandidate::unscored).collect()
        };
        let top1 = ranking[0].frame_id;
        let target = local_view_of(index, top1)?;
        let estimate = self.metric_localize_to(query, &target, &cfg.search, &[])?;
        Ok(GlobalLocalization {
            retrieved,
            ranking,
            top1,
            estimate,
        })
    }
}

fn local_view_of(index: &DescriptorIndex, id: FrameId) -> Result<LocalViewDescriptor> {
    index
        .get(id)
        .and_then(|e| e.local_view.clone())
        .ok_or_else(|| Error::InvalidState(format!("frame {id} has no stored local-view descriptor")))
}

pub fn localize_global(
    index: &DescriptorIndex,
    query: &BevGrid,
    weights: &DecoderWeights,
    cfg: &GlobalConfig,
) -> Result<GlobalLocalization> {
    Engine::new(weights.clone(), query.geometry())?.localize_global(index, query, cfg)
}
