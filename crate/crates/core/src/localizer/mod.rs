//! Yaw estimation, coarse-to-fine metric search, retrieval and reranking.

mod engine;
mod global;
mod index;
mod rerank;
mod search;
mod yaw;

pub use engine::Engine;
pub use global::{localize_global, GlobalConfig, GlobalLocalization, DEFAULT_TOP_K};
pub use index::{
    Candidate, DescriptorIndex, IndexEntry, DEFAULT_EXCLUSION_WINDOW, DEFAULT_LOOP_THRESHOLD, INDEX_FORMAT, INDEX_VERSION,
};
pub use rerank::{rerank, rerank_by, RankedCandidate};
pub use search::{best_hypothesis, metric_localize, Hypothesis, PoseEstimate, SearchConfig, DEFAULT_CONFIDENCE_THRESHOLD};
pub use yaw::{estimate_yaw, estimate_yaw_with, shift_to_yaw, shifted_cost, YawEstimate, DEFAULT_REFINE_ITERS};
