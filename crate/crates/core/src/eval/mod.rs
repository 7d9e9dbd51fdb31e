//! Per-query report records, their CSV form, and the evaluation metrics.

mod metrics;
pub mod plot;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::csv_error;
use crate::error::{Error, Result};
use crate::grid::FrameId;
use crate::pose::Pose2D;

pub use metrics::{
    aoe_ape, compute_metrics, loop_metrics, pose_metrics, recall_at_k, FrameTruth, LoopMetrics, MetricsConfig,
    PoseMetrics, Truth, AOE_APE_DEFINITION,
};

/// Column order of every report CSV.
pub const REPORT_COLUMNS: [&str; 18] = [
    "task",
    "source_id",
    "target_id",
    "rank_list",
    "est_x_m",
    "est_y_m",
    "est_yaw_deg",
    "cost",
    "accepted",
    "gt_x_m",
    "gt_y_m",
    "gt_yaw_deg",
    "gt_nearest_id",
    "gt_nearest_m",
    "source_wx",
    "source_wy",
    "target_wx",
    "target_wy",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Retrieval, reranking and pose against the Top-1 map frame.
    Global,
    /// A detected loop pair with its estimated pose.
    Loop,
    /// Metric pose on a listed pair.
    Pose,
}

/// One report row. `target_id` is the Top-1 frame for global queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task: Task,
    pub source_id: FrameId,
    pub target_id: FrameId,
    /// Final ranking for global queries, space-separated; empty otherwise.
    pub rank_list: String,
    pub est_x_m: f64,
    pub est_y_m: f64,
    pub est_yaw_deg: f64,
    pub cost: f64,
    pub accepted: bool,
    /// Ground-truth alignment from source to target, when poses are known.
    pub gt_x_m: Option<f64>,
    pub gt_y_m: Option<f64>,
    pub gt_yaw_deg: Option<f64>,
    /// Closest map frame to the source and its distance.
    pub gt_nearest_id: Option<FrameId>,
    pub gt_nearest_m: Option<f64>,
    pub source_wx: Option<f64>,
    pub source_wy: Option<f64>,
    pub target_wx: Option<f64>,
    pub target_wy: Option<f64>,
}

impl EvalRecord {
    pub fn new(task: Task, source_id: FrameId, target_id: FrameId, estimate: Pose2D, cost: f64, accepted: bool) -> Self {
        Self {
            task,
            source_id,
            target_id,
            rank_list: String::new(),
            est_x_m: estimate.x_m,
            est_y_m: estimate.y_m,
            est_yaw_deg: estimate.yaw_deg,
            cost,
            accepted,
            gt_x_m: None,
            gt_y_m: None,
            gt_yaw_deg: None,
            gt_nearest_id: None,
            gt_nearest_m: None,
            source_wx: None,
            source_wy: None,
            target_wx: None,
            target_wy: None,
        }
    }

    pub fn with_ranking(mut self, ranking: &[FrameId]) -> Self {
        self.rank_list = ranking.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ");
        self
    }

    /// Fills the ground-truth columns from world poses.
    pub fn with_truth(mut self, source: &Pose2D, target: &Pose2D, nearest: Option<(FrameId, f64)>) -> Self {
        let gt = Pose2D::alignment(source, target);
        self.gt_x_m = Some(gt.x_m);
        self.gt_y_m = Some(gt.y_m);
        self.gt_yaw_deg = Some(gt.yaw_deg);
        self.source_wx = Some(source.x_m);
        self.source_wy = Some(source.y_m);
        self.target_wx = Some(target.x_m);
        self.target_wy = Some(target.y_m);
        if let Some((id, d)) = nearest {
            self.gt_nearest_id = Some(id);
            self.gt_nearest_m = Some(d);
        }
        self
    }

    pub fn estimate(&self) -> Pose2D {
        Pose2D::new(self.est_x_m, self.est_y_m, self.est_yaw_deg)
    }

    pub fn ranking(&self) -> Result<Vec<FrameId>> {
        self.rank_list
            .split_whitespace()
            .map(|s| {
                s.parse::<u32>()
                    .map(FrameId)
                    .map_err(|_| Error::InvalidArgument(format!("bad frame id {s:?} in rank list")))
            })
            .collect()
    }
}

pub fn write_report(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(REPORT_COLUMNS).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(REPORT_COLUMNS.iter().copied()) {
        return Err(Error::format(path, Some(1), "report header does not match the expected column order"));
    }
    let mut out = Vec::new();
    for row in r.deserialize::<EvalRecord>() {
        let rec = row.map_err(|e| csv_error(path, e))?;
        rec.ranking().map_err(|e| Error::format(path, Some(out.len() + 2), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
