use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EvalRecord, Task};
use crate::dataset::DatasetManifest;
use crate::error::{invalid, Error, Result};
use crate::grid::FrameId;
use crate::pose::Pose2D;
use crate::synth::SessionRole;

pub const AOE_APE_DEFINITION: &str = "AOE/APE@p: over global queries whose Top-1 frame lies within the distance \
threshold, sort absolute yaw and position errors ascending and average the lowest ceil(p*n) of each";

const LOOP_DEFINITION: &str = "a loop pair is correct when both frames share place and floor, lie closer than the \
distance threshold and are not same-session neighbours within the exclusion window; ground-truth pairs are \
enumerated over map-role frames; CFER counts detected pairs whose floor labels differ";

const POSE_DEFINITION: &str = "pose errors over loop and pose records whose frames share a place: wrapped absolute \
yaw error and Euclidean translation error against the ground-truth alignment; RR counts errors strictly below \
each threshold; the confident variant keeps accepted records only";

#[derive(Clone, Debug, PartialEq)]
pub struct FrameTruth {
    pub pose: Pose2D,
    pub place: usize,
    pub floor: Option<String>,
    pub session: String,
    pub seq: u32,
    pub role: SessionRole,
}

/// Ground truth the metrics are scored against.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Truth {
    pub frames: BTreeMap<FrameId, FrameTruth>,
    pub exclusion_window: u32,
}

impl Truth {
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        let frames = m
            .frames
            .iter()
            .map(|f| {
                (
                    f.frame_id,
                    FrameTruth {
                        pose: f.pose,
                        place: f.place,
                        floor: f.floor.clone(),
                        session: f.session.clone(),
                        seq: f.seq,
                        role: f.role,
                    },
                )
            })
            .collect();
        Self {
            frames,
            exclusion_window: m.exclusion_window,
        }
    }

    pub fn frame(&self, id: FrameId) -> Result<&FrameTruth> {
        self.frames
            .get(&id)
            .ok_or_else(|| Error::InvalidState(format!("no ground truth for frame {id}")))
    }

    /// Same place and floor, closer than `threshold_m`.
    pub fn is_near(&self, a: FrameId, b: FrameId, threshold_m: f64) -> Result<bool> {
        let (fa, fb) = (self.frame(a)?, self.frame(b)?);
        Ok(fa.place == fb.place && fa.floor == fb.floor && fa.pose.translation_error_m(&fb.pose) < threshold_m)
    }

    pub fn is_loop(&self, a: FrameId, b: FrameId, threshold_m: f64) -> Result<bool> {
        let (fa, fb) = (self.frame(a)?, self.frame(b)?);
        let neighbours = fa.session == fb.session && fa.seq.abs_diff(fb.seq) <= self.exclusion_window;
        Ok(a != b && !neighbours && self.is_near(a, b, threshold_m)?)
    }

    /// Unordered true loop pairs among map-role frames, smaller id first.
    pub fn loop_pairs(&self, threshold_m: f64) -> Result<BTreeSet<(FrameId, FrameId)>> {
        let ids: Vec<FrameId> = self
            .frames
            .iter()
            .filter(|(_, f)| f.role == SessionRole::Map)
            .map(|(id, _)| *id)
            .collect();
        let mut out = BTreeSet::new();
        for (j, &b) in ids.iter().enumerate() {
            for &a in &ids[..j] {
                if self.is_loop(a, b, threshold_m)? {
                    out.insert((a.min(b), a.max(b)));
                }
            }
        }
        Ok(out)
    }

    pub fn alignment(&self, source: FrameId, target: FrameId) -> Result<Pose2D> {
        Ok(Pose2D::alignment(&self.frame(source)?.pose, &self.frame(target)?.pose))
    }
}

fn global_records(records: &[EvalRecord]) -> impl Iterator<Item = &EvalRecord> {
    records.iter().filter(|r| r.task == Task::Global)
}

/// Fraction of global queries with a frame within `threshold_m` among the
/// first `k` ranked frames. Every global record counts in the denominator.
pub fn recall_at_k(records: &[EvalRecord], truth: &Truth, k: usize, threshold_m: f64) -> Result<f64> {
    if k < 1 {
        return invalid("K must be at least 1");
    }
    let mut n = 0usize;
    let mut hits = 0usize;
    for r in global_records(records) {
        n += 1;
        let mut ranking = r.ranking()?;
        if ranking.is_empty() {
            ranking.push(r.target_id);
        }
        let mut hit = false;
        for id in ranking.iter().take(k) {
            hit |= truth.is_near(r.source_id, *id, threshold_m)?;
        }
        hits += usize::from(hit);
    }
    if n == 0 {
        return Err(Error::InvalidState("no global localization records".into()));
    }
    Ok(hits as f64 / n as f64)
}

/// Mean of the smallest `ceil(p·n)` values.
fn lowest_fraction_mean(mut v: Vec<f64>, p: f64) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let keep = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[..keep].iter().sum::<f64>() / keep as f64)
}

/// `(AOE, APE)` at fraction `p`; `None` when no query has a correct Top-1.
pub fn aoe_ape(records: &[EvalRecord], truth: &Truth, p: f64, threshold_m: f64) -> Result<Option<(f64, f64)>> {
    if !(p > 0.0 && p <= 1.0) {
        return invalid(format!("percentile fraction must lie in (0, 1], got {p}"));
    }
    let mut yaw = Vec::new();
    let mut pos = Vec::new();
    for r in global_records(records) {
        if !truth.is_near(r.source_id, r.target_id, threshold_m)? {
            continue;
        }
        let gt = truth.alignment(r.source_id, r.target_id)?;
        yaw.push(r.estimate().yaw_error_deg(&gt));
        pos.push(r.estimate().translation_error_m(&gt));
    }
    Ok(lowest_fraction_mean(yaw, p).zip(lowest_fraction_mean(pos, p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMetrics {
    pub detections: usize,
    pub true_pairs: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Absent when any detected pair lacks a floor label.
    pub cfer: Option<f64>,
}

pub fn loop_metrics(records: &[EvalRecord], truth: &Truth, threshold_m: f64) -> Result<LoopMetrics> {
    let detected: BTreeSet<(FrameId, FrameId)> = records
        .iter()
        .filter(|r| r.task == Task::Loop)
        .map(|r| (r.source_id.min(r.target_id), r.source_id.max(r.target_id)))
        .collect();
    let true_pairs = truth.loop_pairs(threshold_m)?;
    let mut correct = 0usize;
    let mut cross = 0usize;
    let mut floors_known = true;
    for &(a, b) in &detected {
        correct += usize::from(truth.is_loop(a, b, threshold_m)?);
        match (&truth.frame(a)?.floor, &truth.frame(b)?.floor) {
            (Some(fa), Some(fb)) => cross += usize::from(fa != fb),
            _ => floors_known = false,
        }
    }
    let n = detected.len();
    let frac = |x: usize, d: usize| (d > 0).then(|| x as f64 / d as f64);
    let found = detected.intersection(&true_pairs).count();
    Ok(LoopMetrics {
        detections: n,
        true_pairs: true_pairs.len(),
        precision: frac(correct, n),
        recall: frac(found, true_pairs.len()),
        cfer: if floors_known { frac(cross, n) } else { None },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub pairs: usize,
    pub mrre_deg: f64,
    pub mrte_m: f64,
    pub rr_rot: f64,
    pub rr_trans: f64,
}

pub fn pose_metrics(
    records: &[EvalRecord],
    truth: &Truth,
    rot_thresh_deg: f64,
    trans_thresh_m: f64,
    confident_only: bool,
) -> Result<PoseMetrics> {
    let mut rot = Vec::new();
    let mut trans = Vec::new();
    for r in records {
        if !matches!(r.task, Task::Loop | Task::Pose) || (confident_only && !r.accepted) {
            continue;
        }
        if truth.frame(r.source_id)?.place != truth.frame(r.target_id)?.place {
            continue;
        }
        let gt = truth.alignment(r.source_id, r.target_id)?;
        rot.push(r.estimate().yaw_error_deg(&gt));
        trans.push(r.estimate().translation_error_m(&gt));
    }
    if rot.is_empty() {
        return Err(Error::InvalidState("no pose records to evaluate".into()));
    }
    let n = rot.len() as f64;
    Ok(PoseMetrics {
        pairs: rot.len(),
        mrre_deg: rot.iter().sum::<f64>() / n,
        mrte_m: trans.iter().sum::<f64>() / n,
        rr_rot: rot.iter().filter(|e| **e < rot_thresh_deg).count() as f64 / n,
        rr_trans: trans.iter().filter(|e| **e < trans_thresh_m).count() as f64 / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub recall_ks: Vec<usize>,
    pub distance_m: f64,
    pub percentiles: Vec<f64>,
    pub rot_thresh_deg: f64,
    pub trans_thresh_m: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            recall_ks: vec![1, 5],
            distance_m: 2.0,
            percentiles: vec![0.25, 0.5],
            rot_thresh_deg: 5.0,
            trans_thresh_m: 2.0,
        }
    }
}

fn num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

/// Every metric as a flat object. Metrics that do not apply to the report
/// are `null`.
pub fn compute_metrics(records: &[EvalRecord], truth: &Truth, cfg: &MetricsConfig) -> Result<BTreeMap<String, Value>> {
    if records.is_empty() {
        return Err(Error::InvalidState("report has no records".into()));
    }
    let mut out = BTreeMap::new();
    let d = cfg.distance_m;
    out.insert("records".into(), Value::from(records.len()));

    let n_global = global_records(records).count();
    out.insert("global.queries".into(), Value::from(n_global));
    for &k in &cfg.recall_ks {
        let v = if n_global > 0 { Some(recall_at_k(records, truth, k, d)?) } else { None };
        out.insert(format!("global.recall@{k}"), num(v));
    }
    for &p in &cfg.percentiles {
        let v = if n_global > 0 { aoe_ape(records, truth, p, d)? } else { None };
        let pct = p * 100.0;
        out.insert(format!("global.aoe_deg@{pct}%"), num(v.map(|x| x.0)));
        out.insert(format!("global.ape_m@{pct}%"), num(v.map(|x| x.1)));
    }

    let has_loops = records.iter().any(|r| r.task == Task::Loop);
    let lm = if has_loops { Some(loop_metrics(records, truth, d)?) } else { None };
    out.insert("loop.detections".into(), num(lm.map(|m| m.detections as f64)));
    out.insert("loop.true_pairs".into(), num(lm.map(|m| m.true_pairs as f64)));
    out.insert(format!("loop.precision@{d}m"), num(lm.and_then(|m| m.precision)));
    out.insert(format!("loop.recall@{d}m"), num(lm.and_then(|m| m.recall)));
    out.insert("loop.cfer".into(), num(lm.and_then(|m| m.cfer)));

    for (prefix, confident) in [("pose", false), ("pose_confident", true)] {
        let pm = match pose_metrics(records, truth, cfg.rot_thresh_deg, cfg.trans_thresh_m, confident) {
            Ok(m) => Some(m),
            Err(Error::InvalidState(_)) => None,
            Err(e) => return Err(e),
        };
        out.insert(format!("{prefix}.pairs"), Value::from(pm.map_or(0, |m| m.pairs)));
        out.insert(format!("{prefix}.mrre_deg"), num(pm.map(|m| m.mrre_deg)));
        out.insert(format!("{prefix}.mrte_m"), num(pm.map(|m| m.mrte_m)));
        out.insert(format!("{prefix}.rr@{}deg", cfg.rot_thresh_deg), num(pm.map(|m| m.rr_rot)));
        out.insert(format!("{prefix}.rr@{}m", cfg.trans_thresh_m), num(pm.map(|m| m.rr_trans)));
    }

    out.insert("definition.aoe_ape".into(), Value::from(AOE_APE_DEFINITION));
    out.insert("definition.loop".into(), Value::from(LOOP_DEFINITION));
    out.insert("definition.pose".into(), Value::from(POSE_DEFINITION));
    Ok(out)
}
