//! On-disk datasets: `manifest.json`, `poses.csv` and one blob per frame grid.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/poses.csv            frame_id,session,floor,x,y,yaw_deg
//! <dir>/grids/<frame>.bvl
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{invalid, Error, Result};
use crate::grid::{BevGrid, FrameId, GridGeometry};
use crate::pose::Pose2D;
use crate::synth::{GroundTruth, SessionRole, SynthFrame, SynthWorld};

pub const DATASET_FORMAT: &str = "bevloc-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: FrameId,
    pub session: String,
    pub seq: u32,
    /// Identifies the physical place; frames of different places never overlap.
    pub place: usize,
    pub floor: Option<String>,
    pub role: SessionRole,
    pub pose: Pose2D,
    /// Grid blob path relative to the dataset directory.
    pub grid: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub place: usize,
    pub floor: Option<String>,
    pub role: SessionRole,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub geometry: GridGeometry,
    pub seed: u64,
    pub noise_sigma: f64,
    pub loop_distance_m: f64,
    pub negative_distance_m: f64,
    pub exclusion_window: u32,
    pub sessions: Vec<SessionRecord>,
    pub frames: Vec<FrameRecord>,
    #[serde(flatten)]
    pub ground_truth: GroundTruth,
}

impl DatasetManifest {
    pub fn frame(&self, id: FrameId) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == id)
    }

    pub fn frames_with_role(&self, role: SessionRole) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(move |f| f.role == role)
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.format != DATASET_FORMAT || self.version != DATASET_VERSION {
            return Err(Error::format(path, None, format!("unsupported dataset {} v{}", self.format, self.version)));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.frames {
            if !seen.insert(f.frame_id) {
                return Err(Error::format(path, None, format!("duplicate frame id {}", f.frame_id)));
            }
        }
        let known = |id: &FrameId| seen.contains(id);
        let gt = &self.ground_truth;
        let pairs = gt.loop_pairs.iter().chain(&gt.cross_floor_pairs).map(|p| [p.a, p.b]);
        for [a, b] in pairs.chain(gt.negatives.iter().copied()) {
            if !known(&a) || !known(&b) {
                return Err(Error::format(path, None, format!("pair ({a}, {b}) refers to an unknown frame")));
            }
        }
        Ok(())
    }
}

/// A dataset directory with its manifest loaded; grids are read on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    dir: PathBuf,
    manifest: DatasetManifest,
    by_id: HashMap<FrameId, usize>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let manifest = read_manifest(&path)?;
        let by_id = manifest.frames.iter().enumerate().map(|(i, f)| (f.frame_id, i)).collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            by_id,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn geometry(&self) -> GridGeometry {
        self.manifest.geometry
    }

    pub fn frame(&self, id: FrameId) -> Result<&FrameRecord> {
        self.by_id
            .get(&id)
            .map(|&i| &self.manifest.frames[i])
            .ok_or_else(|| Error::InvalidArgument(format!("dataset has no frame {id}")))
    }

    pub fn load_grid(&self, id: FrameId) -> Result<BevGrid> {
        let rec = self.frame(id)?;
        let path = self.dir.join(&rec.grid);
        let a = blob::read(&path)?;
        let g = self.manifest.geometry;
        if a.shape() != [g.height, g.width, g.channels] {
            return Err(Error::format(
                &path,
                None,
                format!("grid shape {:?} does not match dataset geometry", a.shape()),
            ));
        }
        let a = a.into_dimensionality::<ndarray::Ix3>().expect("rank checked");
        BevGrid::new(a, g.grid_size_m).map_err(|e| Error::format(&path, None, e.to_string()))
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, Some(e.line()), e.to_string()))?;
    m.validate(path)?;
    Ok(m)
}

fn grid_path(id: FrameId) -> String {
    format!("grids/{:06}.bvl", id.0)
}

/// Renders every frame of the world and writes the dataset to `out`.
pub fn generate_benchmark(world: &SynthWorld, out: &Path) -> Result<DatasetManifest> {
    let spec = world.spec();
    let grids_dir = out.join("grids");
    fs::create_dir_all(&grids_dir).map_err(|e| Error::io(&grids_dir, e))?;
    world.frames().par_iter().try_for_each(|f| {
        let grid = world.render(f.frame_id)?;
        blob::write(&out.join(grid_path(f.frame_id)), &grid.into_data().into_dyn())
    })?;
    let sessions = spec
        .sessions
        .iter()
        .map(|s| SessionRecord {
            id: s.id.clone(),
            place: s.scene,
            floor: s.floor.clone(),
            role: s.role,
            frames: s.trajectory.len(),
        })
        .collect();
    let frames = world.frames().iter().map(frame_record).collect();
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        geometry: spec.geometry,
        seed: spec.seed,
        noise_sigma: spec.noise_sigma,
        loop_distance_m: spec.loop_distance_m,
        negative_distance_m: spec.negative_distance_m,
        exclusion_window: spec.exclusion_window,
        sessions,
        frames,
        ground_truth: world.ground_truth(),
    };
    let path = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    write_poses_csv(&out.join("poses.csv"), &manifest.frames)?;
    Ok(manifest)
}

fn frame_record(f: &SynthFrame) -> FrameRecord {
    FrameRecord {
        frame_id: f.frame_id,
        session: f.session.clone(),
        seq: f.seq,
        place: f.scene,
        floor: f.floor.clone(),
        role: f.role,
        pose: f.pose,
        grid: grid_path(f.frame_id),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    frame_id: u32,
    session: String,
    floor: String,
    x: f64,
    y: f64,
    yaw_deg: f64,
}

pub fn write_poses_csv(path: &Path, frames: &[FrameRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for f in frames {
        w.serialize(PoseRow {
            frame_id: f.frame_id.0,
            session: f.session.clone(),
            floor: f.floor.clone().unwrap_or_default(),
            x: f.pose.x_m,
            y: f.pose.y_m,
            yaw_deg: f.pose.yaw_deg,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `poses.csv`; an empty floor field means "no floor label".
pub fn read_poses_csv(path: &Path) -> Result<Vec<(FrameId, String, Option<String>, Pose2D)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<PoseRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let floor = (!row.floor.is_empty()).then_some(row.floor);
        out.push((FrameId(row.frame_id), row.session, floor, Pose2D::new(row.x, row.y, row.yaw_deg)));
    }
    Ok(out)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, line, format!("{other:?}")),
    }
}

/// Frame pairs listed in a `source_id,target_id` CSV.
pub fn read_pairs_csv(path: &Path) -> Result<Vec<(FrameId, FrameId)>> {
    #[derive(Deserialize)]
    struct Row {
        source_id: u32,
        target_id: u32,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        out.push((FrameId(row.source_id), FrameId(row.target_id)));
    }
    if out.is_empty() {
        return invalid(format!("{} lists no pairs", path.display()));
    }
    Ok(out)
}
