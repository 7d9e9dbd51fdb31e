use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{invalid, Error, Result};
use crate::grid::{FrameId, GlobalDescriptor, GridGeometry, LocalViewDescriptor};
use crate::pose::Pose2D;

pub const INDEX_FORMAT: &str = "bevloc-descriptor-index";
pub const INDEX_VERSION: u32 = 1;
/// Same-session neighbours within this many keyframes are not loop candidates.
pub const DEFAULT_EXCLUSION_WINDOW: u32 = 10;
pub const DEFAULT_LOOP_THRESHOLD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub frame_id: FrameId,
    pub session: String,
    /// Keyframe number within the session.
    pub seq: u32,
    pub floor: Option<String>,
    pub pose: Option<Pose2D>,
    pub descriptor: GlobalDescriptor,
    pub local_view: Option<LocalViewDescriptor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub frame_id: FrameId,
    pub distance: f64,
}

/// Map-side descriptor store. Reads are `&self` and safe to share.
#[derive(Clone, Debug, Default)]
pub struct DescriptorIndex {
    geometry: Option<GridGeometry>,
    entries: Vec<IndexEntry>,
    by_id: HashMap<FrameId, usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    geometry: Option<GridGeometry>,
    descriptor_len: usize,
    local_view_shape: Option<[usize; 2]>,
    entries: Vec<EntryRecord>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    frame_id: FrameId,
    session: String,
    seq: u32,
    floor: Option<String>,
    pose: Option<Pose2D>,
    has_local_view: bool,
}

impl DescriptorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_geometry(geometry: GridGeometry) -> Self {
        Self {
            geometry: Some(geometry),
            ..Self::default()
        }
    }

    pub fn geometry(&self) -> Option<GridGeometry> {
        self.geometry
    }

    pub fn insert(&mut self, entry: IndexEntry) -> Result<()> {
        if self.by_id.contains_key(&entry.frame_id) {
            return invalid(format!("frame {} is already indexed", entry.frame_id));
        }
        if let Some(first) = self.entries.first() {
            if first.descriptor.len() != entry.descriptor.len() {
                return invalid(format!(
                    "descriptor length {} does not match index length {}",
                    entry.descriptor.len(),
                    first.descriptor.len()
                ));
            }
            let shape = |e: &IndexEntry| e.local_view.as_ref().map(|d| d.data().dim());
            if let (Some(a), Some(b)) = (self.local_view_shape(), shape(&entry)) {
                if a != b {
                    return invalid(format!("local-view shape {b:?} does not match index shape {a:?}"));
                }
            }
        }
        self.by_id.insert(entry.frame_id, self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    fn local_view_shape(&self) -> Option<(usize, usize)> {
        self.entries.iter().find_map(|e| e.local_view.as_ref().map(|d| d.data().dim()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: FrameId) -> Option<&IndexEntry> {
        self.by_id.get(&id).map(|&i| &self.entries[i])
    }

    /// The `k` nearest entries by descriptor distance, ties broken by frame id.
    pub fn topo_retrieve(&self, g: &GlobalDescriptor, k: usize) -> Result<Vec<Candidate>> {
        self.topo_retrieve_where(g, k, |_| true)
    }

    pub fn topo_retrieve_where(
        &self,
        g: &GlobalDescriptor,
        k: usize,
        keep: impl Fn(&IndexEntry) -> bool,
    ) -> Result<Vec<Candidate>> {
        if self.is_empty() {
            return Err(Error::InvalidState("descriptor index is empty".into()));
        }
        if k < 1 {
            return invalid("K must be at least 1");
        }
        let mut all = self.scored(g, keep)?;
        sort_candidates(&mut all);
        all.truncate(k);
        Ok(all)
    }

    /// Entries strictly closer than `threshold`, excluding the query frame and
    /// its same-session neighbours within the default exclusion window.
    pub fn topo_loop_candidates(&self, g: &GlobalDescriptor, threshold: f64) -> Result<Vec<Candidate>> {
        self.topo_loop_candidates_with(g, threshold, DEFAULT_EXCLUSION_WINDOW)
    }

    /// Exclusion needs the query's session, so it only applies when `g`
    /// carries the frame id of an indexed entry.
    pub fn topo_loop_candidates_with(&self, g: &GlobalDescriptor, threshold: f64, window: u32) -> Result<Vec<Candidate>> {
        if !(threshold >= 0.0) {
            return invalid(format!("loop threshold must be non-negative, got {threshold}"));
        }
        let origin = g.frame_id().and_then(|id| self.get(id));
        let mut out = self.scored(g, |e| match origin {
            Some(o) => e.frame_id != o.frame_id && !(e.session == o.session && e.seq.abs_diff(o.seq) <= window),
            None => true,
        })?;
        out.retain(|c| c.distance < threshold);
        sort_candidates(&mut out);
        Ok(out)
    }

    fn scored(&self, g: &GlobalDescriptor, keep: impl Fn(&IndexEntry) -> bool) -> Result<Vec<Candidate>> {
        if let Some(first) = self.entries.first() {
            if first.descriptor.len() != g.len() {
                return invalid(format!(
                    "query descriptor length {} does not match index length {}",
                    g.len(),
                    first.descriptor.len()
                ));
            }
        }
        Ok(self
            .entries
            .iter()
            .filter(|e| keep(e))
            .map(|e| Candidate {
                frame_id: e.frame_id,
                distance: g.distance(&e.descriptor),
            })
            .collect())
    }

    /// Writes `index.json`, `global.bvl` and, when present, `local.bvl`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.entries.len();
        let len = self.entries.first().map_or(0, |e| e.descriptor.len());
        let lv_shape = self.local_view_shape();
        let manifest = Manifest {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            geometry: self.geometry,
            descriptor_len: len,
            local_view_shape: lv_shape.map(|(t, c)| [t, c]),
            entries: self
                .entries
                .iter()
                .map(|e| EntryRecord {
                    frame_id: e.frame_id,
                    session: e.session.clone(),
                    seq: e.seq,
                    floor: e.floor.clone(),
                    pose: e.pose,
                    has_local_view: e.local_view.is_some(),
                })
                .collect(),
        };
        let mut globals = Array2::zeros((n, len));
        for (mut row, e) in globals.axis_iter_mut(Axis(0)).zip(&self.entries) {
            row.assign(e.descriptor.data());
        }
        blob::write(&dir.join("global.bvl"), &globals.into_dyn())?;
        if let Some((t, c)) = lv_shape {
            let views: Vec<_> = self.entries.iter().filter_map(|e| e.local_view.as_ref()).collect();
            let mut stacked = Array3::zeros((views.len(), t, c));
            for (mut slab, d) in stacked.axis_iter_mut(Axis(0)).zip(views) {
                slab.assign(d.data());
            }
            blob::write(&dir.join("local.bvl"), &stacked.into_dyn())?;
        }
        let path = dir.join("index.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, Some(e.line()), e.to_string()))?;
        if m.format != INDEX_FORMAT || m.version != INDEX_VERSION {
            return Err(Error::format(&path, None, format!("unsupported index {} v{}", m.format, m.version)));
        }
        let gpath = dir.join("global.bvl");
        let globals = expect_shape(blob::read(&gpath)?, &[m.entries.len(), m.descriptor_len], &gpath)?;
        let globals = globals.into_dimensionality::<ndarray::Ix2>().expect("rank checked");
        let n_local = m.entries.iter().filter(|e| e.has_local_view).count();
        let locals = match (m.local_view_shape, n_local) {
            (_, 0) => None,
            (Some([t, c]), n) => {
                let lpath = dir.join("local.bvl");
                let a = expect_shape(blob::read(&lpath)?, &[n, t, c], &lpath)?;
                Some(a.into_dimensionality::<ndarray::Ix3>().expect("rank checked"))
            }
            (None, _) => return Err(Error::format(&path, None, "entries have local views but no shape is recorded")),
        };
        let mut index = DescriptorIndex {
            geometry: m.geometry,
            ..Self::default()
        };
        let mut next_local = 0;
        for (i, rec) in m.entries.into_iter().enumerate() {
            let descriptor = GlobalDescriptor::new(Array1::from(globals.row(i).to_vec()))
                .map_err(|e| Error::format(&gpath, None, e.to_string()))?
                .with_frame_id(rec.frame_id);
            let local_view = if rec.has_local_view {
                let slab = locals.as_ref().expect("present when any entry has one").index_axis(Axis(0), next_local).to_owned();
                next_local += 1;
                Some(LocalViewDescriptor::new(slab)?)
            } else {
                None
            };
            index
                .insert(IndexEntry {
                    frame_id: rec.frame_id,
                    session: rec.session,
                    seq: rec.seq,
                    floor: rec.floor,
                    pose: rec.pose,
                    descriptor,
                    local_view,
                })
                .map_err(|e| Error::format(&path, None, e.to_string()))?;
        }
        Ok(index)
    }
}

fn expect_shape(a: ndarray::ArrayD<f64>, shape: &[usize], path: &Path) -> Result<ndarray::ArrayD<f64>> {
    if a.shape() != shape {
        return Err(Error::format(path, None, format!("expected shape {shape:?}, found {:?}", a.shape())));
    }
    Ok(a)
}

pub(crate) fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.frame_id.cmp(&b.frame_id)));
}
