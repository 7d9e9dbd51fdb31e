//! Deterministic synthetic world: point landmarks with feature signatures,
//! rendered into ego-frame BEV grids from arbitrary 2-D poses.

use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{BevGrid, FrameId, GridGeometry};
use crate::pose::Pose2D;

/// Signatures closer than this (after normalization) are redrawn.
pub const MIN_SIGNATURE_DISTANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub position: [f64; 2],
    pub signature: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub name: String,
    /// Side of the square the landmarks occupy, centred on the world origin.
    pub extent_m: f64,
    pub density_per_m2: f64,
    pub channels: usize,
    /// Weight of the smooth spatial field mixed into each signature; 0 gives
    /// i.i.d. signatures everywhere.
    pub theme_strength: f64,
    /// Typical wavelength of the spatial field.
    pub theme_wavelength_m: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            name: "scene".into(),
            extent_m: 110.0,
            density_per_m2: 0.25,
            channels: 16,
            theme_strength: 1.5,
            theme_wavelength_m: 30.0,
            seed: 0,
        }
    }
}

const THEME_MODES: usize = 8;

/// Sum of random plane waves with C-vector amplitudes.
struct ThemeField {
    modes: Vec<([f64; 2], f64, Array1<f64>)>,
}

impl ThemeField {
    fn new(rng: &mut ChaCha8Rng, channels: usize, wavelength_m: f64) -> Self {
        let modes = (0..THEME_MODES)
            .map(|_| {
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / (wavelength_m * rng.random_range(0.7..1.4));
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = Array1::from_shape_fn(channels, |_| StandardNormal.sample(rng));
                ([k * dir.cos(), k * dir.sin()], phase, amp)
            })
            .collect();
        Self { modes }
    }

    fn at(&self, p: [f64; 2]) -> Array1<f64> {
        let mut out = Array1::zeros(self.modes[0].2.len());
        for (k, phase, amp) in &self.modes {
            out.scaled_add((k[0] * p[0] + k[1] * p[1] + phase).cos(), amp);
        }
        out / (THEME_MODES as f64 / 2.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    landmarks: Vec<Landmark>,
    extent_m: f64,
    seed: u64,
}

impl Scene {
    /// Uniform landmark positions. Signatures are Gaussian plus a smooth
    /// spatial field, then centred across channels and scaled to unit norm.
    pub fn generate(params: &SceneParams) -> Result<Scene> {
        if !(params.extent_m > 0.0 && params.density_per_m2 >= 0.0) {
            return invalid("scene extent must be positive and density non-negative");
        }
        if params.channels < 2 {
            return invalid("signatures need at least 2 channels");
        }
        if !(params.theme_strength >= 0.0 && params.theme_wavelength_m > 0.0) {
            return invalid("theme strength must be non-negative and wavelength positive");
        }
        let half = params.extent_m / 2.0;
        let n = (params.density_per_m2 * params.extent_m * params.extent_m).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let theme = ThemeField::new(&mut rng, params.channels, params.theme_wavelength_m);
        let mut landmarks = Vec::with_capacity(n);
        while landmarks.len() < n {
            let position = [rng.random_range(-half..half), rng.random_range(-half..half)];
            let bias = theme.at(position) * params.theme_strength;
            let sig = loop {
                let s = random_signature(&mut rng, params.channels, &bias);
                let clash = landmarks
                    .iter()
                    .any(|l: &Landmark| distance(&l.signature, &s) <= MIN_SIGNATURE_DISTANCE);
                if !clash {
                    break s;
                }
            };
            landmarks.push(Landmark { position, signature: sig });
        }
        Self::from_landmarks(landmarks, params.extent_m, params.seed)
    }

    /// Checks that positions lie inside the extent and that normalized
    /// signatures are pairwise more than [`MIN_SIGNATURE_DISTANCE`] apart.
    pub fn from_landmarks(landmarks: Vec<Landmark>, extent_m: f64, seed: u64) -> Result<Scene> {
        let half = extent_m / 2.0;
        let channels = landmarks.first().map_or(0, |l| l.signature.len());
        let mut unit = Vec::with_capacity(landmarks.len());
        for (i, l) in landmarks.iter().enumerate() {
            if l.position.iter().any(|p| !(p.abs() <= half)) {
                return invalid(format!("landmark {i} at {:?} lies outside the scene extent", l.position));
            }
            if l.signature.len() != channels || channels == 0 {
                return invalid(format!("landmark {i} has a signature of length {}", l.signature.len()));
            }
            let norm = l.signature.dot(&l.signature).sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return invalid(format!("landmark {i} has a zero or non-finite signature"));
            }
            unit.push(&l.signature / norm);
        }
        for i in 0..unit.len() {
            for j in 0..i {
                if distance(&unit[i], &unit[j]) <= MIN_SIGNATURE_DISTANCE {
                    return invalid(format!("landmarks {j} and {i} have near-identical signatures"));
                }
            }
        }
        Ok(Scene { landmarks, extent_m, seed })
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn extent_m(&self) -> f64 {
        self.extent_m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.landmarks.first().map_or(0, |l| l.signature.len())
    }

    pub fn contains(&self, pose: &Pose2D) -> bool {
        let half = self.extent_m / 2.0;
        pose.x_m.abs() <= half && pose.y_m.abs() <= half
    }
}

fn random_signature(rng: &mut ChaCha8Rng, channels: usize, bias: &Array1<f64>) -> Array1<f64> {
    let mut s: Array1<f64> = Array1::from_shape_fn(channels, |_| StandardNormal.sample(rng));
    s += bias;
    let mean = s.mean().unwrap_or(0.0);
    s -= mean;
    let norm = s.dot(&s).sqrt();
    s / norm
}

fn distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Renders the scene as seen from `pose`.
///
/// Each landmark inside the grid is bilinearly splatted around its cell-centre
/// coordinate. With `noise_sigma > 0`, every splatted signature gets i.i.d.
/// Gaussian noise drawn from a generator seeded by `noise_seed`; cells that
/// receive no landmark stay zero.
pub fn render_bev(scene: &Scene, pose: &Pose2D, geometry: GridGeometry, noise_sigma: f64, noise_seed: u64) -> Result<BevGrid> {
    geometry.validate()?;
    if !scene.contains(pose) {
        return invalid(format!("pose ({}, {}) lies outside the scene extent", pose.x_m, pose.y_m));
    }
    if scene.channels() != geometry.channels && !scene.landmarks.is_empty() {
        return invalid(format!(
            "scene signatures have {} channels, grid has {}",
            scene.channels(),
            geometry.channels
        ));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return invalid(format!("noise level must be non-negative, got {noise_sigma}"));
    }
    let (h, w, c) = (geometry.height, geometry.width, geometry.channels);
    let g = geometry.grid_size_m;
    let mut data = Array3::<f64>::zeros((h, w, c));
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let normal = Normal::new(0.0, noise_sigma).expect("sigma checked");
    let mut sig = vec![0.0; c];
    for l in &scene.landmarks {
        let [x, y] = pose.inverse_transform_point(l.position);
        let u = h as f64 / 2.0 - x / g - 0.5;
        let v = w as f64 / 2.0 - y / g - 0.5;
        let (i0, j0) = (u.floor(), v.floor());
        if i0 < -1.0 || j0 < -1.0 || i0 > h as f64 - 1.0 || j0 > w as f64 - 1.0 {
            continue;
        }
        let (fu, fv) = (u - i0, v - j0);
        sig.iter_mut().zip(&l.signature).for_each(|(s, v)| *s = *v);
        if noise_sigma > 0.0 {
            for s in sig.iter_mut() {
                *s += normal.sample(&mut rng);
            }
        }
        for (di, wi) in [(0, 1.0 - fu), (1, fu)] {
            for (dj, wj) in [(0, 1.0 - fv), (1, fv)] {
                let (i, j) = (i0 as i64 + di, j0 as i64 + dj);
                let wt = wi * wj;
                if wt == 0.0 || i < 0 || j < 0 || i >= h as i64 || j >= w as i64 {
                    continue;
                }
                let mut cell = data.slice_mut(ndarray::s![i as usize, j as usize, ..]);
                cell.iter_mut().zip(&sig).for_each(|(d, s)| *d += wt * s);
            }
        }
    }
    BevGrid::new(data, g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionRole {
    Map,
    Query,
}

/// Keyframing rule: a new keyframe once the vehicle has moved this far or
/// turned this much since the previous one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSpacing {
    pub distance_m: f64,
    pub rotation_deg: f64,
}

impl Default for KeyframeSpacing {
    fn default() -> Self {
        Self {
            distance_m: 2.0,
            rotation_deg: 5.0,
        }
    }
}

impl KeyframeSpacing {
    pub fn is_due(&self, last: &Pose2D, next: &Pose2D) -> bool {
        last.translation_error_m(next) >= self.distance_m - 1e-9 || last.yaw_error_deg(next) >= self.rotation_deg - 1e-9
    }
}

/// Thins a dense path to keyframes; the first pose is always kept.
pub fn keyframe(path: &[Pose2D], spacing: KeyframeSpacing) -> Vec<Pose2D> {
    let mut out: Vec<Pose2D> = Vec::new();
    for p in path {
        if out.last().is_none_or(|last| spacing.is_due(last, p)) {
            out.push(*p);
        }
    }
    out
}

/// `count` poses evenly spaced on a circle, heading along the direction of travel.
pub fn circle_path(center: [f64; 2], radius_m: f64, start_deg: f64, count: usize, counter_clockwise: bool) -> Vec<Pose2D> {
    let step = 360.0 / count.max(1) as f64;
    (0..count)
        .map(|i| {
            let sign = if counter_clockwise { 1.0 } else { -1.0 };
            let a = start_deg + sign * step * i as f64;
            let (s, c) = a.to_radians().sin_cos();
            Pose2D::new(center[0] + radius_m * c, center[1] + radius_m * s, a + sign * 90.0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub id: String,
    /// Index into the world's scenes.
    pub scene: usize,
    #[serde(default)]
    pub floor: Option<String>,
    pub role: SessionRole,
    pub trajectory: Vec<Pose2D>,
}

impl SessionSpec {
    pub fn check_spacing(&self, spacing: KeyframeSpacing) -> Result<()> {
        for (k, pair) in self.trajectory.windows(2).enumerate() {
            if !spacing.is_due(&pair[0], &pair[1]) {
                return invalid(format!(
                    "session {}: keyframes {k} and {} are closer than the keyframing rule allows",
                    self.id,
                    k + 1
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub geometry: GridGeometry,
    pub noise_sigma: f64,
    pub seed: u64,
    pub spacing: KeyframeSpacing,
    /// Pairs closer than this are loop pairs.
    pub loop_distance_m: f64,
    /// Pairs farther than this are negatives.
    pub negative_distance_m: f64,
    /// Same-session pairs within this many keyframes are not loop pairs.
    pub exclusion_window: u32,
    pub scenes: Vec<SceneParams>,
    pub sessions: Vec<SessionSpec>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            geometry: GridGeometry {
                height: 100,
                width: 100,
                channels: 16,
                grid_size_m: 0.3,
            },
            noise_sigma: 0.01,
            seed: 0,
            spacing: KeyframeSpacing::default(),
            loop_distance_m: 2.0,
            negative_distance_m: 3.0,
            exclusion_window: 10,
            scenes: Vec::new(),
            sessions: Vec::new(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.scenes.is_empty() {
            return invalid("world has no scenes");
        }
        for s in &self.scenes {
            if s.channels != self.geometry.channels {
                return invalid(format!(
                    "scene {} has {} channels, grid has {}",
                    s.name, s.channels, self.geometry.channels
                ));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.sessions {
            if !ids.insert(&s.id) {
                return invalid(format!("duplicate session id {}", s.id));
            }
            if s.scene >= self.scenes.len() {
                return invalid(format!("session {} refers to missing scene {}", s.id, s.scene));
            }
            s.check_spacing(self.spacing)?;
        }
        if !(self.loop_distance_m > 0.0 && self.negative_distance_m >= self.loop_distance_m) {
            return invalid("need 0 < loop distance <= negative distance");
        }
        Ok(())
    }
}

/// The standard benchmark: one circular map session and a query session of
/// perturbed revisits. Optional decoy queries come from an unrelated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub map_frames: usize,
    pub queries: usize,
    /// Queries are placed uniformly within this distance of a map frame.
    pub max_query_offset_m: f64,
    pub decoy_queries: usize,
    pub geometry: GridGeometry,
    pub density_per_m2: f64,
    pub theme_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            map_frames: 100,
            queries: 50,
            max_query_offset_m: 1.5,
            decoy_queries: 0,
            geometry: WorldSpec::default().geometry,
            density_per_m2: 0.25,
            theme_strength: SceneParams::default().theme_strength,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    /// Consecutive map keyframes are exactly one keyframe distance apart
    /// (chord length), so the radius follows from the frame count.
    pub fn to_world(&self) -> Result<WorldSpec> {
        if self.map_frames < 3 {
            return invalid("benchmark needs at least 3 map frames");
        }
        let spacing = KeyframeSpacing::default();
        let radius = spacing.distance_m / 2.0 / (std::f64::consts::PI / self.map_frames as f64).sin();
        let (vh, vw) = self.geometry.extent_m();
        let view = vh.hypot(vw) / 2.0;
        let extent = 2.0 * (radius + self.max_query_offset_m + view + 1.0);
        let channels = self.geometry.channels;
        let scene = |name: &str, seed: u64| SceneParams {
            name: name.into(),
            extent_m: extent.ceil(),
            density_per_m2: self.density_per_m2,
            channels,
            theme_strength: self.theme_strength,
            seed,
            ..SceneParams::default()
        };
        let map = circle_path([0.0, 0.0], radius, 0.0, self.map_frames, true);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0001);
        let stride = (self.map_frames / self.queries.max(1)).max(1);
        let mut queries = Vec::with_capacity(self.queries);
        for q in 0..self.queries {
            let anchor = map[(q * stride) % self.map_frames];
            // redraw the rare query that would break the keyframing rule
            let pose = loop {
                let r = self.max_query_offset_m * rng.random::<f64>().sqrt();
                let a = std::f64::consts::TAU * rng.random::<f64>();
                let yaw = rng.random_range(-180.0..180.0);
                let p = Pose2D::new(anchor.x_m + r * a.cos(), anchor.y_m + r * a.sin(), yaw);
                if queries.last().is_none_or(|last| spacing.is_due(last, &p)) {
                    break p;
                }
            };
            queries.push(pose);
        }
        let mut scenes = vec![scene("map", self.seed)];
        let mut sessions = vec![
            SessionSpec {
                id: "map".into(),
                scene: 0,
                floor: Some("F1".into()),
                role: SessionRole::Map,
                trajectory: map,
            },
            SessionSpec {
                id: "query".into(),
                scene: 0,
                floor: Some("F1".into()),
                role: SessionRole::Query,
                trajectory: queries,
            },
        ];
        if self.decoy_queries > 0 {
            scenes.push(scene("decoy", self.seed ^ 0xdec0_7000));
            let decoys = circle_path([0.0, 0.0], radius, 0.0, self.decoy_queries, true)
                .into_iter()
                .map(|p| Pose2D::new(p.x_m, p.y_m, rng.random_range(-180.0..180.0)))
                .collect();
            sessions.push(SessionSpec {
                id: "decoy".into(),
                scene: 1,
                floor: Some("F1".into()),
                role: SessionRole::Query,
                trajectory: decoys,
            });
        }
        Ok(WorldSpec {
            geometry: self.geometry,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            scenes,
            sessions,
            ..WorldSpec::default()
        })
    }
}

/// What `synth-gen` accepts as its config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthConfig {
    Benchmark(BenchmarkSpec),
    World(WorldSpec),
}

impl SynthConfig {
    pub fn to_world(&self) -> Result<WorldSpec> {
        match self {
            SynthConfig::Benchmark(b) => b.to_world(),
            SynthConfig::World(w) => Ok(w.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthFrame {
    pub frame_id: FrameId,
    pub session: String,
    pub seq: u32,
    pub scene: usize,
    pub floor: Option<String>,
    pub role: SessionRole,
    pub pose: Pose2D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub a: FrameId,
    pub b: FrameId,
    pub distance_m: f64,
    /// Alignment from frame `a` to frame `b`.
    pub alignment: Pose2D,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub loop_pairs: Vec<PairLabel>,
    /// Close in x-y but labelled with different floors.
    pub cross_floor_pairs: Vec<PairLabel>,
    pub negatives: Vec<[FrameId; 2]>,
}

/// A world spec with its scenes generated and frames enumerated.
#[derive(Clone, Debug)]
pub struct SynthWorld {
    spec: WorldSpec,
    scenes: Vec<Scene>,
    frames: Vec<SynthFrame>,
}

impl SynthWorld {
    pub fn build(spec: WorldSpec) -> Result<Self> {
        spec.validate()?;
        let scenes = spec.scenes.iter().map(Scene::generate).collect::<Result<Vec<_>>>()?;
        let mut frames = Vec::new();
        for s in &spec.sessions {
            for (seq, pose) in s.trajectory.iter().enumerate() {
                if !scenes[s.scene].contains(pose) {
                    return invalid(format!("session {} keyframe {seq} lies outside its scene", s.id));
                }
                frames.push(SynthFrame {
                    frame_id: FrameId(frames.len() as u32),
                    session: s.id.clone(),
                    seq: seq as u32,
                    scene: s.scene,
                    floor: s.floor.clone(),
                    role: s.role,
                    pose: *pose,
                });
            }
        }
        Ok(Self { spec, scenes, frames })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn frames(&self) -> &[SynthFrame] {
        &self.frames
    }

    pub fn frame(&self, id: FrameId) -> Option<&SynthFrame> {
        self.frames.get(id.0 as usize)
    }

    /// Renders one frame; the noise stream is keyed by world seed and frame id.
    pub fn render(&self, id: FrameId) -> Result<BevGrid> {
        let Some(f) = self.frame(id) else {
            return invalid(format!("no frame {id}"));
        };
        let seed = self.spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(id.0);
        render_bev(&self.scenes[f.scene], &f.pose, self.spec.geometry, self.spec.noise_sigma, seed)
    }

    pub fn render_all(&self) -> Result<Vec<BevGrid>> {
        self.frames.par_iter().map(|f| self.render(f.frame_id)).collect()
    }

    /// Brute-force pair labelling over all frame pairs `a < b`.
    pub fn ground_truth(&self) -> GroundTruth {
        let mut gt = GroundTruth::default();
        for (j, b) in self.frames.iter().enumerate() {
            for a in &self.frames[..j] {
                let d = a.pose.translation_error_m(&b.pose);
                let label = || PairLabel {
                    a: a.frame_id,
                    b: b.frame_id,
                    distance_m: d,
                    alignment: Pose2D::alignment(&a.pose, &b.pose),
                };
                let same_place = a.scene == b.scene && a.floor == b.floor;
                let neighbours = a.session == b.session && a.seq.abs_diff(b.seq) <= self.spec.exclusion_window;
                if same_place && d < self.spec.loop_distance_m && !neighbours {
                    gt.loop_pairs.push(label());
                }
                if let (Some(fa), Some(fb)) = (&a.floor, &b.floor) {
                    if fa != fb && d < self.spec.loop_distance_m {
                        gt.cross_floor_pairs.push(label());
                    }
                }
                if same_place && d > self.spec.negative_distance_m {
                    gt.negatives.push([a.frame_id, b.frame_id]);
                }
            }
        }
        gt
    }
}
