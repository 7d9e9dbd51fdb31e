use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use bevloc::dataset::{generate_benchmark, read_manifest, read_pairs_csv, Dataset};
use bevloc::eval::{compute_metrics, plot, read_report, write_report, EvalRecord, MetricsConfig, Task, Truth};
use bevloc::localizer::{DescriptorIndex, Engine, GlobalConfig, IndexEntry, SearchConfig};
use bevloc::net::{DecoderWeights, NetConfig};
use bevloc::synth::{SessionRole, SynthConfig, SynthWorld};
use bevloc::{FrameId, Pose2D};

use crate::Preset;

/// Written next to the index so later commands can find the frames and
/// weights it was built from.
#[derive(Serialize, Deserialize)]
struct IndexSource {
    dataset: PathBuf,
    weights: PathBuf,
}

const SOURCE_FILE: &str = "source.json";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("{}: cannot resolve path", p.display()))
}

fn engine_for(weights: &Path, dataset: &Dataset) -> Result<Engine> {
    let w = DecoderWeights::load(weights)?;
    Ok(Engine::new(w, dataset.geometry())?)
}

/// Nearest pose-carrying index entry to a world position.
fn nearest_entry(index: &DescriptorIndex, pose: &Pose2D) -> Option<(FrameId, f64)> {
    index
        .entries()
        .iter()
        .filter_map(|e| e.pose.map(|p| (e.frame_id, p.translation_error_m(pose))))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

pub fn synth_gen(config: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: SynthConfig = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("{}:{}: {e}", config.display(), e.line()))?;
    let world = SynthWorld::build(cfg.to_world()?)?;
    let m = generate_benchmark(&world, out)?;
    println!(
        "wrote {} frames, {} loop pairs to {}",
        m.frames.len(),
        m.ground_truth.loop_pairs.len(),
        out.display()
    );
    Ok(())
}

pub fn weights_init(out: &Path, preset: Preset, channels: usize, seed: u64) -> Result<()> {
    let cfg = NetConfig::default().with_channels(channels);
    let w = match preset {
        Preset::ChannelCentered => DecoderWeights::channel_centered(cfg)?,
        Preset::Identity => DecoderWeights::identity_like(cfg)?,
        Preset::Random => DecoderWeights::seeded(cfg, seed)?,
    };
    w.save(out)?;
    println!("wrote {preset:?} weights ({channels} channels) to {}", out.display());
    Ok(())
}

pub fn index_build(dataset: &Path, weights: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::open(dataset)?;
    let engine = engine_for(weights, &ds)?;
    let map: Vec<_> = ds.manifest().frames_with_role(SessionRole::Map).cloned().collect();
    if map.is_empty() {
        bail!("{}: dataset has no map frames", dataset.display());
    }
    let entries = map
        .par_iter()
        .map(|f| -> Result<IndexEntry> {
            let polar = engine.polar(&ds.load_grid(f.frame_id)?)?;
            Ok(IndexEntry {
                frame_id: f.frame_id,
                session: f.session.clone(),
                seq: f.seq,
                floor: f.floor.clone(),
                pose: Some(f.pose),
                descriptor: engine.global_descriptor(&polar)?.with_frame_id(f.frame_id),
                local_view: Some(engine.local_view(&polar)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut index = DescriptorIndex::with_geometry(ds.geometry());
    for e in entries {
        index.insert(e)?;
    }
    index.save(out)?;
    write_json(
        &out.join(SOURCE_FILE),
        &IndexSource {
            dataset: absolute(dataset)?,
            weights: absolute(weights)?,
        },
    )?;
    println!("indexed {} map frames into {}", index.len(), out.display());
    Ok(())
}

pub fn global_localize(index: &Path, queries: &Path, weights: &Path, topk: usize, report: &Path) -> Result<()> {
    let index = DescriptorIndex::load(index)?;
    let ds = Dataset::open(queries)?;
    if index.geometry().is_some_and(|g| g != ds.geometry()) {
        bail!("query dataset geometry does not match the index");
    }
    let engine = engine_for(weights, &ds)?;
    let cfg = GlobalConfig {
        top_k: topk,
        ..GlobalConfig::default()
    };
    let frames: Vec<_> = ds.manifest().frames_with_role(SessionRole::Query).cloned().collect();
    if frames.is_empty() {
        bail!("{}: dataset has no query frames", queries.display());
    }
    let records = frames
        .par_iter()
        .map(|f| -> Result<EvalRecord> {
            let grid = ds.load_grid(f.frame_id)?;
            let out = engine
                .localize_global(&index, &grid, &cfg)
                .with_context(|| format!("query {}", f.frame_id))?;
            let ranking: Vec<FrameId> = out.ranking.iter().map(|c| c.frame_id).collect();
            let e = &out.estimate;
            let mut rec = EvalRecord::new(Task::Global, f.frame_id, out.top1, e.pose, e.cost, e.accepted).with_ranking(&ranking);
            if let Some(target) = index.get(out.top1).and_then(|t| t.pose) {
                rec = rec.with_truth(&f.pose, &target, nearest_entry(&index, &f.pose));
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    write_report(report, &records)?;
    let accepted = records.iter().filter(|r| r.accepted).count();
    println!("localized {} queries ({accepted} accepted) -> {}", records.len(), report.display());
    Ok(())
}

pub fn loop_detect(
    index_dir: &Path,
    threshold: f64,
    report: &Path,
    dataset: Option<&Path>,
    weights: Option<&Path>,
) -> Result<()> {
    let index = DescriptorIndex::load(index_dir)?;
    let source_path = index_dir.join(SOURCE_FILE);
    let source: Option<IndexSource> = match fs::read_to_string(&source_path) {
        Ok(text) => Some(serde_json::from_str(&text).with_context(|| format!("{}", source_path.display()))?),
        Err(_) => None,
    };
    let resolve = |given: Option<&Path>, recorded: Option<&PathBuf>, what: &str| -> Result<PathBuf> {
        given
            .map(Path::to_path_buf)
            .or_else(|| recorded.cloned())
            .with_context(|| format!("no {what} given and {} is missing", source_path.display()))
    };
    let ds = Dataset::open(&resolve(dataset, source.as_ref().map(|s| &s.dataset), "--dataset")?)?;
    let engine = engine_for(&resolve(weights, source.as_ref().map(|s| &s.weights), "--weights")?, &ds)?;
    let window = ds.manifest().exclusion_window;

    let mut pairs = Vec::new();
    for e in index.entries() {
        let g = e.descriptor.clone().with_frame_id(e.frame_id);
        for c in index.topo_loop_candidates_with(&g, threshold, window)? {
            if c.frame_id < e.frame_id {
                pairs.push((e.frame_id, c.frame_id));
            }
        }
    }
    let search = SearchConfig::default();
    let records = pairs
        .par_iter()
        .map(|&(s, t)| -> Result<EvalRecord> {
            let target = index.get(t).and_then(|e| e.local_view.clone());
            let target = target.with_context(|| format!("frame {t} has no stored local-view descriptor"))?;
            let est = engine.metric_localize_to(&ds.load_grid(s)?, &target, &search, &[])?;
            let (sp, tp) = (ds.frame(s)?.pose, ds.frame(t)?.pose);
            Ok(EvalRecord::new(Task::Loop, s, t, est.pose, est.cost, est.accepted).with_truth(&sp, &tp, None))
        })
        .collect::<Result<Vec<_>>>()?;
    write_report(report, &records)?;
    println!("detected {} loop pairs -> {}", records.len(), report.display());
    Ok(())
}

pub fn pose_estimate(dataset: &Path, pairs: &Path, weights: &Path, report: &Path) -> Result<()> {
    let ds = Dataset::open(dataset)?;
    let engine = engine_for(weights, &ds)?;
    let pairs = read_pairs_csv(pairs)?;
    let search = SearchConfig::default();
    let records = pairs
        .iter()
        .map(|&(s, t)| -> Result<EvalRecord> {
            let est = engine
                .metric_localize(&ds.load_grid(s)?, &ds.load_grid(t)?, &search)
                .with_context(|| format!("pair ({s}, {t})"))?;
            let (sp, tp) = (ds.frame(s)?.pose, ds.frame(t)?.pose);
            Ok(EvalRecord::new(Task::Pose, s, t, est.pose, est.cost, est.accepted).with_truth(&sp, &tp, None))
        })
        .collect::<Result<Vec<_>>>()?;
    write_report(report, &records)?;
    println!("estimated {} poses -> {}", records.len(), report.display());
    Ok(())
}

pub fn eval(report: &Path, manifest: &Path, metrics: &Path) -> Result<()> {
    let records = read_report(report)?;
    if records.is_empty() {
        bail!("{}: report has no records", report.display());
    }
    let m = read_manifest(manifest)?;
    let truth = Truth::from_manifest(&m);
    let values = compute_metrics(&records, &truth, &MetricsConfig::default())?;
    write_json(metrics, &values)?;
    let mut out = std::io::stdout().lock();
    for (k, v) in values.iter().filter(|(k, _)| !k.starts_with("definition.")) {
        match writeln!(out, "{k:<28} {v}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
            r => r?,
        }
    }
    Ok(())
}

pub fn verify_losses(seed: u64) -> Result<bool> {
    let report = bevloc::losses::verify::run(seed)?;
    print!("{report}");
    Ok(report.passed())
}

pub fn plot(report: &Path, out: &Path) -> Result<()> {
    let records = read_report(report)?;
    fs::write(out, plot::render_svg(&records)).with_context(|| format!("writing {}", out.display()))
}
