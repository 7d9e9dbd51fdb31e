use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use bevloc::grid::polar_transform;
use bevloc::localizer::{estimate_yaw, DescriptorIndex, Engine, IndexEntry, SearchConfig};
use bevloc::net::{decode_local_view, DecoderWeights, NetConfig};
use bevloc::synth::{render_bev, Scene, SceneParams};
use bevloc::{FrameId, GridGeometry, Pose2D};

const GEOMETRY: GridGeometry = GridGeometry {
    height: 100,
    width: 100,
    channels: 16,
    grid_size_m: 0.3,
};

fn setup() -> (Engine, Scene) {
    let w = DecoderWeights::channel_centered(NetConfig::default().with_channels(GEOMETRY.channels)).unwrap();
    let scene = Scene::generate(&SceneParams {
        extent_m: 60.0,
        seed: 1,
        ..SceneParams::default()
    })
    .unwrap();
    (Engine::new(w, GEOMETRY).unwrap(), scene)
}

fn stages(c: &mut Criterion) {
    let (e, scene) = setup();
    let cfg = NetConfig::default();
    let source = render_bev(&scene, &Pose2D::new(0.0, 0.0, 0.0), GEOMETRY, 0.0, 0).unwrap();
    let target = render_bev(&scene, &Pose2D::new(0.8, -0.5, 40.0), GEOMETRY, 0.0, 0).unwrap();
    let polar = e.polar(&source).unwrap();
    let ds = e.local_view(&polar).unwrap();
    let dt = e.local_view(&e.polar(&target).unwrap()).unwrap();

    c.bench_function("polar_transform", |b| {
        b.iter(|| polar_transform(black_box(&source), cfg.angular_bins, cfg.radial_bins).unwrap())
    });
    c.bench_function("decode_local_view", |b| {
        b.iter(|| decode_local_view(black_box(&polar), e.weights()).unwrap())
    });
    c.bench_function("estimate_yaw", |b| b.iter(|| estimate_yaw(black_box(&ds), &dt).unwrap()));

    let mut slow = c.benchmark_group("search");
    slow.sample_size(10);
    slow.bench_function("metric_localize", |b| {
        b.iter(|| e.metric_localize(black_box(&source), &target, &SearchConfig::default()).unwrap())
    });
    slow.finish();
}

fn retrieval(c: &mut Criterion) {
    let (e, scene) = setup();
    let mut index = DescriptorIndex::with_geometry(GEOMETRY);
    for i in 0..200u32 {
        let a = i as f64 * 0.15;
        let pose = Pose2D::new(12.0 * a.cos(), 12.0 * a.sin(), (a.to_degrees() + 90.0) % 360.0 - 180.0);
        let bev = render_bev(&scene, &pose, GEOMETRY, 0.0, i as u64).unwrap();
        let g = e.global_descriptor(&e.polar(&bev).unwrap()).unwrap().with_frame_id(FrameId(i));
        index
            .insert(IndexEntry {
                frame_id: FrameId(i),
                session: "map".into(),
                seq: i,
                floor: None,
                pose: Some(pose),
                descriptor: g,
                local_view: None,
            })
            .unwrap();
    }
    let query = index.entries()[17].descriptor.clone();
    c.bench_function("topo_retrieve_200", |b| b.iter(|| index.topo_retrieve(black_box(&query), 20).unwrap()));
}

criterion_group!(benches, stages, retrieval);
criterion_main!(benches);
