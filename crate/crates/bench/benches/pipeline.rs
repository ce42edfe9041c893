use criterion::{criterion_group, criterion_main, Criterion};
use roadhazard::cstix::adaptive_dbscan;
use roadhazard::disparity::{block_match, disparity_to_cloud};
use roadhazard::hypothesis::{detect_frame, prepare_block_matched};
use roadhazard::pc::pc_detect;
use roadhazard::synth::{render, BoxObstacle, FREE_SPACE_MARGIN, FREE_SPACE_RANGE};
use roadhazard::{
    BlockMatchConfig, CameraRig, ClusterParams, DetectorConfig, Method, ObstaclePoint, PcParams, PointSource, SceneSpec,
};
use std::hint::black_box;

/// An 800x400 window of the 2300 px rig with one box at 12 m.
fn scene() -> SceneSpec {
    let rig = CameraRig::new(2300.0, 2300.0, 399.5, 99.5, 0.21, 800, 400).unwrap();
    let mut spec = SceneSpec::road("bench", rig);
    spec.free_space_range = Some(FREE_SPACE_RANGE);
    spec.free_space_margin = FREE_SPACE_MARGIN;
    spec.obstacles.push(BoxObstacle { id: 2, x: 0.0, z: 12.0, width: 0.6, height: 0.3, depth: 0.3 });
    spec
}

fn pipeline(c: &mut Criterion) {
    let spec = scene();
    let bundle = render(&spec).unwrap();
    let cfg = DetectorConfig::default();
    let bm = BlockMatchConfig::default();
    let inp = prepare_block_matched(&bundle.left, &bundle.right, &spec.rig, &cfg, &bm).unwrap();

    let mut group = c.benchmark_group("pipeline 400x200");
    group.sample_size(10);
    group.bench_function("block_match", |b| b.iter(|| block_match(black_box(&inp.left), &inp.right, &bm)));
    for method in [Method::Fpht, Method::Pht] {
        group.bench_function(format!("detect_frame {method:?}"), |b| {
            b.iter(|| detect_frame(&inp.left, &inp.right, black_box(&inp.dmap), &inp.grid, &inp.rig, &cfg, method))
        });
    }
    let cloud = disparity_to_cloud(&inp.dmap, &inp.rig, cfg.stride);
    let pc = PcParams::default();
    group.bench_function("pc_detect", |b| b.iter(|| pc_detect(black_box(&cloud), &inp.rig, &pc)));

    let result = pc_detect(&cloud, &inp.rig, &pc);
    let points: Vec<ObstaclePoint> = cloud
        .iter()
        .zip(&result.obstacle)
        .filter(|(_, &o)| o)
        .map(|(p, _)| ObstaclePoint {
            x: p.x,
            y: p.y,
            point: p.point,
            disparity: p.disparity,
            source: PointSource::Pc,
            cluster: None,
        })
        .collect();
    let cluster = ClusterParams::default();
    group.bench_function("adaptive_dbscan", |b| b.iter(|| adaptive_dbscan(black_box(&points), &cluster, &inp.rig)));
    group.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
