use std::hint::black_box;

use aeromap::geo::{default_pose, Frame, GeoPoint, UtmCoord};
use aeromap::grid::{layers, LayeredGrid, RegionOfInterest};
use aeromap::mosaic::{BlendConfig, GlobalMap};
use aeromap::rectify::rectify;
use aeromap::surface::{self, KdTree2, SurfaceConfig};
use aeromap::synth::{Scene, SceneSpec};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n).map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect()
}

fn kdtree(c: &mut Criterion) {
    let pts = points(100_000);
    c.bench_function("kdtree build 100k", |b| b.iter(|| KdTree2::new(black_box(pts.clone()))));
    let tree = KdTree2::new(pts);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let queries: Vec<[f64; 2]> = (0..1000).map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect();
    c.bench_function("kdtree 8-nn x1000", |b| {
        b.iter(|| {
            for q in &queries {
                black_box(tree.knn_within(*q, 8, 1.0));
            }
        })
    });
}

fn update(roi: &RegionOfInterest, z: f64) -> LayeredGrid {
    let mut g = LayeredGrid::create_aligned(roi, 0.2, &[]).unwrap();
    g.add_layer(layers::ELEVATION, z);
    g.add_layer(layers::VALID, 1.0);
    for name in layers::COLOR {
        g.add_layer(name, 128.0);
    }
    g.add_layer(layers::ANGLE, 5.0);
    g
}

fn blend(c: &mut Criterion) {
    let base = RegionOfInterest::new(0.0, 0.0, 40.0, 30.0).unwrap();
    let shifted = RegionOfInterest::new(10.0, 0.0, 50.0, 30.0).unwrap();
    let mut seeded = GlobalMap::new(BlendConfig::default());
    seeded.fuse(&update(&base, 1.0)).unwrap();
    let next = update(&shifted, 1.2);
    c.bench_function("fuse 200x150 update, 75% overlap", |b| {
        b.iter_batched(|| seeded.clone(), |mut m| m.fuse(black_box(&next)).unwrap(), BatchSize::LargeInput)
    });
}

fn rectification(c: &mut Criterion) {
    let spec = SceneSpec::default();
    let scene = Scene::new(spec.clone()).unwrap();
    let cam = spec.camera_model();
    let at = UtmCoord {
        easting: scene.origin_e + 50.0,
        northing: scene.origin_n + 50.0,
        zone: scene.zone,
        altitude: 40.0,
    };
    let pose = default_pose(&at, 0.0);
    let geotag = GeoPoint::new(spec.base_latitude, spec.base_longitude, 40.0).unwrap();
    let mut frame = Frame::new(0, 0.0, scene.render(&pose, &cam), geotag, 0.0, cam);
    frame.pose = Some(pose);
    let frame = surface::process_frame(frame, &SurfaceConfig::default()).unwrap();
    c.bench_function("rectify 320x240 frame at 0.2 m", |b| b.iter(|| rectify(black_box(&frame), 0.2).unwrap()));
}

criterion_group!(kernels, kdtree, blend, rectification);
criterion_main!(kernels);
