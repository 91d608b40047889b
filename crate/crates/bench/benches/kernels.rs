use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uvface::eval::{fid, FeatureSet};
use uvface::geometry::{build_position_map, render_to_image, zbuffer_visibility, PointCloud, Pose, Resolution};
use uvface::synth::{synth_heads, Studio};
use uvface::tcgan::TcGenerator;
use uvface::{Graph, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn(vec![8, 32, 32, 32], 1.0, &mut rng);
    let w = Tensor::randn(vec![64, 32, 3, 3], 0.1, &mut rng);
    c.bench_function("conv2d 8x32x32x32 -> 64, forward and backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
            let y = g.conv2d(xv, wv, 1, 1).unwrap();
            let l = g.mean(y).unwrap();
            black_box(g.backward(l).unwrap());
        })
    });
}

fn generator(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gen = TcGenerator::with_width(32, &mut rng);
    let t = Tensor::randn(vec![8, 3, 32, 32], 0.3, &mut rng);
    let p = Tensor::randn(vec![8, 3, 32, 32], 0.3, &mut rng);
    c.bench_function("completion generator forward, batch 8 at R32", |b| {
        b.iter(|| black_box(gen.complete(&t, &p).unwrap()))
    });
}

fn geometry(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<[f64; 3]> = (0..20_000)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let cloud = PointCloud::new(pts).unwrap();
    let pose = Pose::from_yaw(30.0, 256, 256);
    c.bench_function("z-buffer, 20k points at 256x256", |b| {
        b.iter(|| black_box(zbuffer_visibility(&cloud, &pose, 256, 256)))
    });

    let head = synth_heads(1, 0).remove(0);
    let r = Resolution::new(128).unwrap();
    let position = build_position_map(&head.mesh(), r);
    let photo = Studio::new(&head).unwrap().photo(&Pose::from_yaw(0.0, 512, 512), 512).unwrap();
    let (tex, _) = uvface::geometry::render_uv_texture_from_map(&photo, &position, &Pose::from_yaw(0.0, 512, 512)).unwrap();
    c.bench_function("render_to_image R128 at 512x512", |b| {
        b.iter(|| black_box(render_to_image(&tex, &position, &Pose::from_yaw(20.0, 512, 512), 512, 512).unwrap()))
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..500).map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    let a = FeatureSet::from_rows(&rows(&mut rng), "a").unwrap();
    let b = FeatureSet::from_rows(&rows(&mut rng), "b").unwrap();
    c.bench_function("fid, 500 x 64 features", |bench| bench.iter(|| black_box(fid(&a, &b).unwrap())));
}

fn gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient suite");
    group.sample_size(10);
    group.bench_function("all cases", |b| b.iter(|| black_box(uvface::gradsuite::run(7).unwrap())));
    group.finish();
}

criterion_group!(benches, conv, generator, geometry, metrics, gradients);
criterion_main!(benches);
