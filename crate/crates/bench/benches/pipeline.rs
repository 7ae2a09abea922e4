use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lapdeform_core::geom::{synth_shape, ShapeKind};
use lapdeform_core::lapnet::{predict, LapNetParams, ModelDims};
use lapdeform_core::{
    cotan_laplacian, fem_energy, handles_from_fps, lbs_deform, solve_bbw, AffineTransform,
    BbwOptions, DeformationRequest, WeightMatrix,
};

fn fem(c: &mut Criterion) {
    let mesh = synth_shape(ShapeKind::Ellipsoid, 6, 0).unwrap();
    c.bench_function("cotan_laplacian ellipsoid(6)", |b| b.iter(|| cotan_laplacian(black_box(&mesh)).unwrap()));
    c.bench_function("fem_energy ellipsoid(6)", |b| b.iter(|| fem_energy(black_box(&mesh)).unwrap()));
}

fn bbw(c: &mut Criterion) {
    let mesh = synth_shape(ShapeKind::Bar, 24, 0).unwrap();
    let a = fem_energy(&mesh).unwrap().2;
    let handles = handles_from_fps(&mesh.to_cloud(), 4, 0).unwrap();
    let opts = BbwOptions::default();
    c.bench_function("solve_bbw bar(24) 4 handles", |b| b.iter(|| solve_bbw(black_box(&a), &handles, &opts).unwrap()));
}

fn lbs(c: &mut Criterion) {
    let mesh = synth_shape(ShapeKind::Ellipsoid, 6, 0).unwrap();
    let cloud = mesh.to_cloud();
    let n = cloud.len();
    let mut w = WeightMatrix::from_vec(n, 8, (0..n * 8).map(|i| ((i * 37) % 11) as f64 + 1.0).collect()).unwrap();
    w.normalize_rows();
    let req = DeformationRequest {
        transforms: (0..8).map(|h| AffineTransform::translation([0.01 * h as f64, 0.0, -0.02])).collect(),
    };
    c.bench_function("lbs_deform ellipsoid(6) 8 handles", |b| b.iter(|| lbs_deform(black_box(&cloud), &w, &req).unwrap()));
}

fn lapnet(c: &mut Criterion) {
    let cloud = synth_shape(ShapeKind::Bar, 12, 0).unwrap().to_cloud();
    let params = LapNetParams::new(ModelDims::default(), 0);
    let mut g = c.benchmark_group("predict");
    g.sample_size(10);
    g.bench_function("bar(12) k=32", |b| b.iter(|| predict(black_box(&cloud), &params, 32).unwrap()));
    g.finish();
}

criterion_group!(benches, fem, bbw, lbs, lapnet);
criterion_main!(benches);
