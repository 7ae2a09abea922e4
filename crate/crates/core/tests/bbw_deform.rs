mod support;

use lapdeform_core::bbw::check_weights;
use lapdeform_core::geom::{synth_shape, ShapeKind};
use lapdeform_core::pcl::{knn_graph_laplacian, Bandwidth};
use lapdeform_core::{
    deformation_energy, fem_energy, handles_from_fps, inverse_mass, lbs_deform, solve_bbw,
    AffineTransform, BbwOptions, DeformationRequest, Error, HandleSet, PointCloud,
    SparseSymMatrix, TetMesh, WeightMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles;

fn energy(mesh: &TetMesh) -> SparseSymMatrix {
    fem_energy(mesh).unwrap().2
}

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])
            .collect(),
    )
    .unwrap()
}

fn baseline_energy(cloud: &PointCloud, k: usize) -> SparseSymMatrix {
    let (l, m) = knn_graph_laplacian(cloud, k, Bandwidth::Auto).unwrap();
    deformation_energy(&l, &inverse_mass(&m).unwrap()).unwrap()
}

/// Vertex indices sorted by x.
fn by_x(mesh: &TetMesh) -> Vec<usize> {
    let v = mesh.vertices();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a][0].total_cmp(&v[b][0]));
    idx
}

fn end_faces(mesh: &TetMesh) -> HandleSet {
    let idx = by_x(mesh);
    let n = idx.len();
    HandleSet::new(vec![idx[..4].to_vec(), idx[n - 4..].to_vec()], n).unwrap()
}

fn max_abs_diff(a: &WeightMatrix, b: &WeightMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn oracle_cases() -> Vec<(String, SparseSymMatrix, HandleSet)> {
    let mut cases = Vec::new();
    for seed in 0..3 {
        let bar2 = synth_shape(ShapeKind::Bar, 2, seed).unwrap();
        let n = bar2.num_vertices();
        cases.push((format!("bar(2) seed {seed} corners"), energy(&bar2), HandleSet::points(&[0, n - 1], n).unwrap()));
        let fps = handles_from_fps(&bar2.to_cloud(), 3, seed).unwrap();
        cases.push((format!("bar(2) seed {seed} fps 3"), energy(&bar2), fps));
        let bar3 = synth_shape(ShapeKind::Bar, 3, seed).unwrap();
        cases.push((format!("bar(3) seed {seed} end faces"), energy(&bar3), end_faces(&bar3)));
        let cloud = random_cloud(11, seed);
        let h = handles_from_fps(&cloud, 2, seed).unwrap();
        cases.push((format!("knn cloud seed {seed}"), baseline_energy(&cloud, 4), h));
    }
    let bar3 = synth_shape(ShapeKind::Bar, 3, 0).unwrap();
    let ends = by_x(&bar3);
    let h = HandleSet::points(&[ends[0], ends[15]], 16).unwrap();
    cases.push(("bar(3) end points".into(), energy(&bar3), h));
    cases
}

#[test]
fn matches_exhaustive_active_set_enumeration() {
    for (name, a, handles) in oracle_cases() {
        let (w, report) = solve_bbw(&a, &handles, &BbwOptions::default()).unwrap();
        let expected = oracles::bbw_exhaustive(&a, &handles, 1e-9);
        let diff = max_abs_diff(&w, &expected);
        assert!(diff <= 1e-6, "{name}: {diff:e}");
        assert!(check_weights(&w, &handles).is_empty(), "{name}");
        assert!(report.max_kkt_residual() <= 1e-8, "{name}");
    }
}

#[test]
fn bar_end_weights_are_monotone_along_axis() {
    let mesh = synth_shape(ShapeKind::Bar, 4, 0).unwrap();
    let handles = end_faces(&mesh);
    let (w, _) = solve_bbw(&energy(&mesh), &handles, &BbwOptions::default()).unwrap();
    assert!(check_weights(&w, &handles).is_empty());
    for s in w.row_sums() {
        assert!((s - 1.0).abs() <= 1e-9);
    }
    let left = w.column(0);
    // cross sections of four lattice vertices; jitter makes the order
    // inside one section arbitrary
    let order = by_x(&mesh);
    let sections: Vec<Vec<f64>> = order.chunks(4).map(|c| c.iter().map(|&i| left[i]).collect()).collect();
    for pair in sections.windows(2) {
        let lo = pair[0].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pair[1].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi <= lo + 1e-9, "{sections:?}");
    }
    assert!(left.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
}

#[test]
fn disconnected_energy_is_rejected() {
    let mesh = synth_shape(ShapeKind::TwoBar, 3, 0).unwrap();
    let handles = HandleSet::points(&[0], mesh.num_vertices()).unwrap();
    match solve_bbw(&energy(&mesh), &handles, &BbwOptions::default()) {
        Err(Error::Disconnected { .. }) => {}
        other => panic!("expected Disconnected, got {other:?}"),
    }
}

#[test]
fn shared_affine_transform_is_reproduced() {
    let t = AffineTransform {
        linear: [[1.1, 0.2, -0.3], [0.0, 0.9, 0.4], [0.25, -0.1, 1.3]],
        translation: [0.3, -0.7, 2.0],
    };
    for (kind, res) in [(ShapeKind::Bar, 4), (ShapeKind::LShape, 2), (ShapeKind::Ellipsoid, 2)] {
        let mesh = synth_shape(kind, res, 1).unwrap();
        let cloud = mesh.to_cloud();
        let handles = handles_from_fps(&cloud, 4, 0).unwrap();
        let (w, _) = solve_bbw(&energy(&mesh), &handles, &BbwOptions::default()).unwrap();
        let out = lbs_deform(&cloud, &w, &DeformationRequest { transforms: vec![t; 4] }).unwrap();
        for (p, q) in cloud.positions().iter().zip(out.positions()) {
            let e = t.apply(p);
            for a in 0..3 {
                assert!((q[a] - e[a]).abs() <= 1e-12, "{kind:?}: {q:?} vs {e:?}");
            }
        }
        let same = lbs_deform(&cloud, &w, &DeformationRequest::identity(4)).unwrap();
        assert_eq!(same.positions(), cloud.positions());
    }
}

fn transform_strategy() -> impl Strategy<Value = AffineTransform> {
    (prop::array::uniform9(-2.0f64..2.0), prop::array::uniform3(-2.0f64..2.0)).prop_map(|(l, t)| {
        AffineTransform {
            linear: [[l[0], l[1], l[2]], [l[3], l[4], l[5]], [l[6], l[7], l[8]]],
            translation: t,
        }
    })
}

fn combine(a: &AffineTransform, b: &AffineTransform, s: f64) -> AffineTransform {
    let mut out = *a;
    for r in 0..3 {
        for c in 0..3 {
            out.linear[r][c] += s * b.linear[r][c];
        }
        out.translation[r] += s * b.translation[r];
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaling_energy_leaves_weights_unchanged(seed in 0u64..500, c in 1e-3f64..1e3) {
        let mesh = synth_shape(ShapeKind::Bar, 3, seed).unwrap();
        let a = energy(&mesh);
        let h = handles_from_fps(&mesh.to_cloud(), 3, seed).unwrap();
        let opts = BbwOptions::default();
        let (w0, _) = solve_bbw(&a, &h, &opts).unwrap();
        let (w1, _) = solve_bbw(&a.scaled(c), &h, &opts).unwrap();
        prop_assert!(max_abs_diff(&w0, &w1) <= 1e-8);
    }

    #[test]
    fn permuting_handles_permutes_columns(seed in 0u64..500, rot in 1usize..4) {
        let mesh = synth_shape(ShapeKind::LShape, 2, seed).unwrap();
        let a = energy(&mesh);
        let h = handles_from_fps(&mesh.to_cloud(), 4, seed).unwrap();
        let order: Vec<usize> = (0..4).map(|k| (k + rot) % 4).collect();
        let opts = BbwOptions::default();
        let (w, _) = solve_bbw(&a, &h, &opts).unwrap();
        let (wp, _) = solve_bbw(&a, &h.permuted(&order), &opts).unwrap();
        prop_assert!(max_abs_diff(&w.permute_columns(&order), &wp) <= 1e-12);
    }

    #[test]
    fn lbs_is_linear_in_transforms(
        seed in 0u64..500,
        ts in prop::collection::vec((transform_strategy(), transform_strategy()), 3),
        s in -3.0f64..3.0,
    ) {
        let cloud = random_cloud(30, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = WeightMatrix::from_vec(30, 3, (0..90).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        w.normalize_rows();
        let a = DeformationRequest { transforms: ts.iter().map(|t| t.0).collect() };
        let b = DeformationRequest { transforms: ts.iter().map(|t| t.1).collect() };
        let ab = DeformationRequest { transforms: ts.iter().map(|t| combine(&t.0, &t.1, s)).collect() };
        let pa = lbs_deform(&cloud, &w, &a).unwrap();
        let pb = lbs_deform(&cloud, &w, &b).unwrap();
        let pab = lbs_deform(&cloud, &w, &ab).unwrap();
        for i in 0..30 {
            for c in 0..3 {
                let e = pa.positions()[i][c] + s * pb.positions()[i][c];
                prop_assert!((pab.positions()[i][c] - e).abs() <= 1e-10);
            }
        }
    }
}
