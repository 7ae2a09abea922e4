mod support;

use lapdeform_core::fem::cotan_laplacian_dihedral;
use lapdeform_core::geom::{synth_shape, ShapeKind};
use lapdeform_core::pcl::{knn_graph_laplacian, Bandwidth};
use lapdeform_core::{
    cotan_laplacian, deformation_energy, fem_energy, inverse_mass, lumped_mass, PointCloud,
    TetMesh,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles;

fn fixtures() -> Vec<(String, TetMesh)> {
    let mut out = Vec::new();
    for (kind, res) in [
        (ShapeKind::Bar, 3),
        (ShapeKind::Bar, 5),
        (ShapeKind::Ellipsoid, 2),
        (ShapeKind::LShape, 2),
        (ShapeKind::TwoBar, 3),
    ] {
        for seed in [0, 7] {
            out.push((
                format!("{kind:?}({res}) seed {seed}"),
                synth_shape(kind, res, seed).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn matches_dense_hat_gradient_assembly() {
    for (name, mesh) in fixtures() {
        let l = cotan_laplacian(&mesh).unwrap();
        let dense = oracles::dense_fem_laplacian(&mesh);
        let scale = dense.abs().max();
        let diff = (oracles::to_dense(&l) - &dense).abs().max();
        assert!(diff <= 1e-12 * scale, "{name}: {diff:e}");
    }
}

#[test]
fn gradient_and_dihedral_forms_agree() {
    for (name, mesh) in fixtures() {
        let a = cotan_laplacian(&mesh).unwrap();
        let b = cotan_laplacian_dihedral(&mesh).unwrap();
        let scale = oracles::to_dense(&a).abs().max();
        let diff = (oracles::to_dense(&a) - oracles::to_dense(&b)).abs().max();
        assert!(diff <= 1e-12 * scale, "{name}: {diff:e}");
    }
}

#[test]
fn energy_structure_on_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, mesh) in fixtures() {
        let (l, _, a) = fem_energy(&mesh).unwrap();
        let n = l.order();
        let fro = a.frobenius_norm();
        let ones = vec![1.0; n];
        let r = a.mul_vec(&ones);
        assert!(r.iter().all(|v| v.abs() <= 1e-12 * fro), "{name}: A1 != 0");
        let dense = oracles::to_dense(&a);
        assert_eq!(dense, dense.transpose(), "{name}");
        for _ in 0..200 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = a.quadratic_form(&x);
            let x2: f64 = x.iter().map(|v| v * v).sum();
            assert!(q >= -1e-10 * fro * x2, "{name}: {q:e}");
        }
    }
}

#[test]
fn baseline_energy_is_psd_on_grid() {
    let mut pts = Vec::new();
    for i in 0..5 {
        for j in 0..4 {
            for k in 0..3 {
                pts.push([i as f64 * 0.1, j as f64 * 0.1, k as f64 * 0.1]);
            }
        }
    }
    let cloud = PointCloud::new(pts).unwrap();
    let (l, m) = knn_graph_laplacian(&cloud, 6, Bandwidth::Auto).unwrap();
    let a = deformation_energy(&l, &inverse_mass(&m).unwrap()).unwrap();
    let fro = a.frobenius_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let x: Vec<f64> = (0..cloud.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x2: f64 = x.iter().map(|v| v * v).sum();
        assert!(a.quadratic_form(&x) >= -1e-10 * fro * x2);
    }
}

fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|v| v / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

fn entries(l: &lapdeform_core::SparseSymMatrix) -> Vec<f64> {
    l.entries().iter().map(|e| e.2).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rigid_motion_leaves_operators_unchanged(
        seed in 0u64..1000,
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        prop_assume!(axis.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let mesh = synth_shape(ShapeKind::LShape, 2, seed).unwrap();
        let r = rotation(axis, angle);
        let moved = mesh
            .map_vertices(|p| {
                let mut q = shift;
                for a in 0..3 {
                    for b in 0..3 {
                        q[a] += r[a][b] * p[b];
                    }
                }
                q
            })
            .unwrap();
        let (l0, l1) = (cotan_laplacian(&mesh).unwrap(), cotan_laplacian(&moved).unwrap());
        prop_assert_eq!(l0.nnz(), l1.nnz());
        prop_assert!(max_rel_diff(&entries(&l0), &entries(&l1)) <= 1e-10);
        let (m0, m1) = (lumped_mass(&mesh).unwrap(), lumped_mass(&moved).unwrap());
        prop_assert!(max_rel_diff(m0.values(), m1.values()) <= 1e-10);
    }

    #[test]
    fn uniform_scale_scales_l_linearly_and_m_cubically(seed in 0u64..1000) {
        let mesh = synth_shape(ShapeKind::Bar, 3, seed).unwrap();
        let big = mesh.map_vertices(|p| p.map(|c| 2.0 * c)).unwrap();
        let l0 = entries(&cotan_laplacian(&mesh).unwrap());
        let l1 = entries(&cotan_laplacian(&big).unwrap());
        let l0x2: Vec<f64> = l0.iter().map(|v| 2.0 * v).collect();
        prop_assert!(max_rel_diff(&l0x2, &l1) <= 1e-12);
        let m0: Vec<f64> = lumped_mass(&mesh).unwrap().values().iter().map(|v| 8.0 * v).collect();
        let m1 = lumped_mass(&big).unwrap();
        prop_assert!(max_rel_diff(&m0, m1.values()) <= 1e-12);
    }
}
