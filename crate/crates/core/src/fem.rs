//! Linear-FEM cotangent Laplacian, lumped mass and the biharmonic energy
//! `A = L M^-1 L` on tetrahedral meshes.
//!
//! Sign convention: `L = -S` with `S` the stiffness matrix, so off-diagonal
//! entries are cotangent weights and the diagonal is negative.

use crate::error::{Error, Result};
use crate::geom::{cross, dot, norm, sub, TetMesh, Vec3};
use crate::sparse::{DiagMatrix, SparseSymMatrix};

/// Gradients of the four barycentric hat functions on a tet, and its volume.
fn hat_gradients(x: [&Vec3; 4]) -> ([Vec3; 4], f64) {
    let e1 = sub(x[1], x[0]);
    let e2 = sub(x[2], x[0]);
    let e3 = sub(x[3], x[0]);
    let det = dot(&e1, &cross(&e2, &e3));
    let g1 = cross(&e2, &e3).map(|c| c / det);
    let g2 = cross(&e3, &e1).map(|c| c / det);
    let g3 = cross(&e1, &e2).map(|c| c / det);
    let g0 = [
        -(g1[0] + g2[0] + g3[0]),
        -(g1[1] + g2[1] + g3[1]),
        -(g1[2] + g2[2] + g3[2]),
    ];
    ([g0, g1, g2, g3], det / 6.0)
}

fn tet_corners<'a>(mesh: &'a TetMesh, tet: &[usize; 4]) -> [&'a Vec3; 4] {
    let v = mesh.vertices();
    [&v[tet[0]], &v[tet[1]], &v[tet[2]], &v[tet[3]]]
}

fn check_volume(t: usize, volume: f64) -> Result<()> {
    if volume > 0.0 && volume.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateTet { tet: t, volume })
    }
}

/// `L_ij = -sum_t V_t (g_i . g_j)` over tets containing `i` and `j`.
/// Contributions are accumulated in tet order.
pub fn cotan_laplacian(mesh: &TetMesh) -> Result<SparseSymMatrix> {
    let mut triplets = Vec::with_capacity(mesh.tets().len() * 10);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let (g, vol) = hat_gradients(tet_corners(mesh, tet));
        check_volume(t, vol)?;
        for a in 0..4 {
            for b in a..4 {
                triplets.push((tet[a], tet[b], -vol * dot(&g[a], &g[b])));
            }
        }
    }
    SparseSymMatrix::from_triplets(mesh.num_vertices(), triplets)
}

/// Same matrix assembled from edge lengths and dihedral angles:
/// `w_ij = sum_t l_kl cot(theta_kl) / 6` with `kl` the edge opposite `ij`,
/// diagonal set to minus the off-diagonal row sum.
pub fn cotan_laplacian_dihedral(mesh: &TetMesh) -> Result<SparseSymMatrix> {
    const EDGES: [(usize, usize, usize, usize); 6] = [
        (0, 1, 2, 3),
        (0, 2, 1, 3),
        (0, 3, 1, 2),
        (1, 2, 0, 3),
        (1, 3, 0, 2),
        (2, 3, 0, 1),
    ];
    let n = mesh.num_vertices();
    let mut triplets = Vec::with_capacity(mesh.tets().len() * 12);
    let mut diag = vec![0.0; n];
    for (t, tet) in mesh.tets().iter().enumerate() {
        check_volume(t, mesh.tet_volume(t))?;
        let x = tet_corners(mesh, tet);
        for &(i, j, k, l) in &EDGES {
            let edge = sub(x[l], x[k]);
            let len = norm(&edge);
            let dir = edge.map(|c| c / len);
            let perp = |p: &Vec3| {
                let r = sub(p, x[k]);
                let s = dot(&r, &dir);
                [r[0] - s * dir[0], r[1] - s * dir[1], r[2] - s * dir[2]]
            };
            let (ui, uj) = (perp(x[i]), perp(x[j]));
            let cot = dot(&ui, &uj) / norm(&cross(&ui, &uj));
            let w = len * cot / 6.0;
            triplets.push((tet[i], tet[j], w));
            diag[tet[i]] -= w;
            diag[tet[j]] -= w;
        }
    }
    triplets.extend(diag.into_iter().enumerate().map(|(i, d)| (i, i, d)));
    SparseSymMatrix::from_triplets(n, triplets)
}

/// Barycentric lumping: `M_ii = sum_{t containing i} V_t / 4`.
pub fn lumped_mass(mesh: &TetMesh) -> Result<DiagMatrix> {
    let mut m = vec![0.0; mesh.num_vertices()];
    for (t, tet) in mesh.tets().iter().enumerate() {
        let vol = mesh.tet_volume(t);
        check_volume(t, vol)?;
        for &v in tet {
            m[v] += vol / 4.0;
        }
    }
    Ok(DiagMatrix::new(m))
}

pub fn inverse_mass(mass: &DiagMatrix) -> Result<DiagMatrix> {
    mass.values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(1.0 / v)
            } else {
                Err(Error::NonPositiveMass { index: i, value: v })
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(DiagMatrix::new)
}

/// Sparse triple product `A = L diag(minv) L`.
pub fn deformation_energy(lap: &SparseSymMatrix, minv: &DiagMatrix) -> Result<SparseSymMatrix> {
    let n = lap.order();
    if minv.order() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: minv.order(),
        });
    }
    let rows = lap.rows();
    let d = minv.values();
    let mut acc = vec![0.0; n];
    let mut touched = vec![false; n];
    let mut cols: Vec<usize> = Vec::new();
    let mut entries = Vec::new();
    for i in 0..n {
        for &(k, lik) in &rows[i] {
            let s = lik * d[k];
            for &(j, lkj) in &rows[k] {
                if j < i {
                    continue;
                }
                if !touched[j] {
                    touched[j] = true;
                    cols.push(j);
                }
                acc[j] += s * lkj;
            }
        }
        cols.sort_unstable();
        for &j in &cols {
            entries.push((i, j, acc[j]));
            acc[j] = 0.0;
            touched[j] = false;
        }
        cols.clear();
    }
    Ok(SparseSymMatrix::from_sorted_upper(n, entries))
}

/// Convenience: `(L, M, A)` for a mesh.
pub fn fem_energy(mesh: &TetMesh) -> Result<(SparseSymMatrix, DiagMatrix, SparseSymMatrix)> {
    let lap = cotan_laplacian(mesh)?;
    let mass = lumped_mass(mesh)?;
    let a = deformation_energy(&lap, &inverse_mass(&mass)?)?;
    Ok((lap, mass, a))
}
