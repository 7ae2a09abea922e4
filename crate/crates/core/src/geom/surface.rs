use std::collections::HashMap;

use super::{cross, dot, sub, SurfaceMesh, TetMesh};

/// Boundary triangles: faces owned by exactly one tet, wound so the normal
/// points away from that tet's fourth vertex.
pub fn surface_of(mesh: &TetMesh) -> SurfaceMesh {
    let v = mesh.vertices();
    // key -> (count, oriented face, opposite vertex); BTree-free but
    // deterministic since we re-sort the survivors by first appearance.
    let mut faces: HashMap<[usize; 3], (u32, usize, [usize; 3], usize)> = HashMap::new();
    let mut order = 0usize;
    for tet in mesh.tets() {
        for skip in 0..4 {
            let mut face = [0usize; 3];
            let mut k = 0;
            for (slot, &idx) in tet.iter().enumerate() {
                if slot != skip {
                    face[k] = idx;
                    k += 1;
                }
            }
            let mut key = face;
            key.sort_unstable();
            let entry = faces.entry(key).or_insert_with(|| {
                order += 1;
                (0, order, face, tet[skip])
            });
            entry.0 += 1;
        }
    }
    let mut boundary: Vec<(usize, [usize; 3], usize)> = faces
        .into_values()
        .filter(|(count, ..)| *count == 1)
        .map(|(_, ord, face, opp)| (ord, face, opp))
        .collect();
    boundary.sort_unstable_by_key(|(ord, ..)| *ord);
    let triangles = boundary
        .into_iter()
        .map(|(_, [a, b, c], opp)| {
            let n = cross(&sub(&v[b], &v[a]), &sub(&v[c], &v[a]));
            if dot(&n, &sub(&v[opp], &v[a])) > 0.0 {
                [a, c, b]
            } else {
                [a, b, c]
            }
        })
        .collect();
    SurfaceMesh {
        vertices: v.to_vec(),
        triangles,
    }
}
