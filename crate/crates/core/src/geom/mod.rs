//! Geometric carriers: point clouds, tetrahedral meshes, boundary surfaces
//! and exact k-nearest-neighbor queries.

mod io;
mod knn;
mod surface;
mod synth;

pub use io::{
    load_point_cloud, load_tet_mesh, parse_node_ele, parse_ply, parse_xyz, save_ply,
    save_tet_mesh, save_xyz, write_node, write_ele, write_xyz, CloudFormat,
};
pub use knn::{build_knn, KnnIndex};
pub use surface::surface_of;
pub use synth::{synth_shape, ShapeKind, TWO_BAR_GAP};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

/// Signed volume of the tet `(a, b, c, d)`; positive when `d` lies on the
/// side of triangle `abc` that its right-handed normal points to.
#[inline]
pub fn signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    dot(&sub(b, a), &cross(&sub(c, a), &sub(d, a))) / 6.0
}

/// Axis-aligned bounding box as `(min, max)`.
pub fn bbox(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// An unordered set of 3D points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    colors: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        Self::with_colors(positions, None)
    }

    pub fn with_colors(positions: Vec<Vec3>, colors: Option<Vec<Vec3>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite(i));
        }
        if let Some(c) = &colors {
            if c.len() != positions.len() {
                return Err(Error::DimensionMismatch {
                    expected: positions.len(),
                    got: c.len(),
                });
            }
        }
        Ok(Self { positions, colors })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[Vec3]> {
        self.colors.as_deref()
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        bbox(&self.positions)
    }

    /// Reorders points so that new point `i` is old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| perm.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// A tetrahedral volume mesh with positively oriented tets.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    vertices: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
}

impl TetMesh {
    /// Validates indices, re-orients negative tets by swapping their last two
    /// indices, and rejects degenerate or duplicated tets.
    pub fn new(vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>) -> Result<Self> {
        let n = vertices.len();
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = vertices
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite(i));
        }
        let (lo, hi) = bbox(&vertices);
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let min_volume = 1e-14 * extent.powi(3);
        let mut seen: HashMap<[usize; 4], usize> = HashMap::with_capacity(tets.len());
        for (t, tet) in tets.iter_mut().enumerate() {
            for &v in tet.iter() {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
            }
            let [a, b, c, d] = *tet;
            let vol = signed_volume(&vertices[a], &vertices[b], &vertices[c], &vertices[d]);
            if vol.abs() < min_volume || vol.abs() == 0.0 {
                return Err(Error::DegenerateTet { tet: t, volume: vol });
            }
            if vol < 0.0 {
                tet.swap(2, 3);
            }
            let mut key = *tet;
            key.sort_unstable();
            if let Some(&other) = seen.get(&key) {
                return Err(Error::DuplicateTet { tet: t, other });
            }
            seen.insert(key, t);
        }
        Ok(Self { vertices, tets })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t];
        let v = &self.vertices;
        signed_volume(&v[a], &v[b], &v[c], &v[d])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    /// The mesh vertices as a point cloud, index-aligned with the mesh.
    pub fn to_cloud(&self) -> PointCloud {
        PointCloud {
            positions: self.vertices.clone(),
            colors: None,
        }
    }

    /// Applies `f` to every vertex; tets are re-validated.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        Self::new(self.vertices.iter().map(f).collect(), self.tets.clone())
    }
}

/// Boundary triangles of a volume mesh, for display and export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}
