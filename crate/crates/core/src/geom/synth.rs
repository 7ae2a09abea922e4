//! Deterministic synthetic tet meshes used as training and test fixtures.
//!
//! Every shape is a cube grid split into six tets per cell along the cell's
//! main diagonal (a conforming subdivision), jittered by a seeded amount
//! well below the cell size, and normalized to fit `[-0.5, 0.5]^3`.

use std::collections::HashMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bbox, TetMesh, Vec3};
use crate::error::{Error, Result};

/// Gap between the two bars of [`ShapeKind::TwoBar`], in normalized units.
pub const TWO_BAR_GAP: f64 = 0.05;

/// Jitter amplitude as a fraction of the grid spacing.
const JITTER: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// `res x 1 x 1` cells.
    Bar,
    /// `res^3` cells radially warped onto an ellipsoid with axes 1 : 0.75 : 0.5.
    Ellipsoid,
    /// L-shaped slab, one cell thick.
    LShape,
    /// Two parallel `res x 1 x 1` bars separated by [`TWO_BAR_GAP`].
    TwoBar,
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bar" => Ok(ShapeKind::Bar),
            "ellipsoid" => Ok(ShapeKind::Ellipsoid),
            "lshape" => Ok(ShapeKind::LShape),
            "twobar" => Ok(ShapeKind::TwoBar),
            other => Err(Error::UnsupportedKind(other.to_string())),
        }
    }
}

/// The six tets of a unit cell, as corner bit masks (x = 1, y = 2, z = 4).
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Accumulates grid cells into a compact vertex/tet list.
struct GridBuilder {
    index: HashMap<[i64; 3], usize>,
    lattice: Vec<[i64; 3]>,
    tets: Vec<[usize; 4]>,
}

impl GridBuilder {
    fn new() -> Self {
        Self {
            index: HashMap::new(),
            lattice: Vec::new(),
            tets: Vec::new(),
        }
    }

    fn vertex(&mut self, key: [i64; 3]) -> usize {
        let next = self.lattice.len();
        *self.index.entry(key).or_insert_with(|| {
            self.lattice.push(key);
            next
        })
    }

    fn cell(&mut self, c: [i64; 3]) {
        let corner = |m: usize| [c[0] + (m & 1) as i64, c[1] + ((m >> 1) & 1) as i64, c[2] + ((m >> 2) & 1) as i64];
        for tet in KUHN {
            let ids = tet.map(|m| corner(m));
            let t = [
                self.vertex(ids[0]),
                self.vertex(ids[1]),
                self.vertex(ids[2]),
                self.vertex(ids[3]),
            ];
            self.tets.push(t);
        }
    }

    fn block(&mut self, origin: [i64; 3], size: [i64; 3]) {
        for i in 0..size[0] {
            for j in 0..size[1] {
                for k in 0..size[2] {
                    self.cell([origin[0] + i, origin[1] + j, origin[2] + k]);
                }
            }
        }
    }
}

fn jitter(points: &mut [Vec3], spacing: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = JITTER * spacing;
    for p in points.iter_mut() {
        for c in p.iter_mut() {
            *c += rng.gen_range(-amp..=amp);
        }
    }
}

fn normalize(points: &mut [Vec3]) {
    let (lo, hi) = bbox(points);
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    for p in points.iter_mut() {
        for a in 0..3 {
            p[a] = ((p[a] - center[a]) / extent).clamp(-0.5, 0.5);
        }
    }
}

/// Builds a synthetic fixture. Identical `(kind, resolution, seed)` give
/// bitwise-identical meshes.
pub fn synth_shape(kind: ShapeKind, resolution: usize, seed: u64) -> Result<TetMesh> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least 2, got {resolution}"
        )));
    }
    let r = resolution as i64;
    let mut grid = GridBuilder::new();
    let (mut points, spacing): (Vec<Vec3>, f64) = match kind {
        ShapeKind::Bar => {
            grid.block([0, 0, 0], [r, 1, 1]);
            let pts = grid.lattice.iter().map(|l| l.map(|c| c as f64)).collect();
            (pts, 1.0)
        }
        ShapeKind::LShape => {
            grid.block([0, 0, 0], [2 * r, r, 1]);
            grid.block([0, r, 0], [r, r, 1]);
            let pts = grid.lattice.iter().map(|l| l.map(|c| c as f64)).collect();
            (pts, 1.0)
        }
        ShapeKind::TwoBar => {
            // Cells of size 1/res along a unit-length bar, so the gap is
            // already in normalized units.
            grid.block([0, 0, 0], [r, 1, 1]);
            grid.block([0, 2, 0], [r, 1, 1]);
            let h = 1.0 / resolution as f64;
            let pts = grid
                .lattice
                .iter()
                .map(|l| {
                    let y = match l[1] {
                        0 => 0.0,
                        1 => h,
                        2 => h + TWO_BAR_GAP,
                        _ => 2.0 * h + TWO_BAR_GAP,
                    };
                    [l[0] as f64 * h, y, l[2] as f64 * h]
                })
                .collect();
            (pts, h)
        }
        ShapeKind::Ellipsoid => {
            grid.block([-r, -r, -r], [2 * r, 2 * r, 2 * r]);
            let axes = [1.0, 0.75, 0.5];
            let pts = grid
                .lattice
                .iter()
                .map(|l| {
                    let x = l.map(|c| c as f64 / r as f64);
                    let inf = x.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                    let two = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                    let s = if two > 0.0 { inf / two } else { 0.0 };
                    [x[0] * s * axes[0], x[1] * s * axes[1], x[2] * s * axes[2]]
                })
                .collect();
            (pts, 0.5 / r as f64)
        }
    };
    jitter(&mut points, spacing, seed);
    normalize(&mut points);
    TetMesh::new(points, grid.tets)
}
