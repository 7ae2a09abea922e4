//! Linear blend skinning and handle placement.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbw::{HandleSet, WeightMatrix};
use crate::error::{Error, Result};
use crate::geom::{dist2, PointCloud, Vec3};

/// `p -> linear * p + translation`, linear part row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub linear: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub const fn identity() -> Self {
        Self {
            linear: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().flatten().chain(&self.translation).all(|v| v.is_finite())
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let l = &self.linear;
        let t = &self.translation;
        [
            l[0][0] * p[0] + l[0][1] * p[1] + l[0][2] * p[2] + t[0],
            l[1][0] * p[0] + l[1][1] * p[1] + l[1][2] * p[2] + t[1],
            l[2][0] * p[0] + l[2][1] * p[1] + l[2][2] * p[2] + t[2],
        ]
    }

    /// `T(p) - p`, evaluated so that the identity yields exact zeros.
    #[inline]
    fn displacement(&self, p: &Vec3) -> Vec3 {
        let l = &self.linear;
        let t = &self.translation;
        [
            (l[0][0] - 1.0) * p[0] + l[0][1] * p[1] + l[0][2] * p[2] + t[0],
            l[1][0] * p[0] + (l[1][1] - 1.0) * p[1] + l[1][2] * p[2] + t[1],
            l[2][0] * p[0] + l[2][1] * p[1] + (l[2][2] - 1.0) * p[2] + t[2],
        ]
    }
}

/// One transform per handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationRequest {
    pub transforms: Vec<AffineTransform>,
}

impl DeformationRequest {
    pub fn identity(m: usize) -> Self {
        Self {
            transforms: vec![AffineTransform::identity(); m],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let req: Self = serde_json::from_str(text)?;
        if let Some(k) = req.transforms.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!("transform {k} is not finite")));
        }
        Ok(req)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("transform json")
    }
}

/// `p'_i = sum_k w_ik T_k(p_i)`, computed as `p_i + sum_k w_ik (T_k(p_i) - p_i)`.
/// The two agree whenever rows of `w` sum to one; the second keeps identity
/// transforms bit-exact.
pub fn lbs_deform(
    points: &PointCloud,
    w: &WeightMatrix,
    req: &DeformationRequest,
) -> Result<PointCloud> {
    if w.rows() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: w.rows(),
        });
    }
    if req.transforms.len() != w.cols() {
        return Err(Error::DimensionMismatch {
            expected: w.cols(),
            got: req.transforms.len(),
        });
    }
    let out = points
        .positions()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d = [0.0; 3];
            for (wk, t) in w.row(i).iter().zip(&req.transforms) {
                let dk = t.displacement(p);
                d[0] += wk * dk[0];
                d[1] += wk * dk[1];
                d[2] += wk * dk[2];
            }
            // skip zero displacements so that -0.0 survives
            let shift = |a: usize| if d[a] == 0.0 { p[a] } else { p[a] + d[a] };
            [shift(0), shift(1), shift(2)]
        })
        .collect();
    PointCloud::with_colors(out, points.colors().map(<[Vec3]>::to_vec))
}

/// Farthest point sampling: the first pick is `seed mod n`, each next pick
/// maximizes the distance to the chosen set (lowest index on ties).
pub fn handles_from_fps(points: &PointCloud, m: usize, seed: u64) -> Result<HandleSet> {
    let n = points.len();
    if m > n {
        return Err(Error::TooManyHandles {
            requested: m,
            available: n,
        });
    }
    if m == 0 {
        return Err(Error::InvalidHandles("at least one handle is required".into()));
    }
    let pts = points.positions();
    let first = (seed % n as u64) as usize;
    let mut picks = vec![first];
    let mut best: Vec<f64> = pts.iter().map(|p| dist2(p, &pts[first])).collect();
    while picks.len() < m {
        let mut next = 0;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in best.iter().enumerate() {
            if d > far {
                far = d;
                next = i;
            }
        }
        picks.push(next);
        for (i, p) in pts.iter().enumerate() {
            best[i] = best[i].min(dist2(p, &pts[next]));
        }
        // chosen points must never be picked again, even on a cloud with
        // duplicates
        for &c in &picks {
            best[c] = f64::NEG_INFINITY;
        }
    }
    HandleSet::points(&picks, n)
}
