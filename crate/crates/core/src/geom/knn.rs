use std::cmp::Ordering;

use rayon::prelude::*;

use super::{dist2, PointCloud};

/// Exact k-nearest-neighbor lists. Neighbors are sorted by ascending distance,
/// ties broken by ascending point index; a point is never its own neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    requested_k: usize,
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl KnnIndex {
    /// Effective neighbor count, `min(requested, n - 1)`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn requested_k(&self) -> usize {
        self.requested_k
    }

    pub fn was_clamped(&self) -> bool {
        self.k < self.requested_k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.neighbors.iter().map(Vec::as_slice)
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Brute-force exact KNN. `k` is clamped to `n - 1` with a logged warning.
pub fn build_knn(cloud: &PointCloud, k: usize) -> KnnIndex {
    let pts = cloud.positions();
    let n = pts.len();
    let requested_k = k.max(1);
    let k = requested_k.min(n.saturating_sub(1));
    if k < requested_k {
        log::warn!("knn: k = {requested_k} clamped to {k} for a cloud of {n} points");
    }
    let neighbors = (0..n)
        .into_par_iter()
        .map(|i| {
            if k == 0 {
                return Vec::new();
            }
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist2(&pts[i], &pts[j]), j))
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_distance_then_index);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_distance_then_index);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    KnnIndex {
        requested_k,
        k,
        neighbors,
    }
}
