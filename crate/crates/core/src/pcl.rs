//! Gaussian-kernel KNN graph Laplacian: the non-learned point cloud baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{build_knn, dist2, PointCloud};
use crate::sparse::{DiagMatrix, SparseSymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Mean distance to the k-th neighbor.
    Auto,
    Fixed(f64),
}

/// Returns `(L, M)`: `L_ij = exp(-|p_i - p_j|^2 / (2 sigma^2))` on the
/// symmetrized KNN graph with zero row sums, and the local volume proxy
/// `M_ii = 4/3 pi r_i^3 / k` (r_i the k-th neighbor distance, floored at 1e-12).
pub fn knn_graph_laplacian(
    cloud: &PointCloud,
    k: usize,
    bandwidth: Bandwidth,
) -> Result<(SparseSymMatrix, DiagMatrix)> {
    let n = cloud.len();
    if k == 0 || n <= k {
        return Err(Error::InvalidArgument(format!(
            "knn graph needs n > k >= 1 (n = {n}, k = {k})"
        )));
    }
    let pts = cloud.positions();
    let knn = build_knn(cloud, k);
    let radius: Vec<f64> = (0..n)
        .map(|i| dist2(&pts[i], &pts[knn.neighbors(i)[k - 1]]).sqrt())
        .collect();
    let sigma = match bandwidth {
        Bandwidth::Auto => radius.iter().sum::<f64>() / n as f64,
        Bandwidth::Fixed(s) => s,
    };
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::DegenerateCloud(format!("kernel bandwidth is {sigma}")));
    }

    let mut pairs: Vec<(usize, usize)> = knn
        .iter()
        .enumerate()
        .flat_map(|(i, nb)| nb.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();

    let mut diag = vec![0.0; n];
    let mut triplets = Vec::with_capacity(pairs.len() + n);
    for &(i, j) in &pairs {
        let w = (-dist2(&pts[i], &pts[j]) / (2.0 * sigma * sigma)).exp();
        triplets.push((i, j, w));
        diag[i] -= w;
        diag[j] -= w;
    }
    triplets.extend(diag.into_iter().enumerate().map(|(i, d)| (i, i, d)));
    let lap = SparseSymMatrix::from_triplets(n, triplets)?;

    let mass = radius
        .iter()
        .map(|r| (4.0 / 3.0 * std::f64::consts::PI * r.powi(3) / k as f64).max(1e-12))
        .collect();
    Ok((lap, DiagMatrix::new(mass)))
}
