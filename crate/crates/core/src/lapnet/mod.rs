//! Learned point-cloud Laplacian: a per-point encoder followed by pairwise
//! gate/value heads and a per-point inverse-mass head.

mod net;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{build_knn, PointCloud, Vec3};
use crate::sparse::{DiagMatrix, SparseSymMatrix};

pub use net::{
    encode, grad, loss_and_grad, predict, predict_pair, sample_loss, sigmoid, ShapeSample,
    LEAKY_SLOPE,
};
pub use params::{
    layer, load_model, save_model, Gradient, LapNetParams, LayerSpec, ModelDims, MODEL_MAGIC,
    MODEL_VERSION,
};
pub use train::{
    history_csv, load_manifest, train, EpochRecord, ManifestEntry, TrainConfig, TrainOutcome,
    TrainingShape,
};

/// Ground-truth entries with magnitude above this count as structurally nonzero.
pub const GATE_TARGET_EPS: f64 = 1e-12;

/// Unordered point pair, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
}

impl PairSample {
    pub fn new(a: usize, b: usize) -> Self {
        Self {
            i: a.min(b),
            j: a.max(b),
        }
    }
}

/// Union of every point's k nearest neighbors as sorted, deduplicated
/// pairs. Empty for clouds with fewer than two points.
pub fn kps(cloud: &PointCloud, k: usize) -> Vec<PairSample> {
    if cloud.len() < 2 {
        return Vec::new();
    }
    let knn = build_knn(cloud, k);
    let mut pairs: Vec<PairSample> = knn
        .iter()
        .enumerate()
        .flat_map(|(i, nb)| nb.iter().map(move |&j| PairSample::new(i, j)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// `(covered, total)`: nonzero off-diagonal ground-truth entries and how many
/// of them fall inside `pairs`.
pub fn kps_coverage(pairs: &[PairSample], gt: &SparseSymMatrix) -> (usize, usize) {
    let mut total = 0;
    let mut covered = 0;
    for &(i, j, v) in gt.entries() {
        if i != j && v.abs() > GATE_TARGET_EPS {
            total += 1;
            if pairs.binary_search(&PairSample { i, j }).is_ok() {
                covered += 1;
            }
        }
    }
    (covered, total)
}

pub(crate) fn write_pair_feature(out: &mut [f64], pi: &Vec3, pj: &Vec3, fi: &[f64], fj: &[f64]) {
    for a in 0..3 {
        out[a] = (pi[a] - pj[a]).abs();
    }
    for (o, (x, y)) in out[3..].iter_mut().zip(fi.iter().zip(fj)) {
        *o = x * y;
    }
}

/// `(|p_i - p_j|, f_i * f_j)`, symmetric in its two arguments.
///
/// # Panics
/// If the feature vectors differ in length.
pub fn pair_feature(pi: &Vec3, pj: &Vec3, fi: &[f64], fj: &[f64]) -> Vec<f64> {
    assert_eq!(fi.len(), fj.len(), "feature widths differ");
    let mut g = vec![0.0; 3 + fi.len()];
    write_pair_feature(&mut g, pi, pj, fi, fj);
    g
}

/// Row-major `n x d` per-point features.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    d: usize,
    data: Vec<f64>,
}

impl PointFeatures {
    pub(crate) fn from_vec(d: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % d.max(1), 0);
        Self { d, data }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.data.len() / self.d
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Network output for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pairs: Vec<PairSample>,
    /// Sparsity gates, one per pair.
    pub gates: Vec<f64>,
    /// Ungated entry values, one per pair.
    pub values: Vec<f64>,
    /// Off-diagonals `gate * value` on the pairs, diagonal minus the row sum.
    pub laplacian: SparseSymMatrix,
    /// Inverse masses before rescaling, in (0, 1).
    pub inv_mass_unit: Vec<f64>,
    /// `c_m * inv_mass_unit`.
    pub inv_mass: DiagMatrix,
    pub c_m: f64,
}

impl Prediction {
    pub fn from_parts(
        n: usize,
        pairs: Vec<PairSample>,
        gates: Vec<f64>,
        values: Vec<f64>,
        inv_mass_unit: Vec<f64>,
        c_m: f64,
    ) -> Result<Self> {
        if gates.len() != pairs.len() || values.len() != pairs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} pairs but {} gates and {} values",
                pairs.len(),
                gates.len(),
                values.len()
            )));
        }
        if inv_mass_unit.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: inv_mass_unit.len(),
            });
        }
        let laplacian = assemble(n, &pairs, &gates, &values, 0.0)?;
        let inv_mass = DiagMatrix::new(inv_mass_unit.iter().map(|v| c_m * v).collect());
        Ok(Self {
            pairs,
            gates,
            values,
            laplacian,
            inv_mass_unit,
            inv_mass,
            c_m,
        })
    }

    pub fn len(&self) -> usize {
        self.inv_mass_unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_mass_unit.is_empty()
    }

    /// Gated off-diagonal entry for pair index `p`.
    pub fn entry(&self, p: usize) -> f64 {
        self.gates[p] * self.values[p]
    }

    /// Laplacian with every pair whose gate is below `threshold` set to zero.
    pub fn hard_gated_laplacian(&self, threshold: f64) -> Result<SparseSymMatrix> {
        assemble(self.len(), &self.pairs, &self.gates, &self.values, threshold)
    }
}

fn assemble(
    n: usize,
    pairs: &[PairSample],
    gates: &[f64],
    values: &[f64],
    threshold: f64,
) -> Result<SparseSymMatrix> {
    let mut diag = vec![0.0; n];
    let mut triplets = Vec::with_capacity(pairs.len() + n);
    for (p, pair) in pairs.iter().enumerate() {
        if gates[p] < threshold {
            continue;
        }
        let v = gates[p] * values[p];
        triplets.push((pair.i, pair.j, v));
        diag[pair.i] -= v;
        diag[pair.j] -= v;
    }
    triplets.extend(diag.into_iter().enumerate().map(|(i, d)| (i, i, d)));
    SparseSymMatrix::from_triplets(n, triplets)
}

/// Per-term loss values; `total = l_term + w_term + m_term`, the last two
/// already scaled by their weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_term: f64,
    pub w_term: f64,
    pub m_term: f64,
}

impl LossBreakdown {
    pub(crate) fn new(l_term: f64, w_term: f64, m_term: f64) -> Self {
        Self {
            total: l_term + w_term + m_term,
            l_term,
            w_term,
            m_term,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }

    pub(crate) fn add_scaled(&mut self, o: &LossBreakdown, c: f64) {
        self.total += c * o.total;
        self.l_term += c * o.l_term;
        self.w_term += c * o.w_term;
        self.m_term += c * o.m_term;
    }
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_w: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_w: 100.0,
            lambda_m: 1.0,
        }
    }
}

/// Mean absolute entry error over `pairs`, plus weighted mean gate error,
/// plus weighted mean inverse-mass error measured in units of `pred.c_m`.
pub fn loss(
    pred: &Prediction,
    gt_l: &SparseSymMatrix,
    gt_minv: &DiagMatrix,
    pairs: &[PairSample],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let n = pred.len();
    if pred.pairs != pairs {
        return Err(Error::PatternMismatch(
            "prediction was made on a different pair set".into(),
        ));
    }
    if gt_l.order() != n || gt_minv.order() != n {
        return Err(Error::PatternMismatch(format!(
            "prediction has {n} points, ground truth has {} / {}",
            gt_l.order(),
            gt_minv.order()
        )));
    }
    if let Some(p) = pairs.iter().find(|p| p.i >= p.j || p.j >= n) {
        return Err(Error::PatternMismatch(format!("invalid pair ({}, {})", p.i, p.j)));
    }
    let np = pairs.len().max(1) as f64;
    let mut l_sum = 0.0;
    let mut w_sum = 0.0;
    for (p, pair) in pairs.iter().enumerate() {
        let t = gt_l.get(pair.i, pair.j);
        let wt = if t.abs() > GATE_TARGET_EPS { 1.0 } else { 0.0 };
        l_sum += (pred.entry(p) - t).abs();
        w_sum += (pred.gates[p] - wt).abs();
    }
    let m_sum: f64 = pred
        .inv_mass
        .values()
        .iter()
        .zip(gt_minv.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(LossBreakdown::new(
        l_sum / np,
        weights.lambda_w * w_sum / np,
        weights.lambda_m * m_sum / (n.max(1) as f64 * pred.c_m),
    ))
}
