//! Weight and shape comparison metrics, and the end-to-end evaluation run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbw::{solve_bbw, BbwOptions, HandleSet, WeightMatrix};
use crate::deform::{handles_from_fps, lbs_deform, AffineTransform, DeformationRequest};
use crate::error::{Error, Result};
use crate::fem::{deformation_energy, fem_energy};
use crate::geom::{dist2, PointCloud, TetMesh, Vec3};
use crate::lapnet::{predict, LapNetParams};
use crate::pcl::{knn_graph_laplacian, Bandwidth};
use crate::sparse::SparseSymMatrix;

/// Mean absolute difference over all entries.
pub fn weight_l1(pred: &WeightMatrix, gt: &WeightMatrix) -> Result<f64> {
    if pred.rows() != gt.rows() || pred.cols() != gt.cols() {
        return Err(Error::DimensionMismatch {
            expected: gt.rows() * gt.cols(),
            got: pred.rows() * pred.cols(),
        });
    }
    let n = pred.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Squared distance from each point of `from` to its nearest point in `to`.
fn nearest_sq(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    from.par_iter()
        .map(|p| to.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Mean squared nearest-neighbor distance, summed over both directions.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> f64 {
    let a = nearest_sq(p.positions(), q.positions());
    let b = nearest_sq(q.positions(), p.positions());
    a.iter().sum::<f64>() / a.len() as f64 + b.iter().sum::<f64>() / b.len() as f64
}

/// Larger of the two directed max-min Euclidean distances.
pub fn hausdorff(p: &PointCloud, q: &PointCloud) -> f64 {
    let a = nearest_sq(p.positions(), q.positions());
    let b = nearest_sq(q.positions(), p.positions());
    a.into_iter().chain(b).fold(0.0, f64::max).sqrt()
}

/// Where the evaluated Laplacian and inverse masses come from.
#[derive(Debug, Clone, Copy)]
pub enum EnergySource<'a> {
    /// The FEM operators of the ground-truth mesh.
    Oracle,
    Learned { params: &'a LapNetParams, k: usize },
    Baseline { k: usize },
}

/// Deformation energy of `cloud` under `source`.
pub fn energy_for(
    cloud: &PointCloud,
    mesh: Option<&TetMesh>,
    source: EnergySource<'_>,
) -> Result<SparseSymMatrix> {
    match source {
        EnergySource::Oracle => {
            let mesh = mesh.ok_or_else(|| {
                Error::InvalidArgument("the oracle energy needs a tet mesh".into())
            })?;
            check_alignment(cloud, mesh)?;
            Ok(fem_energy(mesh)?.2)
        }
        EnergySource::Learned { params, k } => {
            let pred = predict(cloud, params, k)?;
            deformation_energy(&pred.laplacian, &pred.inv_mass)
        }
        EnergySource::Baseline { k } => {
            let (l, m) = knn_graph_laplacian(cloud, k, Bandwidth::Auto)?;
            deformation_energy(&l, &crate::fem::inverse_mass(&m)?)
        }
    }
}

fn check_alignment(cloud: &PointCloud, mesh: &TetMesh) -> Result<()> {
    if cloud.len() != mesh.num_vertices() {
        return Err(Error::IndexMisalignment {
            cloud: cloud.len(),
            mesh: mesh.num_vertices(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub handles: usize,
    /// First FPS pick.
    pub handle_seed: u64,
    /// Seed of the first random deformation; the rest use consecutive seeds.
    pub deform_seed: u64,
    pub deformations: usize,
    /// Half-width of the per-axis translation range.
    pub magnitude: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            handles: 16,
            handle_seed: 0,
            deform_seed: 0,
            deformations: 4,
            magnitude: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub shape_cd: f64,
    pub shape_hd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub weight_l1: f64,
    pub shape_cd: f64,
    pub shape_hd: f64,
    pub per_seed: Vec<SeedReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report json")
    }

    pub const CSV_HEADER: &'static str = "weight_l1,shape_cd,shape_hd";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.weight_l1, self.shape_cd, self.shape_hd)
    }
}

/// Random per-handle translations, uniform in `[-magnitude, magnitude]^3`.
pub fn random_translations(m: usize, seed: u64, magnitude: f64) -> DeformationRequest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DeformationRequest {
        transforms: (0..m)
            .map(|_| {
                AffineTransform::translation([
                    rng.gen_range(-magnitude..=magnitude),
                    rng.gen_range(-magnitude..=magnitude),
                    rng.gen_range(-magnitude..=magnitude),
                ])
            })
            .collect(),
    }
}

/// Weights of both energies for FPS handles.
pub fn eval_weights(
    cloud: &PointCloud,
    mesh: &TetMesh,
    source: EnergySource<'_>,
    handles: &HandleSet,
) -> Result<(WeightMatrix, WeightMatrix)> {
    check_alignment(cloud, mesh)?;
    let opts = BbwOptions::default();
    let (w_gt, _) = solve_bbw(&fem_energy(mesh)?.2, handles, &opts)?;
    let (w_pred, _) = solve_bbw(&energy_for(cloud, Some(mesh), source)?, handles, &opts)?;
    Ok((w_pred, w_gt))
}

/// Weight L1 between predicted and ground-truth weights, and shape distances
/// between the clouds each deforms to under seeded random handle translations.
pub fn eval_pipeline(
    cloud: &PointCloud,
    mesh: &TetMesh,
    source: EnergySource<'_>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let handles = handles_from_fps(cloud, opts.handles, opts.handle_seed)?;
    let (w_pred, w_gt) = eval_weights(cloud, mesh, source, &handles)?;
    let weight_l1 = weight_l1(&w_pred, &w_gt)?;
    let mut per_seed = Vec::with_capacity(opts.deformations);
    for s in 0..opts.deformations as u64 {
        let seed = opts.deform_seed + s;
        let req = random_translations(handles.len(), seed, opts.magnitude);
        let target = lbs_deform(cloud, &w_gt, &req)?;
        let got = lbs_deform(cloud, &w_pred, &req)?;
        per_seed.push(SeedReport {
            seed,
            shape_cd: chamfer(&got, &target),
            shape_hd: hausdorff(&got, &target),
        });
    }
    let count = per_seed.len().max(1) as f64;
    Ok(EvalReport {
        weight_l1,
        shape_cd: per_seed.iter().map(|r| r.shape_cd).sum::<f64>() / count,
        shape_hd: per_seed.iter().map(|r| r.shape_hd).sum::<f64>() / count,
        per_seed,
    })
}
