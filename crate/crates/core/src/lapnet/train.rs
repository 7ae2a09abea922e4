use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{loss_and_grad, sample_loss, ShapeSample};
use super::params::{Gradient, LapNetParams, ModelDims};
use super::{LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::fem::{cotan_laplacian, inverse_mass, lumped_mass};
use crate::geom::{load_tet_mesh, PointCloud};
use crate::sparse::{DiagMatrix, SparseSymMatrix};

/// Optimizer and loss settings. Every field has a default, so a JSON config
/// only needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_w: f64,
    pub lambda_m: f64,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// Exponent of the polynomial learning-rate decay.
    pub lr_power: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: f64,
    /// Inverse-mass scale; `None` uses 1.5 x the largest training target.
    pub c_m: Option<f64>,
    /// Pair neighborhood size.
    pub k: usize,
    pub dims: ModelDims,
    pub min_points: usize,
    pub max_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_w: 100.0,
            lambda_m: 1.0,
            batch_size: 8,
            lr: 0.001,
            lr_power: 0.9,
            momentum: 0.9,
            epochs: 100,
            seed: 0,
            dropout: 0.1,
            c_m: None,
            k: 32,
            dims: ModelDims::default(),
            min_points: 2,
            max_points: 5000,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_w: self.lambda_w,
            lambda_m: self.lambda_m,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lambda_w >= 0.0 && self.lambda_m >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.k == 0 || self.dims.k == 0 {
            return bad("batch size, epochs and k must be positive");
        }
        if let Some(c) = self.c_m {
            if !(c > 0.0 && c.is_finite()) {
                return bad("c_m must be positive");
            }
        }
        if self.min_points < 2 || self.min_points > self.max_points {
            return bad("point range must satisfy 2 <= min_points <= max_points");
        }
        Ok(())
    }
}

/// A training cloud with its ground-truth Laplacian and inverse masses.
#[derive(Debug, Clone)]
pub struct TrainingShape {
    pub cloud: PointCloud,
    pub laplacian: SparseSymMatrix,
    pub inv_mass: DiagMatrix,
}

impl TrainingShape {
    /// Vertices of a tet mesh with its FEM operators as targets.
    pub fn from_mesh(mesh: &crate::geom::TetMesh) -> Result<Self> {
        Ok(Self {
            cloud: mesh.to_cloud(),
            laplacian: cotan_laplacian(mesh)?,
            inv_mass: inverse_mass(&lumped_mass(mesh)?)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub node: PathBuf,
    pub ele: PathBuf,
}

/// Reads a JSON list of `{node, ele}` paths (relative to the manifest) and
/// builds the FEM targets of every mesh.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<TrainingShape>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let mesh = load_tet_mesh(dir.join(&e.node), dir.join(&e.ele))?;
            TrainingShape::from_mesh(&mesh)
        })
        .collect()
}

/// Clean (dropout-free) mean loss over the dataset after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub best_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest-loss checkpoint.
    pub params: LapNetParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,total,L_term,W_term,M_term\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.loss.total, r.loss.l_term, r.loss.w_term, r.loss.m_term
        ));
    }
    out
}

fn dropout_seed(seed: u64, epoch: usize, shape: usize) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [epoch as u64, shape as u64] {
        x = (x ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 31;
    }
    x
}

fn mean_loss(params: &LapNetParams, samples: &[ShapeSample], w: &LossWeights) -> LossBreakdown {
    let losses: Vec<LossBreakdown> = samples.par_iter().map(|s| sample_loss(params, s, w)).collect();
    let mut mean = LossBreakdown::default();
    for l in &losses {
        mean.add_scaled(l, 1.0 / samples.len() as f64);
    }
    mean
}

/// Mini-batch SGD with momentum and polynomial learning-rate decay.
/// Deterministic for a fixed config.
pub fn train(dataset: &[TrainingShape], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one shape".into()));
    }
    for (s, shape) in dataset.iter().enumerate() {
        let n = shape.cloud.len();
        if n < cfg.min_points || n > cfg.max_points {
            return Err(Error::InvalidArgument(format!(
                "shape {s} has {n} points, allowed range is {}..={}",
                cfg.min_points, cfg.max_points
            )));
        }
    }
    let c_m = match cfg.c_m {
        Some(c) => c,
        None => {
            let max = dataset
                .iter()
                .flat_map(|s| s.inv_mass.values().iter().copied())
                .fold(0.0, f64::max);
            if !(max > 0.0 && max.is_finite()) {
                return Err(Error::InvalidArgument(
                    "inverse-mass targets must be positive".into(),
                ));
            }
            1.5 * max
        }
    };
    let samples = dataset
        .iter()
        .map(|s| ShapeSample::new(s.cloud.clone(), &s.laplacian, &s.inv_mass, cfg.dims.k, cfg.k))
        .collect::<Result<Vec<_>>>()?;
    let weights = cfg.weights();

    let mut params = LapNetParams::new(cfg.dims, cfg.seed);
    params.c_m = c_m;
    let mut velocity = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let mut step = 0usize;

    let mut best = params.clone();
    let mut last_finite = params.clone();
    let mut best_total = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let lr = cfg.lr * (1.0 - step as f64 / total_steps).powf(cfg.lr_power);
            let results: Vec<(LossBreakdown, Gradient)> = batch
                .par_iter()
                .map(|&s| {
                    loss_and_grad(
                        &params,
                        &samples[s],
                        &weights,
                        cfg.dropout,
                        dropout_seed(cfg.seed, epoch, s),
                    )
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut g = Gradient::zeros_like(&params);
            for (loss, gs) in &results {
                if !loss.is_finite() {
                    return Err(Error::DivergedLoss {
                        epoch: epoch + 1,
                        checkpoint: Box::new(if params.is_finite() { params } else { last_finite }),
                    });
                }
                g.add_scaled(gs, scale);
            }
            for ((p, v), gi) in params
                .as_mut_slice()
                .iter_mut()
                .zip(velocity.iter_mut())
                .zip(&g.values)
            {
                *v = cfg.momentum * *v + gi;
                *p -= lr * *v;
            }
            step += 1;
        }
        let loss = mean_loss(&params, &samples, &weights);
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::DivergedLoss {
                epoch: epoch + 1,
                checkpoint: Box::new(last_finite),
            });
        }
        last_finite.as_mut_slice().copy_from_slice(params.as_slice());
        if loss.total < best_total {
            best_total = loss.total;
            best = params.clone();
            best_epoch = epoch + 1;
        }
        log::debug!("epoch {}: loss {:.6}", epoch + 1, loss.total);
        history.push(EpochRecord {
            epoch: epoch + 1,
            loss,
            best_total,
        });
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch,
        history,
    })
}
