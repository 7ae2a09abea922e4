use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::params::{layer, Gradient, LapNetParams};
use super::{
    kps, write_pair_feature, LossBreakdown, LossWeights, PairSample, PointFeatures, Prediction,
    GATE_TARGET_EPS,
};
use crate::error::{Error, Result};
use crate::geom::{build_knn, KnnIndex, PointCloud, Vec3};
use crate::sparse::{DiagMatrix, SparseSymMatrix};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Rows per block when evaluating heads at inference time.
const CHUNK: usize = 2048;

#[inline]
fn lrelu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
fn lrelu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn affine(x: ArrayView2<'_, f64>, p: &LapNetParams, l: usize) -> Array2<f64> {
    let mut z = x.dot(&p.weight(l).t());
    z += &p.bias(l);
    z
}

/// Accumulates `dz^T x` and the column sums of `dz` into layer `l`.
fn accumulate(g: &mut Gradient, l: usize, dz: &Array2<f64>, x: ArrayView2<'_, f64>) {
    general_mat_mul(1.0, &dz.t(), &x, 1.0, &mut g.weight_mut(l));
    let mut b = g.bias_mut(l);
    b += &dz.sum_axis(Axis(0));
}

struct EncoderCache {
    x0: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    /// `[h2 | mean of neighbors' h2]`
    c: Array2<f64>,
    z3: Array2<f64>,
    f: Array2<f64>,
}

fn encoder_forward(p: &LapNetParams, pos: &[Vec3], nb: &KnnIndex) -> EncoderCache {
    let n = pos.len();
    let x0 = Array2::from_shape_fn((n, 3), |(i, a)| pos[i][a]);
    let z1 = affine(x0.view(), p, layer::ENC_IN);
    let h1 = z1.mapv(lrelu);
    let z2 = affine(h1.view(), p, layer::ENC_HIDDEN);
    let e = z2.ncols();
    let mut c = Array2::zeros((n, 2 * e));
    c.slice_mut(s![.., ..e]).assign(&z2.mapv(lrelu));
    for i in 0..n {
        let nbs = nb.neighbors(i);
        if nbs.is_empty() {
            continue;
        }
        let mut acc = vec![0.0; e];
        for &j in nbs {
            for (a, v) in acc.iter_mut().zip(c.row(j).iter()) {
                *a += v;
            }
        }
        let inv = 1.0 / nbs.len() as f64;
        for (a, v) in acc.into_iter().enumerate() {
            c[[i, e + a]] = v * inv;
        }
    }
    let z3 = affine(c.view(), p, layer::ENC_AGG);
    let f = z3.mapv(lrelu);
    EncoderCache {
        x0,
        z1,
        h1,
        z2,
        c,
        z3,
        f,
    }
}

fn encoder_backward(
    p: &LapNetParams,
    g: &mut Gradient,
    cache: &EncoderCache,
    nb: &KnnIndex,
    mut df: Array2<f64>,
) {
    Zip::from(&mut df)
        .and(&cache.z3)
        .for_each(|d, &z| *d *= lrelu_grad(z));
    accumulate(g, layer::ENC_AGG, &df, cache.c.view());
    let dc = df.dot(&p.weight(layer::ENC_AGG));
    let e = cache.z2.ncols();
    let mut dh2 = dc.slice(s![.., ..e]).to_owned();
    for i in 0..dc.nrows() {
        let nbs = nb.neighbors(i);
        if nbs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbs.len() as f64;
        let dagg = dc.slice(s![i, e..]);
        for &j in nbs {
            dh2.row_mut(j).scaled_add(inv, &dagg);
        }
    }
    Zip::from(&mut dh2)
        .and(&cache.z2)
        .for_each(|d, &z| *d *= lrelu_grad(z));
    accumulate(g, layer::ENC_HIDDEN, &dh2, cache.h1.view());
    let mut dh1 = dh2.dot(&p.weight(layer::ENC_HIDDEN));
    Zip::from(&mut dh1)
        .and(&cache.z1)
        .for_each(|d, &z| *d *= lrelu_grad(z));
    accumulate(g, layer::ENC_IN, &dh1, cache.x0.view());
}

struct HeadCache {
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    out: Array1<f64>,
    masks: Option<[Array2<f64>; 2]>,
}

fn head_forward(
    p: &LapNetParams,
    base: usize,
    x: ArrayView2<'_, f64>,
    masks: Option<[Array2<f64>; 2]>,
) -> HeadCache {
    let z1 = affine(x, p, base);
    let mut a1 = z1.mapv(lrelu);
    if let Some(m) = &masks {
        a1 *= &m[0];
    }
    let z2 = affine(a1.view(), p, base + 1);
    let mut a2 = z2.mapv(lrelu);
    if let Some(m) = &masks {
        a2 *= &m[1];
    }
    let out = affine(a2.view(), p, base + 2).column(0).to_owned();
    HeadCache {
        z1,
        a1,
        z2,
        a2,
        out,
        masks,
    }
}

/// Raw head outputs without keeping intermediates, evaluated in row blocks.
fn head_eval(p: &LapNetParams, base: usize, x: ArrayView2<'_, f64>) -> Vec<f64> {
    let z1 = affine(x, p, base).mapv(lrelu);
    let z2 = affine(z1.view(), p, base + 1).mapv(lrelu);
    affine(z2.view(), p, base + 2).column(0).to_vec()
}

/// Returns the gradient with respect to the head input.
fn head_backward(
    p: &LapNetParams,
    g: &mut Gradient,
    base: usize,
    x: ArrayView2<'_, f64>,
    cache: &HeadCache,
    dout: &Array1<f64>,
) -> Array2<f64> {
    let dout = dout.view().insert_axis(Axis(1)).to_owned();
    accumulate(g, base + 2, &dout, cache.a2.view());
    let mut dz2 = dout.dot(&p.weight(base + 2));
    if let Some(m) = &cache.masks {
        dz2 *= &m[1];
    }
    Zip::from(&mut dz2)
        .and(&cache.z2)
        .for_each(|d, &z| *d *= lrelu_grad(z));
    accumulate(g, base + 1, &dz2, cache.a1.view());
    let mut dz1 = dz2.dot(&p.weight(base + 1));
    if let Some(m) = &cache.masks {
        dz1 *= &m[0];
    }
    Zip::from(&mut dz1)
        .and(&cache.z1)
        .for_each(|d, &z| *d *= lrelu_grad(z));
    accumulate(g, base, &dz1, x);
    dz1.dot(&p.weight(base))
}

fn pair_inputs(pos: &[Vec3], f: ArrayView2<'_, f64>, pairs: &[PairSample]) -> Array2<f64> {
    let d = f.ncols();
    let mut g = Array2::zeros((pairs.len(), 3 + d));
    for (mut row, pair) in g.outer_iter_mut().zip(pairs) {
        let fi = f.row(pair.i);
        let fj = f.row(pair.j);
        write_pair_feature(
            row.as_slice_mut().expect("contiguous row"),
            &pos[pair.i],
            &pos[pair.j],
            fi.as_slice().expect("contiguous row"),
            fj.as_slice().expect("contiguous row"),
        );
    }
    g
}

fn point_inputs(pos: &[Vec3], f: ArrayView2<'_, f64>) -> Array2<f64> {
    let d = f.ncols();
    let mut q = Array2::zeros((pos.len(), 3 + d));
    for (i, p) in pos.iter().enumerate() {
        for a in 0..3 {
            q[[i, a]] = p[a];
        }
    }
    q.slice_mut(s![.., 3..]).assign(&f);
    q
}

fn check_knn(cloud: &PointCloud, knn: &KnnIndex) -> Result<()> {
    if knn.len() != cloud.len() {
        return Err(Error::ShapeMismatch(format!(
            "neighbor index covers {} points, cloud has {}",
            knn.len(),
            cloud.len()
        )));
    }
    Ok(())
}

/// Per-point features from the encoder.
pub fn encode(cloud: &PointCloud, knn: &KnnIndex, params: &LapNetParams) -> Result<PointFeatures> {
    check_knn(cloud, knn)?;
    let cache = encoder_forward(params, cloud.positions(), knn);
    let d = cache.f.ncols();
    Ok(PointFeatures::from_vec(d, cache.f.into_raw_vec()))
}

/// `(gate, value)` for one pair feature `g` of width `3 + d`.
pub fn predict_pair(params: &LapNetParams, g: &[f64]) -> Result<(f64, f64)> {
    let want = 3 + params.dims().d;
    if g.len() != want {
        return Err(Error::ShapeMismatch(format!(
            "pair feature has width {}, expected {want}",
            g.len()
        )));
    }
    let x = ArrayView2::from_shape((1, want), g).expect("row");
    let gate = sigmoid(head_eval(params, layer::ALPHA, x)[0]);
    let value = head_eval(params, layer::PHI, x)[0];
    Ok((gate, value))
}

/// Predicted Laplacian on the `k`-nearest-neighbor pairs and inverse masses.
pub fn predict(cloud: &PointCloud, params: &LapNetParams, k: usize) -> Result<Prediction> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "prediction needs at least two points".into(),
        ));
    }
    let pos = cloud.positions();
    let knn = build_knn(cloud, params.dims().k);
    let enc = encoder_forward(params, pos, &knn);
    let f = enc.f.view();
    let pairs = kps(cloud, k);

    let blocks: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let g = pair_inputs(pos, f, chunk);
            let gates = head_eval(params, layer::ALPHA, g.view())
                .into_iter()
                .map(sigmoid)
                .collect();
            (gates, head_eval(params, layer::PHI, g.view()))
        })
        .collect();
    let mut gates = Vec::with_capacity(pairs.len());
    let mut values = Vec::with_capacity(pairs.len());
    for (g, v) in blocks {
        gates.extend(g);
        values.extend(v);
    }
    let q = point_inputs(pos, f);
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let inv_mass_unit: Vec<f64> = starts
        .par_iter()
        .flat_map_iter(|&a| {
            let x = q.slice(s![a..(a + CHUNK).min(n), ..]);
            head_eval(params, layer::OMEGA, x).into_iter().map(sigmoid)
        })
        .collect();
    Prediction::from_parts(n, pairs, gates, values, inv_mass_unit, params.c_m)
}

/// One training shape with its neighbor index, pairs and per-pair targets.
#[derive(Debug, Clone)]
pub struct ShapeSample {
    cloud: PointCloud,
    neighbors: KnnIndex,
    pairs: Vec<PairSample>,
    target_l: Vec<f64>,
    target_w: Vec<f64>,
    target_minv: Vec<f64>,
}

impl ShapeSample {
    /// `encoder_k` sizes the feature neighborhoods, `pair_k` the pair set.
    pub fn new(
        cloud: PointCloud,
        gt_l: &SparseSymMatrix,
        gt_minv: &DiagMatrix,
        encoder_k: usize,
        pair_k: usize,
    ) -> Result<Self> {
        let n = cloud.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "training shapes need at least two points".into(),
            ));
        }
        if gt_l.order() != n || gt_minv.order() != n {
            return Err(Error::PatternMismatch(format!(
                "cloud has {n} points, ground truth has {} / {}",
                gt_l.order(),
                gt_minv.order()
            )));
        }
        let neighbors = build_knn(&cloud, encoder_k);
        let pairs = kps(&cloud, pair_k);
        let target_l: Vec<f64> = pairs.iter().map(|p| gt_l.get(p.i, p.j)).collect();
        let target_w = target_l
            .iter()
            .map(|v| if v.abs() > GATE_TARGET_EPS { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            cloud,
            neighbors,
            pairs,
            target_l,
            target_w,
            target_minv: gt_minv.values().to_vec(),
        })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn neighbors(&self) -> &KnnIndex {
        &self.neighbors
    }

    pub fn pairs(&self) -> &[PairSample] {
        &self.pairs
    }

    pub fn target_l(&self) -> &[f64] {
        &self.target_l
    }

    pub fn target_w(&self) -> &[f64] {
        &self.target_w
    }

    pub fn target_minv(&self) -> &[f64] {
        &self.target_minv
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

struct Forward {
    enc: EncoderCache,
    g: Array2<f64>,
    q: Array2<f64>,
    alpha: HeadCache,
    phi: HeadCache,
    omega: HeadCache,
}

fn dropout_masks(
    rng: &mut ChaCha8Rng,
    rate: f64,
    rows: usize,
    widths: [usize; 2],
) -> [Array2<f64>; 2] {
    let keep = 1.0 / (1.0 - rate);
    let mut draw = |w: usize| {
        Array2::from_shape_simple_fn((rows, w), || {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
    };
    let m1 = draw(widths[0]);
    let m2 = draw(widths[1]);
    [m1, m2]
}

fn forward(
    p: &LapNetParams,
    sample: &ShapeSample,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Forward {
    let pos = sample.cloud.positions();
    let enc = encoder_forward(p, pos, &sample.neighbors);
    let g = pair_inputs(pos, enc.f.view(), &sample.pairs);
    let q = point_inputs(pos, enc.f.view());
    let widths = p.dims().head_widths;
    let (ma, mp, mo) = match dropout {
        Some((rate, rng)) if rate > 0.0 => (
            Some(dropout_masks(rng, rate, g.nrows(), widths)),
            Some(dropout_masks(rng, rate, g.nrows(), widths)),
            Some(dropout_masks(rng, rate, q.nrows(), widths)),
        ),
        _ => (None, None, None),
    };
    let alpha = head_forward(p, layer::ALPHA, g.view(), ma);
    let phi = head_forward(p, layer::PHI, g.view(), mp);
    let omega = head_forward(p, layer::OMEGA, q.view(), mo);
    Forward {
        enc,
        g,
        q,
        alpha,
        phi,
        omega,
    }
}

/// Loss from head outputs, and optionally its gradient with respect to them.
fn output_loss(
    fw: &Forward,
    sample: &ShapeSample,
    weights: &LossWeights,
    c_m: f64,
    want_grad: bool,
) -> (LossBreakdown, Option<[Array1<f64>; 3]>) {
    let np = sample.pairs.len().max(1) as f64;
    let n = sample.len() as f64;
    let mut l_sum = 0.0;
    let mut w_sum = 0.0;
    let mut m_sum = 0.0;
    let mut da = Array1::zeros(sample.pairs.len());
    let mut dp = Array1::zeros(sample.pairs.len());
    let mut dw = Array1::zeros(sample.len());
    for k in 0..sample.pairs.len() {
        let gate = sigmoid(fw.alpha.out[k]);
        let value = fw.phi.out[k];
        let r = gate * value - sample.target_l[k];
        let s = gate - sample.target_w[k];
        l_sum += r.abs();
        w_sum += s.abs();
        if want_grad {
            let de = sign(r) / np;
            let dgate = de * value + weights.lambda_w * sign(s) / np;
            da[k] = dgate * gate * (1.0 - gate);
            dp[k] = de * gate;
        }
    }
    for i in 0..sample.len() {
        let w = sigmoid(fw.omega.out[i]);
        let r = w - sample.target_minv[i] / c_m;
        m_sum += r.abs();
        if want_grad {
            dw[i] = weights.lambda_m * sign(r) / n * w * (1.0 - w);
        }
    }
    let loss = LossBreakdown::new(
        l_sum / np,
        weights.lambda_w * w_sum / np,
        weights.lambda_m * m_sum / n,
    );
    (loss, want_grad.then_some([da, dp, dw]))
}

/// Loss of one sample without dropout.
pub fn sample_loss(params: &LapNetParams, sample: &ShapeSample, weights: &LossWeights) -> LossBreakdown {
    let fw = forward(params, sample, None);
    output_loss(&fw, sample, weights, params.c_m, false).0
}

/// Loss and exact parameter gradient of one sample without dropout.
pub fn grad(params: &LapNetParams, sample: &ShapeSample, weights: &LossWeights) -> (LossBreakdown, Gradient) {
    loss_and_grad(params, sample, weights, 0.0, 0)
}

/// Loss and gradient with dropout `rate`; masks are drawn from a generator
/// seeded with `dropout_seed`.
pub fn loss_and_grad(
    params: &LapNetParams,
    sample: &ShapeSample,
    weights: &LossWeights,
    rate: f64,
    dropout_seed: u64,
) -> (LossBreakdown, Gradient) {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let fw = forward(params, sample, Some((rate, &mut rng)));
    let (loss, douts) = output_loss(&fw, sample, weights, params.c_m, true);
    let [da, dp, dw] = douts.expect("gradient requested");
    let mut g = Gradient::zeros_like(params);

    let mut dg = head_backward(params, &mut g, layer::ALPHA, fw.g.view(), &fw.alpha, &da);
    dg += &head_backward(params, &mut g, layer::PHI, fw.g.view(), &fw.phi, &dp);
    let dq = head_backward(params, &mut g, layer::OMEGA, fw.q.view(), &fw.omega, &dw);

    let f = &fw.enc.f;
    let mut df = dq.slice(s![.., 3..]).to_owned();
    for (k, pair) in sample.pairs.iter().enumerate() {
        let dgf = dg.slice(s![k, 3..]);
        let (fi, fj) = (f.row(pair.i), f.row(pair.j));
        Zip::from(df.row_mut(pair.i))
            .and(&dgf)
            .and(&fj)
            .for_each(|d, &a, &b| *d += a * b);
        Zip::from(df.row_mut(pair.j))
            .and(&dgf)
            .and(&fi)
            .for_each(|d, &a, &b| *d += a * b);
    }
    encoder_backward(params, &mut g, &fw.enc, &sample.neighbors, df);
    (loss, g)
}
