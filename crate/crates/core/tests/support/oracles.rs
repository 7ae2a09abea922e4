//! Independent reference implementations used by the tests: exhaustive
//! active-set enumeration for the weight QP, a hat-gradient FEM assembly,
//! brute-force geometry, and a separate forward pass of the Laplacian network
//! for finite-difference gradient checks.
#![allow(dead_code)]

use lapdeform_core::geom::{PointCloud, TetMesh, Vec3};
use lapdeform_core::lapnet::{layer, LapNetParams, LayerSpec, LossWeights, ShapeSample};
use lapdeform_core::{HandleSet, SparseSymMatrix, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};

// ---------------------------------------------------------------------------
// FEM

/// Dense stiffness-based Laplacian from per-tet hat gradients, summed in a
/// dense matrix.
pub fn dense_fem_laplacian(mesh: &TetMesh) -> DMatrix<f64> {
    let n = mesh.num_vertices();
    let v = mesh.vertices();
    let mut l = DMatrix::zeros(n, n);
    for t in mesh.tets() {
        let p: Vec<nalgebra::Vector3<f64>> =
            t.iter().map(|&i| nalgebra::Vector3::from(v[i])).collect();
        let e = nalgebra::Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        let vol = e.determinant() / 6.0;
        // rows of inverse(E) are gradients of the barycentric coordinates 1..3
        let inv = e.try_inverse().expect("non-degenerate tet");
        let mut g = vec![nalgebra::Vector3::zeros(); 4];
        for a in 0..3 {
            g[a + 1] = inv.row(a).transpose();
        }
        g[0] = -(g[1] + g[2] + g[3]);
        for a in 0..4 {
            for b in 0..4 {
                l[(t[a], t[b])] -= vol.abs() * g[a].dot(&g[b]);
            }
        }
    }
    l
}

pub fn to_dense(m: &SparseSymMatrix) -> DMatrix<f64> {
    let n = m.order();
    let mut d = DMatrix::zeros(n, n);
    for &(i, j, v) in m.entries() {
        d[(i, j)] = v;
        d[(j, i)] = v;
    }
    d
}

// ---------------------------------------------------------------------------
// Weight QP

/// Solves every per-handle box QP by enumerating which free variables sit
/// at 0, at 1 or strictly inside, in order of increasing active-set size,
/// and returning the first KKT point. Rows are then divided by their sums.
pub fn bbw_exhaustive(a: &SparseSymMatrix, handles: &HandleSet, tol: f64) -> WeightMatrix {
    let n = a.order();
    let m = handles.len();
    let ad = to_dense(a);
    let owner = handles.owners(n);
    let free: Vec<usize> = (0..n).filter(|&i| owner[i].is_none()).collect();
    let mut w = WeightMatrix::zeros(n, m);
    for k in 0..m {
        let mut x = DVector::zeros(n);
        for i in 0..n {
            if owner[i] == Some(k) {
                x[i] = 1.0;
            }
        }
        let sol = enumerate_box_qp(&ad, &x, &free, tol)
            .unwrap_or_else(|| panic!("no KKT point found for handle {k}"));
        for i in 0..n {
            w.set(i, k, sol[i]);
        }
    }
    for i in 0..n {
        let s: f64 = w.row(i).iter().sum();
        for k in 0..m {
            w.set(i, k, w.get(i, k) / s);
        }
    }
    w
}

fn enumerate_box_qp(
    a: &DMatrix<f64>,
    fixed: &DVector<f64>,
    free: &[usize],
    tol: f64,
) -> Option<DVector<f64>> {
    let nf = free.len();
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).sum::<f64>() / a.nrows() as f64;
    for active in 0..=nf {
        let mut found = None;
        for_each_subset(nf, active, &mut |subset: &[usize]| {
            for bits in 0..(1u64 << active) {
                let mut x = fixed.clone();
                let mut inner = Vec::with_capacity(nf - active);
                let mut s = 0;
                for (fi, &v) in free.iter().enumerate() {
                    if s < subset.len() && subset[s] == fi {
                        x[v] = if bits >> s & 1 == 1 { 1.0 } else { 0.0 };
                        s += 1;
                    } else {
                        inner.push(v);
                    }
                }
                if !inner.is_empty() {
                    let k = inner.len();
                    let aff = DMatrix::from_fn(k, k, |r, c| a[(inner[r], inner[c])]);
                    let mut rhs = DVector::zeros(k);
                    for r in 0..k {
                        let mut sum = 0.0;
                        for c in 0..a.ncols() {
                            if !inner.contains(&c) {
                                sum += a[(inner[r], c)] * x[c];
                            }
                        }
                        rhs[r] = -sum;
                    }
                    let Some(y) = aff.lu().solve(&rhs) else { continue };
                    if y.iter().any(|&v| v < -tol || v > 1.0 + tol) {
                        continue;
                    }
                    for (r, &v) in inner.iter().enumerate() {
                        x[v] = y[r];
                    }
                }
                let g = a * &x;
                let ok = free.iter().all(|&v| {
                    let gv = g[v] / scale;
                    if inner.contains(&v) {
                        true
                    } else if x[v] == 0.0 {
                        gv >= -tol
                    } else {
                        gv <= tol
                    }
                });
                if ok {
                    found = Some(x);
                    return true;
                }
            }
            false
        });
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Calls `f` on every `r`-subset of `0..n` in lexicographic order until it
/// returns true.
fn for_each_subset(n: usize, r: usize, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    fn rec(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if cur.len() == r {
            return f(cur);
        }
        for i in start..n {
            if n - i < r - cur.len() {
                break;
            }
            cur.push(i);
            if rec(i + 1, n, r, cur, f) {
                return true;
            }
            cur.pop();
        }
        false
    }
    rec(0, n, r, &mut Vec::with_capacity(r), f)
}

// ---------------------------------------------------------------------------
// Geometry

pub fn brute_knn(points: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|i| {
            let mut c: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..3).map(|a| (points[i][a] - points[j][a]).powi(2)).sum();
                    (d, j)
                })
                .collect();
            c.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            c.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

pub fn directed_hausdorff(p: &PointCloud, q: &PointCloud) -> f64 {
    p.positions()
        .iter()
        .map(|a| {
            q.positions()
                .iter()
                .map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Laplacian network

fn lrelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn weight<'a>(theta: &'a [f64], s: &LayerSpec) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((s.fan_out, s.fan_in), &theta[s.offset..s.offset + s.fan_in * s.fan_out]).unwrap()
}

fn bias<'a>(theta: &'a [f64], s: &LayerSpec) -> &'a [f64] {
    let w = s.fan_in * s.fan_out;
    &theta[s.offset + w..s.offset + w + s.fan_out]
}

/// `x W^T + b`, rows are samples.
fn affine(theta: &[f64], s: &LayerSpec, x: &Array2<f64>) -> Array2<f64> {
    let mut z = x.dot(&weight(theta, s).t());
    let b = bias(theta, s);
    for mut row in z.rows_mut() {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    z
}

/// `sigmoid(a + d) - sigmoid(a)` without cancellation.
fn sigmoid_diff(a: f64, d: f64) -> f64 {
    -(-d).exp_m1() * sigmoid(a + d) * sigmoid(-a)
}

/// `|r + d| - |r|`, flagging a sign change.
fn abs_diff(r: f64, d: f64, kink: &mut bool) -> f64 {
    let s = r + d;
    if r > 0.0 && s > 0.0 {
        d
    } else if r < 0.0 && s < 0.0 {
        -d
    } else {
        *kink = true;
        s.abs() - r.abs()
    }
}

/// `lrelu(z + d) - lrelu(z)`, flagging a sign change.
fn act_diff(z: f64, d: f64, slope: f64, kink: &mut bool) -> f64 {
    let s = z + d;
    if (z > 0.0) == (s > 0.0) {
        if z > 0.0 {
            d
        } else {
            slope * d
        }
    } else {
        *kink = true;
        lrelu(s, slope) - lrelu(z, slope)
    }
}

fn act_diff_mat(z: &Array2<f64>, d: &Array2<f64>, slope: f64, kink: &mut bool) -> Array2<f64> {
    let mut out = d.clone();
    for (o, &zz) in out.iter_mut().zip(z.iter()) {
        *o = act_diff(zz, *o, slope, kink);
    }
    out
}

struct HeadTrace {
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    out: Vec<f64>,
}

/// Forward pass of the network written out layer by layer, and central
/// differences of the loss evaluated by propagating exact output
/// differences `f(theta + h e_i) - f(theta)` through every layer. This is
/// the same quantity as `(L(theta + h) - L(theta - h)) / 2h` but avoids
/// subtracting two nearly equal loss values.
pub struct NetOracle<'a> {
    theta: &'a [f64],
    layers: &'a [LayerSpec],
    sample: &'a ShapeSample,
    weights: LossWeights,
    c_m: f64,
    slope: f64,
    x0: Array2<f64>,
    ez1: Array2<f64>,
    eh1: Array2<f64>,
    ez2: Array2<f64>,
    c: Array2<f64>,
    ez3: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    q: Array2<f64>,
    heads: [HeadTrace; 3],
}

/// Outcome of a central difference for one coordinate.
#[derive(Clone, Copy, Debug)]
pub struct FdEntry {
    pub value: f64,
    /// Step that was finally used.
    pub step: f64,
    /// True if every tried step crossed a kink of an activation or of the
    /// absolute value in the loss.
    pub kinked: bool,
}

const HEAD_BASES: [usize; 3] = [layer::ALPHA, layer::PHI, layer::OMEGA];

impl<'a> NetOracle<'a> {
    pub fn new(params: &'a LapNetParams, sample: &'a ShapeSample, weights: LossWeights, slope: f64) -> Self {
        let theta = params.as_slice();
        let layers = params.layers();
        let pos = sample.cloud().positions();
        let n = pos.len();
        let x0 = Array2::from_shape_fn((n, 3), |(i, a)| pos[i][a]);
        let ez1 = affine(theta, &layers[layer::ENC_IN], &x0);
        let eh1 = ez1.mapv(|v| lrelu(v, slope));
        let ez2 = affine(theta, &layers[layer::ENC_HIDDEN], &eh1);
        let h2 = ez2.mapv(|v| lrelu(v, slope));
        let c = Self::concat_mean(sample, &h2);
        let ez3 = affine(theta, &layers[layer::ENC_AGG], &c);
        let f = ez3.mapv(|v| lrelu(v, slope));
        let g = Self::pair_rows(sample, &f);
        let q = Self::point_rows(sample, &f);
        let trace = |base: usize, x: &Array2<f64>| {
            let z1 = affine(theta, &layers[base], x);
            let a1 = z1.mapv(|v| lrelu(v, slope));
            let z2 = affine(theta, &layers[base + 1], &a1);
            let a2 = z2.mapv(|v| lrelu(v, slope));
            let out = affine(theta, &layers[base + 2], &a2).column(0).to_vec();
            HeadTrace { z1, a1, z2, a2, out }
        };
        let heads = [trace(layer::ALPHA, &g), trace(layer::PHI, &g), trace(layer::OMEGA, &q)];
        Self {
            theta,
            layers,
            sample,
            weights,
            c_m: params.c_m,
            slope,
            x0,
            ez1,
            eh1,
            ez2,
            c,
            ez3,
            f,
            g,
            q,
            heads,
        }
    }

    fn concat_mean(sample: &ShapeSample, h: &Array2<f64>) -> Array2<f64> {
        let (n, e) = h.dim();
        let mut c = Array2::zeros((n, 2 * e));
        for i in 0..n {
            let nb = sample.neighbors().neighbors(i);
            for a in 0..e {
                c[[i, a]] = h[[i, a]];
                let s: f64 = nb.iter().map(|&j| h[[j, a]]).sum();
                c[[i, e + a]] = s / nb.len() as f64;
            }
        }
        c
    }

    fn pair_rows(sample: &ShapeSample, f: &Array2<f64>) -> Array2<f64> {
        let pos = sample.cloud().positions();
        let pairs = sample.pairs();
        Array2::from_shape_fn((pairs.len(), 3 + f.ncols()), |(r, c)| {
            let (i, j) = (pairs[r].i, pairs[r].j);
            if c < 3 {
                (pos[i][c] - pos[j][c]).abs()
            } else {
                f[[i, c - 3]] * f[[j, c - 3]]
            }
        })
    }

    fn point_rows(sample: &ShapeSample, f: &Array2<f64>) -> Array2<f64> {
        let pos = sample.cloud().positions();
        Array2::from_shape_fn((pos.len(), 3 + f.ncols()), |(i, c)| if c < 3 { pos[i][c] } else { f[[i, c - 3]] })
    }

    /// Raw head outputs: gate logits, values, inverse-mass logits.
    pub fn outputs(&self) -> [&[f64]; 3] {
        [&self.heads[0].out, &self.heads[1].out, &self.heads[2].out]
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.f
    }

    pub fn loss(&self) -> f64 {
        let [a, p, o] = self.outputs();
        let np = a.len() as f64;
        let mut l = 0.0;
        let mut w = 0.0;
        for k in 0..a.len() {
            let g = sigmoid(a[k]);
            l += (g * p[k] - self.sample.target_l()[k]).abs();
            w += (g - self.sample.target_w()[k]).abs();
        }
        let m: f64 = o
            .iter()
            .zip(self.sample.target_minv())
            .map(|(&v, &t)| (sigmoid(v) - t / self.c_m).abs())
            .sum();
        l / np + self.weights.lambda_w * w / np + self.weights.lambda_m * m / o.len() as f64
    }

    /// Loss change for the given output changes.
    fn loss_diff(&self, d: [Option<&[f64]>; 3], kink: &mut bool) -> f64 {
        let [a, p, o] = self.outputs();
        let zero_p = vec![0.0; a.len()];
        let zero_o = vec![0.0; o.len()];
        let da = d[0].unwrap_or(&zero_p);
        let dp = d[1].unwrap_or(&zero_p);
        let dom = d[2].unwrap_or(&zero_o);
        let np = a.len() as f64;
        let mut l = 0.0;
        let mut w = 0.0;
        for k in 0..a.len() {
            let g = sigmoid(a[k]);
            let dg = sigmoid_diff(a[k], da[k]);
            let r = g * p[k] - self.sample.target_l()[k];
            let dr = dg * p[k] + g * dp[k] + dg * dp[k];
            l += abs_diff(r, dr, kink);
            w += abs_diff(g - self.sample.target_w()[k], dg, kink);
        }
        let mut m = 0.0;
        for i in 0..o.len() {
            let r = sigmoid(o[i]) - self.sample.target_minv()[i] / self.c_m;
            m += abs_diff(r, sigmoid_diff(o[i], dom[i]), kink);
        }
        l / np + self.weights.lambda_w * w / np + self.weights.lambda_m * m / o.len() as f64
    }

    /// Change of `x W^T + b` of layer `l` when its input moves by `dx` and
    /// parameter `idx` by `delta` (if it belongs to this layer).
    fn affine_diff(&self, l: usize, x: &Array2<f64>, dx: Option<&Array2<f64>>, idx: usize, delta: f64) -> Array2<f64> {
        let s = &self.layers[l];
        let mut dz = match dx {
            Some(dx) => dx.dot(&weight(self.theta, s).t()),
            None => Array2::zeros((x.nrows(), s.fan_out)),
        };
        if (s.offset..s.offset + s.len()).contains(&idx) {
            let local = idx - s.offset;
            let wl = s.fan_in * s.fan_out;
            if local < wl {
                let (u, v) = (local / s.fan_in, local % s.fan_in);
                for r in 0..x.nrows() {
                    let xv = x[[r, v]] + dx.map_or(0.0, |d| d[[r, v]]);
                    dz[[r, u]] += delta * xv;
                }
            } else {
                let u = local - wl;
                for r in 0..x.nrows() {
                    dz[[r, u]] += delta;
                }
            }
        }
        dz
    }

    fn head_diff_dense(&self, hi: usize, x: &Array2<f64>, dx: Option<&Array2<f64>>, idx: usize, delta: f64, kink: &mut bool) -> Vec<f64> {
        let base = HEAD_BASES[hi];
        let t = &self.heads[hi];
        let dz1 = self.affine_diff(base, x, dx, idx, delta);
        let da1 = act_diff_mat(&t.z1, &dz1, self.slope, kink);
        let dz2 = self.affine_diff(base + 1, &t.a1, Some(&da1), idx, delta);
        let da2 = act_diff_mat(&t.z2, &dz2, self.slope, kink);
        self.affine_diff(base + 2, &t.a2, Some(&da2), idx, delta).column(0).to_vec()
    }

    fn encoder_coordinate(&self, idx: usize, delta: f64, kink: &mut bool) -> f64 {
        let dz1 = self.affine_diff(layer::ENC_IN, &self.x0, None, idx, delta);
        let dh1 = act_diff_mat(&self.ez1, &dz1, self.slope, kink);
        let dz2 = self.affine_diff(layer::ENC_HIDDEN, &self.eh1, Some(&dh1), idx, delta);
        let dh2 = act_diff_mat(&self.ez2, &dz2, self.slope, kink);
        let dc = Self::concat_mean(self.sample, &dh2);
        let dz3 = self.affine_diff(layer::ENC_AGG, &self.c, Some(&dc), idx, delta);
        let df = act_diff_mat(&self.ez3, &dz3, self.slope, kink);
        let pairs = self.sample.pairs();
        let d = df.ncols();
        let dg = Array2::from_shape_fn((pairs.len(), 3 + d), |(r, c)| {
            if c < 3 {
                return 0.0;
            }
            let (i, j, a) = (pairs[r].i, pairs[r].j, c - 3);
            let (fi, fj, dfi, dfj) = (self.f[[i, a]], self.f[[j, a]], df[[i, a]], df[[j, a]]);
            dfi * fj + fi * dfj + dfi * dfj
        });
        let dq = Array2::from_shape_fn((df.nrows(), 3 + d), |(i, c)| if c < 3 { 0.0 } else { df[[i, c - 3]] });
        let outs = [
            self.head_diff_dense(0, &self.g, Some(&dg), idx, delta, kink),
            self.head_diff_dense(1, &self.g, Some(&dg), idx, delta, kink),
            self.head_diff_dense(2, &self.q, Some(&dq), idx, delta, kink),
        ];
        self.loss_diff([Some(&outs[0]), Some(&outs[1]), Some(&outs[2])], kink)
    }

    /// Head coordinate: only one hidden unit (or the output) of one head
    /// moves, so the change is propagated unit by unit.
    fn head_coordinate(&self, hi: usize, idx: usize, delta: f64, kink: &mut bool) -> f64 {
        let base = HEAD_BASES[hi];
        let t = &self.heads[hi];
        let x = if hi == 2 { &self.q } else { &self.g };
        let (l1, l2, l3) = (&self.layers[base], &self.layers[base + 1], &self.layers[base + 2]);
        let w2 = weight(self.theta, l2);
        let w3 = weight(self.theta, l3);
        let rows = x.nrows();
        let split = |s: &LayerSpec| {
            let local = idx - s.offset;
            let wl = s.fan_in * s.fan_out;
            if local < wl {
                (local / s.fan_in, Some(local % s.fan_in))
            } else {
                (local - wl, None)
            }
        };
        let mut dout = vec![0.0; rows];
        if idx >= l3.offset {
            let (_, v) = split(l3);
            for r in 0..rows {
                dout[r] = delta * v.map_or(1.0, |v| t.a2[[r, v]]);
            }
        } else if idx >= l2.offset {
            let (u, v) = split(l2);
            for r in 0..rows {
                let dz = delta * v.map_or(1.0, |v| t.a1[[r, v]]);
                dout[r] = w3[[0, u]] * act_diff(t.z2[[r, u]], dz, self.slope, kink);
            }
        } else {
            let (u, v) = split(l1);
            for r in 0..rows {
                let dz = delta * v.map_or(1.0, |v| x[[r, v]]);
                let da = act_diff(t.z1[[r, u]], dz, self.slope, kink);
                let mut acc = 0.0;
                for w in 0..l2.fan_out {
                    let da2 = act_diff(t.z2[[r, w]], w2[[w, u]] * da, self.slope, kink);
                    acc += w3[[0, w]] * da2;
                }
                dout[r] = acc;
            }
        }
        let mut d: [Option<&[f64]>; 3] = [None, None, None];
        d[hi] = Some(&dout);
        self.loss_diff(d, kink)
    }

    fn coordinate_diff(&self, idx: usize, delta: f64, kink: &mut bool) -> f64 {
        let enc_end = self.layers[layer::ENC_AGG].offset + self.layers[layer::ENC_AGG].len();
        if idx < enc_end {
            return self.encoder_coordinate(idx, delta, kink);
        }
        let hi = HEAD_BASES
            .iter()
            .rposition(|&b| idx >= self.layers[b].offset)
            .expect("head parameter");
        self.head_coordinate(hi, idx, delta, kink)
    }

    /// Central difference for every parameter with step `h`. A step that
    /// crosses a kink is retried with a step 16x smaller, up to three times.
    pub fn fd_gradient(&self, h: f64) -> Vec<FdEntry> {
        (0..self.theta.len())
            .map(|idx| {
                let mut step = h;
                loop {
                    let mut kink = false;
                    let up = self.coordinate_diff(idx, step, &mut kink);
                    let down = self.coordinate_diff(idx, -step, &mut kink);
                    let value = (up - down) / (2.0 * step);
                    if !kink || step < h / 1000.0 {
                        return FdEntry { value, step, kinked: kink };
                    }
                    step /= 16.0;
                }
            })
            .collect()
    }
}

/// Single-row forward of the gate and value heads on one pair feature.
pub fn pair_forward(params: &LapNetParams, g: &[f64], slope: f64) -> (f64, f64) {
    let theta = params.as_slice();
    let layers = params.layers();
    let run = |base: usize| {
        let mut x = g.to_vec();
        for l in base..base + 3 {
            let s = &layers[l];
            let mut y = vec![0.0; s.fan_out];
            for (u, yu) in y.iter_mut().enumerate() {
                let mut acc = theta[s.offset + s.fan_in * s.fan_out + u];
                for v in 0..s.fan_in {
                    acc += theta[s.offset + u * s.fan_in + v] * x[v];
                }
                *yu = if l < base + 2 { lrelu(acc, slope) } else { acc };
            }
            x = y;
        }
        x[0]
    };
    (sigmoid(run(layer::ALPHA)), run(layer::PHI))
}
