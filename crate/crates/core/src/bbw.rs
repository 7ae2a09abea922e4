//! Bounded biharmonic weights.
//!
//! Each handle gets an independent box-constrained QP
//!
//! ```text
//! minimize    1/2 w^T A w
//! subject to  w_i = 1 on the handle, w_i = 0 on every other handle,
//!             0 <= w <= 1
//! ```
//!
//! solved by a primal active-set method on the bound constraints. Rows are
//! normalized to sum to one afterwards.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, Dense};
use crate::sparse::SparseSymMatrix;

/// Control handles: pairwise-disjoint, non-empty vertex sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandleSet {
    handles: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct HandleJson {
    vertices: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct HandleSetJson {
    handles: Vec<HandleJson>,
}

impl HandleSet {
    pub fn new(handles: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if handles.is_empty() {
            return Err(Error::InvalidHandles("at least one handle is required".into()));
        }
        let mut owner = vec![usize::MAX; n];
        for (k, h) in handles.iter().enumerate() {
            if h.is_empty() {
                return Err(Error::InvalidHandles(format!("handle {k} is empty")));
            }
            for &v in h {
                if v >= n {
                    return Err(Error::InvalidHandles(format!(
                        "handle {k} references vertex {v} but n = {n}"
                    )));
                }
                if owner[v] != usize::MAX {
                    return Err(Error::InvalidHandles(format!(
                        "vertex {v} belongs to handles {} and {k}",
                        owner[v]
                    )));
                }
                owner[v] = k;
            }
        }
        Ok(Self { handles })
    }

    /// One singleton handle per listed vertex.
    pub fn points(vertices: &[usize], n: usize) -> Result<Self> {
        Self::new(vertices.iter().map(|&v| vec![v]).collect(), n)
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    pub fn handle(&self, k: usize) -> &[usize] {
        &self.handles[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.handles.iter().map(Vec::as_slice)
    }

    /// `owner[v] = Some(k)` when vertex `v` belongs to handle `k`.
    pub fn owners(&self, n: usize) -> Vec<Option<usize>> {
        let mut owner = vec![None; n];
        for (k, h) in self.handles.iter().enumerate() {
            for &v in h {
                owner[v] = Some(k);
            }
        }
        owner
    }

    pub fn max_index(&self) -> usize {
        self.handles.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&HandleSetJson {
            handles: self
                .handles
                .iter()
                .map(|h| HandleJson { vertices: h.clone() })
                .collect(),
        })
        .expect("handle json")
    }

    /// `{"handles":[{"vertices":[...]}, ...]}` validated against `n` vertices.
    pub fn from_json(text: &str, n: usize) -> Result<Self> {
        let raw: HandleSetJson = serde_json::from_str(text)?;
        Self::new(raw.handles.into_iter().map(|h| h.vertices).collect(), n)
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            handles: order.iter().map(|&k| self.handles[k].clone()).collect(),
        }
    }
}

/// `n x m` blending weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_vec(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * m {
            return Err(Error::DimensionMismatch {
                expected: n * m,
                got: data.len(),
            });
        }
        Ok(Self { n, m, data })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            data: vec![0.0; n * m],
        }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.m + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, v: f64) {
        self.data[i * self.m + k] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, k)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Divides each row by its sum; rows summing to zero are left alone.
    pub fn normalize_rows(&mut self) {
        for i in 0..self.n {
            let s: f64 = self.row(i).iter().sum();
            if s > 0.0 {
                for v in &mut self.data[i * self.m..(i + 1) * self.m] {
                    *v /= s;
                }
            }
        }
    }

    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let mut out = Self::zeros(self.n, order.len());
        for i in 0..self.n {
            for (new, &old) in order.iter().enumerate() {
                out.set(i, new, self.get(i, old));
            }
        }
        out
    }

    /// CSV with header `vertex,h0,...,h{m-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.n * (self.m * 24 + 8));
        out.push_str("vertex");
        for k in 0..self.m {
            let _ = write!(out, ",h{k}");
        }
        out.push('\n');
        for i in 0..self.n {
            let _ = write!(out, "{i}");
            for v in self.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty weights file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"vertex")
            || cols[1..].iter().enumerate().any(|(k, c)| *c != format!("h{k}"))
        {
            return Err(Error::parse(1, "expected header 'vertex,h0,...'"));
        }
        let m = cols.len() - 1;
        let mut data = Vec::new();
        let mut n = 0;
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split(',').map(str::trim).collect();
            if toks.len() != m + 1 {
                return Err(Error::parse(ln + 1, format!("expected {} fields", m + 1)));
            }
            if toks[0].parse::<usize>().ok() != Some(n) {
                return Err(Error::parse(ln + 1, format!("expected vertex id {n}")));
            }
            for t in &toks[1..] {
                data.push(
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(ln + 1, format!("bad weight '{t}'")))?,
                );
            }
            n += 1;
        }
        Self::from_vec(n, m, data)
    }

    /// `LBSW`, u32 n, u32 m, then `n * m` little-endian f64 row-major.
    pub fn to_lbsw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.data.len());
        out.extend_from_slice(b"LBSW");
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_lbsw(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedFile);
        }
        if &bytes[..4] != b"LBSW" {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(Error::TruncatedFile);
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != 8 * n * m {
            return Err(Error::TruncatedFile);
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_vec(n, m, data)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbwOptions {
    /// KKT tolerance, relative to the mean diagonal of `A`.
    pub tol: f64,
    /// Iteration cap per handle; `None` means `100 n`.
    pub max_iter: Option<usize>,
    /// Keep the objective after every iteration in the report.
    pub record_objective: bool,
}

impl Default for BbwOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandleReport {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub active_set_size: usize,
    pub wall_time_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpReport {
    pub handles: Vec<HandleReport>,
    /// Smallest row sum before normalization.
    pub min_row_sum_pre_norm: f64,
    /// Rows that fell back to the nearest handle's indicator.
    pub fallback_rows: Vec<usize>,
}

impl QpReport {
    pub fn total_iterations(&self) -> usize {
        self.handles.iter().map(|h| h.iterations).sum()
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.handles.iter().map(|h| h.kkt_residual).fold(0.0, f64::max)
    }
}

/// Fails with `Disconnected` when some vertex cannot reach any handle
/// through the sparsity graph of `A`.
fn check_connected(rows: &[Vec<(usize, f64)>], handles: &HandleSet) -> Result<()> {
    let n = rows.len();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for h in handles.iter() {
        for &v in h {
            seen[v] = true;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &(u, _) in &rows[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(vertex) => Err(Error::Disconnected { vertex }),
        None => Ok(()),
    }
}

/// Handle index closest to each vertex in graph hops (multi-source BFS
/// seeded in handle order).
fn nearest_handle(rows: &[Vec<(usize, f64)>], handles: &HandleSet) -> Vec<usize> {
    let mut near = vec![usize::MAX; rows.len()];
    let mut queue = VecDeque::new();
    for (k, h) in handles.iter().enumerate() {
        for &v in h {
            near[v] = k;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &(u, _) in &rows[v] {
            if near[u] == usize::MAX {
                near[u] = near[v];
                queue.push_back(u);
            }
        }
    }
    near
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Bound {
    Free,
    Lower,
    Upper,
}

struct HandleProblem<'a> {
    aff: &'a Dense,
    /// Right-hand side `-A_fc w_c`.
    rhs: Vec<f64>,
    reg: f64,
    scale: f64,
}

struct HandleSolution {
    x: Vec<f64>,
    report: HandleReport,
}

impl HandleProblem<'_> {
    fn objective(&self, x: &[f64]) -> f64 {
        // 1/2 x^T A_ff x - rhs^T x, the constant w_c^T A_cc w_c dropped.
        let n = x.len();
        let mut q = 0.0;
        for i in 0..n {
            let row = &self.aff.data[i * n..(i + 1) * n];
            let ax: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            q += x[i] * (0.5 * ax - self.rhs[i]);
        }
        q
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let row = &self.aff.data[i * n..(i + 1) * n];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.rhs[i]
            })
            .collect()
    }

    /// Minimizer over the free variables with the bound ones held fixed.
    fn subspace_minimizer(&self, x: &[f64], status: &[Bound], handle: usize) -> Result<Vec<f64>> {
        let n = x.len();
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == Bound::Free).collect();
        if free.is_empty() {
            return Ok(Vec::new());
        }
        let b: Vec<f64> = free
            .iter()
            .map(|&i| {
                let row = &self.aff.data[i * n..(i + 1) * n];
                let fixed: f64 = (0..n)
                    .filter(|&j| status[j] != Bound::Free)
                    .map(|j| row[j] * x[j])
                    .sum();
                self.rhs[i] - fixed
            })
            .collect();
        let l = cholesky(self.aff.gather(&free), self.reg).ok_or(Error::NotPsd { handle })?;
        Ok(cholesky_solve(&l, &b))
    }

    fn solve(&self, handle: usize, opts: &BbwOptions, max_iter: usize) -> Result<HandleSolution> {
        let start = Instant::now();
        let n = self.rhs.len();
        let tol = opts.tol * self.scale;
        // Warm start: clip the unconstrained minimizer into the box.
        let mut status = vec![Bound::Free; n];
        let mut x = self.subspace_minimizer(&vec![0.0; n], &status, handle)?;
        for i in 0..n {
            if x[i] <= 0.0 {
                x[i] = 0.0;
                status[i] = Bound::Lower;
            } else if x[i] >= 1.0 {
                x[i] = 1.0;
                status[i] = Bound::Upper;
            }
        }
        let mut trace = opts.record_objective.then(|| vec![self.objective(&x)]);
        let mut iterations = 0;
        loop {
            let free: Vec<usize> = (0..n).filter(|&i| status[i] == Bound::Free).collect();
            let y = self.subspace_minimizer(&x, &status, handle)?;
            // Ratio test toward the subspace minimizer.
            let mut step = 1.0;
            let mut blocking: Option<(usize, Bound)> = None;
            for (&i, &yi) in free.iter().zip(&y) {
                let (ratio, bound) = if yi < 0.0 {
                    (x[i] / (x[i] - yi), Bound::Lower)
                } else if yi > 1.0 {
                    ((1.0 - x[i]) / (yi - x[i]), Bound::Upper)
                } else {
                    continue;
                };
                if ratio < step {
                    step = ratio;
                    blocking = Some((i, bound));
                }
            }
            for (&i, &yi) in free.iter().zip(&y) {
                x[i] += step * (yi - x[i]);
            }
            if let Some((i, bound)) = blocking {
                x[i] = if bound == Bound::Lower { 0.0 } else { 1.0 };
                status[i] = bound;
                iterations += 1;
                if let Some(t) = trace.as_mut() {
                    t.push(self.objective(&x));
                }
                if iterations >= max_iter {
                    return Err(Error::MaxIterations { handle, iterations });
                }
                continue;
            }

            let g = self.gradient(&x);
            let mut stationarity = 0.0f64;
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                let multiplier = match status[i] {
                    Bound::Free => {
                        stationarity = stationarity.max(g[i].abs());
                        continue;
                    }
                    Bound::Lower => g[i],
                    Bound::Upper => -g[i],
                };
                if multiplier < worst.map_or(0.0, |w| w.1) {
                    worst = Some((i, multiplier));
                }
            }
            let dual = worst.map_or(0.0, |w| -w.1);
            match worst {
                Some((i, _)) if dual > tol => {
                    status[i] = Bound::Free;
                    iterations += 1;
                    if let Some(t) = trace.as_mut() {
                        t.push(self.objective(&x));
                    }
                    if iterations >= max_iter {
                        return Err(Error::MaxIterations { handle, iterations });
                    }
                }
                _ => {
                    let residual = stationarity.max(dual) / self.scale;
                    let active = status.iter().filter(|s| **s != Bound::Free).count();
                    return Ok(HandleSolution {
                        x,
                        report: HandleReport {
                            iterations,
                            kkt_residual: residual,
                            active_set_size: active,
                            wall_time_secs: start.elapsed().as_secs_f64(),
                            objective_trace: trace,
                        },
                    });
                }
            }
        }
    }
}

/// Bounded biharmonic weights for `handles` under the energy `a`.
pub fn solve_bbw(
    a: &SparseSymMatrix,
    handles: &HandleSet,
    opts: &BbwOptions,
) -> Result<(WeightMatrix, QpReport)> {
    let n = a.order();
    let m = handles.len();
    if handles.max_index() >= n {
        return Err(Error::InvalidHandles(format!(
            "handle vertex {} out of range for order {n}",
            handles.max_index()
        )));
    }
    let rows = a.rows();
    check_connected(&rows, handles)?;

    let owner = handles.owners(n);
    let free: Vec<usize> = (0..n).filter(|&v| owner[v].is_none()).collect();
    let mut slot = vec![usize::MAX; n];
    for (s, &v) in free.iter().enumerate() {
        slot[v] = s;
    }
    let nf = free.len();
    let mut aff = Dense::zeros(nf);
    // coupling[s] = list of (handle, A_{v,c}) summed per handle.
    let mut coupling: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nf];
    for (s, &v) in free.iter().enumerate() {
        for &(u, val) in &rows[v] {
            match owner[u] {
                None => aff.data[s * nf + slot[u]] = val,
                Some(k) => match coupling[s].iter_mut().find(|(h, _)| *h == k) {
                    Some(entry) => entry.1 += val,
                    None => coupling[s].push((k, val)),
                },
            }
        }
    }
    let mean_diag = a.trace() / n as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let reg = 1e-10 * mean_diag.max(0.0);
    let max_iter = opts.max_iter.unwrap_or(100 * n.max(1));

    let solved: Vec<HandleSolution> = (0..m)
        .into_par_iter()
        .map(|k| {
            let rhs = coupling
                .iter()
                .map(|c| -c.iter().filter(|(h, _)| *h == k).map(|e| e.1).sum::<f64>())
                .collect();
            HandleProblem {
                aff: &aff,
                rhs,
                reg,
                scale,
            }
            .solve(k, opts, max_iter)
        })
        .collect::<Result<_>>()?;

    let mut w = WeightMatrix::zeros(n, m);
    for (k, sol) in solved.iter().enumerate() {
        for (s, &v) in free.iter().enumerate() {
            w.set(v, k, sol.x[s]);
        }
        for &v in handles.handle(k) {
            w.set(v, k, 1.0);
        }
    }

    let sums = w.row_sums();
    let min_row_sum = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let mut fallback_rows = Vec::new();
    let near = if sums.iter().any(|&s| s < 1e-12) {
        nearest_handle(&rows, handles)
    } else {
        Vec::new()
    };
    for (i, &s) in sums.iter().enumerate() {
        if s < 1e-12 {
            for k in 0..m {
                w.set(i, k, if k == near[i] { 1.0 } else { 0.0 });
            }
            fallback_rows.push(i);
        }
    }
    if !fallback_rows.is_empty() {
        log::warn!("bbw: {} rows fell back to nearest-handle indicators", fallback_rows.len());
    }
    w.normalize_rows();
    Ok((
        w,
        QpReport {
            handles: solved.into_iter().map(|s| s.report).collect(),
            min_row_sum_pre_norm: min_row_sum,
            fallback_rows,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    ShapeMismatch { rows: usize, cols: usize },
    BoundViolation { vertex: usize, handle: usize, value: f64 },
    PartitionViolation { vertex: usize, sum: f64 },
    HandleViolation { vertex: usize, handle: usize, value: f64, expected: f64 },
}

/// Lists every broken weight invariant at tolerance `1e-9`.
pub fn check_weights(w: &WeightMatrix, handles: &HandleSet) -> Vec<Violation> {
    const TOL: f64 = 1e-9;
    if w.cols() != handles.len() || handles.max_index() >= w.rows() {
        return vec![Violation::ShapeMismatch {
            rows: w.rows(),
            cols: w.cols(),
        }];
    }
    let mut out = Vec::new();
    let owner = handles.owners(w.rows());
    for i in 0..w.rows() {
        for k in 0..w.cols() {
            let v = w.get(i, k);
            if !(-TOL..=1.0 + TOL).contains(&v) {
                out.push(Violation::BoundViolation {
                    vertex: i,
                    handle: k,
                    value: v,
                });
            }
            if let Some(h) = owner[i] {
                let expected = if h == k { 1.0 } else { 0.0 };
                if (v - expected).abs() > TOL {
                    out.push(Violation::HandleViolation {
                        vertex: i,
                        handle: k,
                        value: v,
                        expected,
                    });
                }
            }
        }
        let sum: f64 = w.row(i).iter().sum();
        if (sum - 1.0).abs() > TOL {
            out.push(Violation::PartitionViolation { vertex: i, sum });
        }
    }
    out
}
