//! Small dense helpers for the reduced QP systems.

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub struct Dense {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Principal submatrix on `idx`.
    pub fn gather(&self, idx: &[usize]) -> Dense {
        let k = idx.len();
        let mut data = Vec::with_capacity(k * k);
        for &i in idx {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Dense { n: k, data }
    }
}

/// In-place lower Cholesky factor of `a + shift I`. Returns `None` on a
/// non-positive pivot.
pub fn cholesky(mut a: Dense, shift: f64) -> Option<Dense> {
    let n = a.n;
    for i in 0..n {
        a.data[i * n + i] += shift;
    }
    for j in 0..n {
        let mut d = a.data[j * n + j];
        for k in 0..j {
            let l = a.data[j * n + k];
            d -= l * l;
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a.data[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a.data[i * n + j];
            let (ri, rj) = (i * n, j * n);
            for k in 0..j {
                s -= a.data[ri + k] * a.data[rj + k];
            }
            a.data[i * n + j] = s / d;
        }
    }
    Some(a)
}

/// Solves `L L^T x = b` for a factor from [`cholesky`].
pub fn cholesky_solve(l: &Dense, b: &[f64]) -> Vec<f64> {
    let n = l.n;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l.data[i * n + k] * y[k];
        }
        y[i] = s / l.data[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.data[k * n + i] * y[k];
        }
        y[i] = s / l.data[i * n + i];
    }
    y
}
