//! Symmetric sparse matrices in upper-triangular coordinate form, and
//! positive diagonal matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Entries with magnitude below this are not stored.
pub const STORAGE_FLOOR: f64 = 1e-300;

/// Symmetric matrix stored as sorted `(i, j, value)` with `i <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    /// Builds from triplets in any triangle; duplicates are summed. Entries
    /// whose sum falls below [`STORAGE_FLOOR`] are dropped.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    len: n,
                });
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite entry at ({i}, {j})")));
            }
            *acc.entry((i.min(j), i.max(j))).or_insert(0.0) += v;
        }
        Ok(Self {
            n,
            entries: acc
                .into_iter()
                .filter(|(_, v)| v.abs() >= STORAGE_FLOOR)
                .map(|((i, j), v)| (i, j, v))
                .collect(),
        })
    }

    /// Builds from entries already sorted, upper-triangular and unique.
    pub(crate) fn from_sorted_upper(n: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)));
        debug_assert!(entries.iter().all(|&(i, j, _)| i <= j && j < n));
        Self {
            n,
            entries: entries
                .into_iter()
                .filter(|(_, _, v)| v.abs() >= STORAGE_FLOOR)
                .collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Stored upper-triangular entries.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        self.entries
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&key))
            .map(|k| self.entries[k].2)
            .unwrap_or(0.0)
    }

    /// Full symmetric rows as `(column, value)` lists, columns ascending.
    pub fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.n];
        for &(i, j, v) in &self.entries {
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        for r in &mut rows {
            r.sort_unstable_by_key(|&(c, _)| c);
        }
        rows
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] })
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.entries
            .iter()
            .filter(|(i, j, _)| i == j)
            .map(|e| e.2)
            .sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            if i == j {
                d[i] = v;
            }
        }
        d
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for &(i, j, v) in &self.entries {
            a[i][j] = v;
            a[j][i] = v;
        }
        a
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_sorted_upper(
            self.n,
            self.entries.iter().map(|&(i, j, v)| (i, j, c * v)).collect(),
        )
    }

    /// Conjugate permutation: new row `a` is old row `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        Self::from_triplets(
            self.n,
            self.entries.iter().map(|&(i, j, v)| (inv[i], inv[j], v)),
        )
        .expect("permutation preserves bounds")
    }

    /// `SSM n nnz` followed by `i j value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 40 + 32);
        let _ = writeln!(out, "SSM {} {}", self.n, self.entries.len());
        for &(i, j, v) in &self.entries {
            let _ = writeln!(out, "{i} {j} {v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "empty matrix file"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "SSM" {
            return Err(Error::parse(hl + 1, "expected header 'SSM n nnz'"));
        }
        let n: usize = toks[1]
            .parse()
            .map_err(|_| Error::parse(hl + 1, "bad order"))?;
        let nnz: usize = toks[2]
            .parse()
            .map_err(|_| Error::parse(hl + 1, "bad nnz"))?;
        let mut entries = Vec::with_capacity(nnz);
        for (ln, line) in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 {
                return Err(Error::parse(ln + 1, "expected 'i j value'"));
            }
            let i: usize = t[0].parse().map_err(|_| Error::parse(ln + 1, "bad row"))?;
            let j: usize = t[1].parse().map_err(|_| Error::parse(ln + 1, "bad column"))?;
            let v: f64 = t[2].parse().map_err(|_| Error::parse(ln + 1, "bad value"))?;
            if i > j || j >= n {
                return Err(Error::parse(ln + 1, format!("entry ({i}, {j}) not in upper triangle of order {n}")));
            }
            entries.push((i, j, v));
        }
        if entries.len() != nnz {
            return Err(Error::parse(hl + 1, format!("header declares {nnz} entries, found {}", entries.len())));
        }
        if !entries.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)) {
            return Err(Error::parse(hl + 1, "entries must be sorted and unique"));
        }
        Ok(Self { n, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Diagonal matrix; used for `M` and `M^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagMatrix {
    values: Vec<f64>,
}

impl DiagMatrix {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn order(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(perm.iter().map(|&i| self.values[i]).collect())
    }

    /// `DIA n` followed by one value per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24 + 16);
        let _ = writeln!(out, "DIA {}", self.values.len());
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "empty diagonal file"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != "DIA" {
            return Err(Error::parse(hl + 1, "expected header 'DIA n'"));
        }
        let n: usize = toks[1]
            .parse()
            .map_err(|_| Error::parse(hl + 1, "bad order"))?;
        let values = lines
            .map(|(ln, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(ln + 1, format!("bad value '{}'", l.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != n {
            return Err(Error::parse(hl + 1, format!("header declares {n} values, found {}", values.len())));
        }
        Ok(Self { values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
