use std::path::Path;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"LAPN";
pub const MODEL_VERSION: u32 = 1;

/// Fixed sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Per-point feature width.
    pub d: usize,
    /// Neighborhood size for feature aggregation (clamped to `n - 1`).
    pub k: usize,
    /// Width of the per-point encoder MLP.
    pub encoder_width: usize,
    /// Hidden widths of each pairwise / per-point head; the output is 1.
    pub head_widths: [usize; 2],
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d: 64,
            k: 32,
            encoder_width: 64,
            head_widths: [128, 256],
        }
    }
}

/// Location of one fully connected layer inside the flat parameter vector:
/// `fan_out x fan_in` row-major weights followed by `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Index of each layer in [`LapNetParams::layers`].
pub mod layer {
    pub const ENC_IN: usize = 0;
    pub const ENC_HIDDEN: usize = 1;
    pub const ENC_AGG: usize = 2;
    pub const ALPHA: usize = 3;
    pub const PHI: usize = 6;
    pub const OMEGA: usize = 9;
    pub const COUNT: usize = 12;
}

fn layer_shapes(dims: &ModelDims) -> Vec<(usize, usize)> {
    let e = dims.encoder_width;
    let head_in = 3 + dims.d;
    let [h1, h2] = dims.head_widths;
    let mut shapes = vec![(3, e), (e, e), (2 * e, dims.d)];
    for _ in 0..3 {
        shapes.extend([(head_in, h1), (h1, h2), (h2, 1)]);
    }
    shapes
}

fn layout(shapes: &[(usize, usize)]) -> Vec<LayerSpec> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(fan_in, fan_out)| {
            let spec = LayerSpec {
                fan_in,
                fan_out,
                offset,
            };
            offset += spec.len();
            spec
        })
        .collect()
}

/// All trainable parameters of the Laplacian network in one flat vector,
/// plus the inverse-mass rescale constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LapNetParams {
    dims: ModelDims,
    layers: Vec<LayerSpec>,
    /// Predicted inverse masses are `c_m * sigmoid(.)`.
    pub c_m: f64,
    values: Vec<f64>,
}

impl LapNetParams {
    /// He-uniform weights, zero biases.
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        let layers = layout(&layer_shapes(&dims));
        let total = layers.last().map_or(0, |l| l.offset + l.len());
        let mut values = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &layers {
            let bound = (6.0 / spec.fan_in as f64).sqrt();
            for v in &mut values[spec.offset..spec.offset + spec.weight_len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Self {
            dims,
            layers,
            c_m: 1.0,
            values,
        }
    }

    /// Same shapes, every parameter zero.
    pub fn zeros(dims: ModelDims) -> Self {
        let mut p = Self::new(dims, 0);
        p.values.iter_mut().for_each(|v| *v = 0.0);
        p
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite()) && self.c_m.is_finite()
    }

    pub(crate) fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let s = self.layers[l];
        ArrayView2::from_shape(
            (s.fan_out, s.fan_in),
            &self.values[s.offset..s.offset + s.weight_len()],
        )
        .expect("layer layout")
    }

    pub(crate) fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let s = self.layers[l];
        ArrayView1::from(&self.values[s.offset + s.weight_len()..s.offset + s.len()])
    }

    /// Serializes as `LAPN`, version, d, k, c_M, layer dims, parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.values.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.k as u32).to_le_bytes());
        out.extend_from_slice(&self.c_m.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.fan_in as u32).to_le_bytes());
            out.extend_from_slice(&(l.fan_out as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MODEL_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = cur.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let d = cur.u32()? as usize;
        let k = cur.u32()? as usize;
        let c_m = cur.f64()?;
        let count = cur.u32()? as usize;
        let mut shapes = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            shapes.push((cur.u32()? as usize, cur.u32()? as usize));
        }
        if count != layer::COUNT {
            return Err(Error::ShapeMismatch(format!("expected {} layers, found {count}", layer::COUNT)));
        }
        let dims = ModelDims {
            d,
            k,
            encoder_width: shapes[layer::ENC_IN].1,
            head_widths: [shapes[layer::ALPHA].1, shapes[layer::ALPHA + 1].1],
        };
        if layer_shapes(&dims) != shapes {
            return Err(Error::ShapeMismatch("layer dimensions are inconsistent".into()));
        }
        let layers = layout(&shapes);
        let total = layers.last().map_or(0, |l| l.offset + l.len());
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(cur.f64()?);
        }
        if cur.pos != bytes.len() {
            return Err(Error::ShapeMismatch("trailing bytes after parameters".into()));
        }
        Ok(Self {
            dims,
            layers,
            c_m,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn save_model(params: &LapNetParams, path: impl AsRef<Path>) -> Result<()> {
    params.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LapNetParams> {
    LapNetParams::load(path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::TruncatedFile);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Flat gradient buffer with the same layout as [`LapNetParams`].
#[derive(Debug, Clone)]
pub struct Gradient {
    pub(crate) layers: Vec<LayerSpec>,
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(p: &LapNetParams) -> Self {
        Self {
            layers: p.layers.clone(),
            values: vec![0.0; p.len()],
        }
    }

    pub(crate) fn weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let s = self.layers[l];
        ArrayViewMut2::from_shape(
            (s.fan_out, s.fan_in),
            &mut self.values[s.offset..s.offset + s.weight_len()],
        )
        .expect("layer layout")
    }

    pub(crate) fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        let s = self.layers[l];
        ArrayViewMut1::from(&mut self.values[s.offset + s.weight_len()..s.offset + s.len()])
    }

    pub fn add_scaled(&mut self, other: &Gradient, c: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }
}
