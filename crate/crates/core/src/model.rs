//! Trainable projection head and auxiliary classifier.
//!
//! `project` maps a base embedding `x` to `u = W2 · tanh(W1 · x + b1) + b2`
//! and returns `u / ‖u‖`, so similarity downstream is a plain dot product.
//! The classifier head reads the projected vector:
//! `p = sigmoid(wc · e + bc)` is the probability that the text is fully
//! machine-generated.
//!
//! Parameters are kept in `f64` for optimization and stored as `f32`.
//! Values produced by [`init_params`] and by training are always
//! `f32`-representable, which makes the file format round-trip bit-exact.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{put_f32s, put_u32, ByteReader};
use crate::encoder::BaseEmbedding;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "FMDL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    /// Base embedding width `D`.
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Output embedding width `d`.
    pub output_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { input_dim: 16384, hidden_dim: 256, output_dim: 128 }
    }
}

impl ModelDims {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self { input_dim, hidden_dim, output_dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::DimInvalid((self.input_dim, self.hidden_dim, self.output_dim)));
        }
        Ok(())
    }

    fn lens(&self) -> [usize; 6] {
        let (d_in, h, d) = (self.input_dim, self.hidden_dim, self.output_dim);
        [h * d_in, h, d * h, d, d, 1]
    }
}

/// A unit-norm vector in the learned representation space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps `values`, checking the unit-norm invariant to 1e-6.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NotUnitNorm(norm));
        }
        Ok(Self(values))
    }

    /// Scales `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= 1e-12) || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }
}

/// All trainable arrays, row-major. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub wc: Vec<f64>,
    pub bc: f64,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub hidden: Vec<f64>,
    pub norm: f64,
    pub embedding: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let [l1, lb1, l2, lb2, lc, _] = dims.lens();
        Self {
            dims,
            w1: vec![0.0; l1],
            b1: vec![0.0; lb1],
            w2: vec![0.0; l2],
            b2: vec![0.0; lb2],
            wc: vec![0.0; lc],
            bc: 0.0,
        }
    }

    /// The six arrays in file order: W1, b1, W2, b2, wc, bc.
    pub fn arrays(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.wc, std::slice::from_ref(&self.bc)]
    }

    pub fn arrays_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wc,
            std::slice::from_mut(&mut self.bc),
        ]
    }

    /// Checks that every array has the length its dims imply.
    pub fn check_shapes(&self) -> Result<()> {
        for (i, (arr, want)) in self.arrays().iter().zip(self.dims.lens()).enumerate() {
            if arr.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "array {} has {} entries, dims imply {want}",
                    ARRAY_NAMES[i],
                    arr.len()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn round_to_f32(&mut self) {
        for arr in self.arrays_mut() {
            arr.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub(crate) fn forward(&self, base: &BaseEmbedding) -> Result<Activations> {
        let ModelDims { input_dim, hidden_dim, output_dim } = self.dims;
        if base.dim() != input_dim {
            return Err(Error::DimMismatch { expected: input_dim, found: base.dim() });
        }
        let mut hidden = self.b1.clone();
        for (r, h) in hidden.iter_mut().enumerate() {
            let row = &self.w1[r * input_dim..(r + 1) * input_dim];
            *h += base.iter().map(|(i, v)| row[i] * v).sum::<f64>();
            *h = h.tanh();
        }
        let mut u = self.b2.clone();
        for (r, ur) in u.iter_mut().enumerate() {
            let row = &self.w2[r * hidden_dim..(r + 1) * hidden_dim];
            *ur += row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= 1e-12) {
            return Err(Error::DegenerateEmbedding);
        }
        debug_assert_eq!(u.len(), output_dim);
        u.iter_mut().for_each(|v| *v /= norm);
        Ok(Activations { hidden, norm, embedding: u })
    }

    pub(crate) fn logit(&self, e: &[f64]) -> f64 {
        self.wc.iter().zip(e).map(|(w, x)| w * x).sum::<f64>() + self.bc
    }
}

const ARRAY_NAMES: [&str; 6] = ["W1", "b1", "W2", "b2", "wc", "bc"];

/// Glorot-uniform weights (drawn in `f32`), zero biases.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
        let exact = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut bound = exact as f32;
        if bound as f64 > exact {
            bound = bound.next_down();
        }
        (0..n).map(|_| rng.gen_range(-bound..=bound) as f64).collect()
    };
    let ModelDims { input_dim, hidden_dim, output_dim } = dims;
    let mut p = ModelParams::zeros(dims);
    p.w1 = glorot(input_dim, hidden_dim, hidden_dim * input_dim);
    p.w2 = glorot(hidden_dim, output_dim, output_dim * hidden_dim);
    p.wc = glorot(output_dim, 1, output_dim);
    Ok(p)
}

/// Projects a base embedding into the unit sphere of the representation
/// space.
pub fn project(params: &ModelParams, base: &BaseEmbedding) -> Result<EmbeddingVector> {
    params.forward(base).map(|a| EmbeddingVector(a.embedding))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

/// Probability that the text behind `e` is fully machine-generated.
pub fn classify_prob(params: &ModelParams, e: &EmbeddingVector) -> f64 {
    sigmoid(params.logit(e.as_slice()))
}

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.dims.lens().iter().sum();
        let mut out = Vec::with_capacity(20 + 4 * total);
        out.extend_from_slice(MODEL_MAGIC.as_bytes());
        put_u32(&mut out, MODEL_VERSION);
        put_u32(&mut out, self.dims.input_dim as u32);
        put_u32(&mut out, self.dims.hidden_dim as u32);
        put_u32(&mut out, self.dims.output_dim as u32);
        for arr in self.arrays() {
            put_f32s(&mut out, arr.iter().map(|&v| v as f32));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dims = ModelDims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if dims.validate().is_err() {
            return Err(Error::ShapeMismatch(format!("header declares zero-sized dims {dims:?}")));
        }
        let expected = 4 * dims.lens().iter().sum::<usize>();
        if r.remaining() > expected {
            return Err(Error::ShapeMismatch(format!(
                "payload holds {} bytes, header dims {dims:?} describe {expected}",
                r.remaining()
            )));
        }
        let mut p = ModelParams::zeros(dims);
        let mut buf = Vec::new();
        for arr in p.arrays_mut() {
            buf.clear();
            r.f32_into(&mut buf, arr.len())?;
            for (dst, &src) in arr.iter_mut().zip(&buf) {
                *dst = src as f64;
            }
        }
        if !p.is_finite() {
            return Err(Error::CorruptRecord("non-finite parameter".into()));
        }
        Ok(p)
    }
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    params.check_shapes()?;
    std::fs::write(path, params.to_bytes())?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    ModelParams::from_bytes(&std::fs::read(path)?)
}
