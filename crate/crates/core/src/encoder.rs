//! Base text embeddings.
//!
//! The built-in encoder hashes character n-grams into a signed feature
//! vector (xxHash64, seed 0: low bits pick the bucket, bit 63 picks the
//! sign) and L2-normalizes it. Precomputed embeddings from any other model
//! can be supplied through the `FEMB` file format instead.

use std::collections::HashMap;
use std::hash::Hasher;
use std::path::Path;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::binio::{put_f32s, put_id, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &str = "FEMB";
pub const EMBEDDING_VERSION: u32 = 1;

/// Norm deviation attributable to storing a unit vector in `f32`.
const UNIT_SLACK: f64 = 1e-6;

/// A unit-norm base embedding, stored sparsely.
///
/// Hashed n-gram vectors touch a few hundred of their thousands of buckets,
/// so only non-zero coordinates are kept; `indices` is strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEmbedding {
    pub source_id: String,
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl BaseEmbedding {
    /// Normalizes `values` to unit length and keeps its non-zero entries.
    pub fn from_dense(source_id: impl Into<String>, values: &[f32]) -> Result<Self> {
        let pairs = values.iter().enumerate().map(|(i, &v)| (i as u32, v as f64));
        Self::from_pairs(source_id.into(), values.len(), pairs)
    }

    /// `pairs` must be sorted by index without repeats.
    fn from_pairs(source_id: String, dim: usize, pairs: impl Iterator<Item = (u32, f64)> + Clone) -> Result<Self> {
        let mut sq = 0.0;
        for (_, v) in pairs.clone() {
            if !v.is_finite() {
                return Err(Error::CorruptRecord(format!("non-finite value in embedding `{source_id}`")));
            }
            sq += v * v;
        }
        let norm = sq.sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateEmbedding);
        }
        // vectors already unit-length up to f32 rounding are kept bit-for-bit,
        // so normalizing twice changes nothing
        let scale = if (norm - 1.0).abs() <= UNIT_SLACK { 1.0 } else { norm };
        let (indices, values) = pairs
            .filter(|&(_, v)| v != 0.0)
            .map(|(i, v)| (i, (v / scale) as f32))
            .unzip();
        Ok(Self { source_id, dim, indices, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v as f64))
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// Hashed character n-gram encoder configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashEncoder {
    pub dim: usize,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for HashEncoder {
    fn default() -> Self {
        Self { dim: 16384, n_min: 2, n_max: 4 }
    }
}

impl HashEncoder {
    pub fn validate(&self) -> Result<()> {
        if !self.dim.is_power_of_two() || !(1 << 8..=1 << 20).contains(&self.dim) {
            return Err(Error::DimOutOfRange(self.dim));
        }
        if self.n_min < 1 || self.n_min > self.n_max || self.n_max > 8 {
            return Err(Error::NgramRange(self.n_min, self.n_max));
        }
        Ok(())
    }

    pub fn embed(&self, id: &str, text: &str) -> Result<BaseEmbedding> {
        let mut e = hash_ngram_embed(text, self.dim, (self.n_min, self.n_max))?;
        e.source_id = id.to_owned();
        Ok(e)
    }
}

/// Signed feature hashing of all character n-grams with `n` in `n_range`.
pub fn hash_ngram_embed(text: &str, dim: usize, n_range: (usize, usize)) -> Result<BaseEmbedding> {
    HashEncoder { dim, n_min: n_range.0, n_max: n_range.1 }.validate()?;
    if text.trim().is_empty() {
        return Err(Error::EmptyText(String::new()));
    }
    let mask = (dim - 1) as u64;
    // Byte offset of every char boundary, including the end of the string.
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let n_chars = bounds.len() - 1;

    let mut hits: Vec<(u32, i32)> = Vec::new();
    for n in n_range.0..=n_range.1 {
        for start in 0..(n_chars + 1).saturating_sub(n) {
            let gram = &text.as_bytes()[bounds[start]..bounds[start + n]];
            let mut h = XxHash64::with_seed(0);
            h.write(gram);
            let h = h.finish();
            let sign = if h >> 63 == 1 { -1 } else { 1 };
            hits.push(((h & mask) as u32, sign));
        }
    }
    hits.sort_unstable_by_key(|&(b, _)| b);

    let mut merged: Vec<(u32, f64)> = Vec::with_capacity(hits.len());
    for (bucket, sign) in hits {
        match merged.last_mut() {
            Some((b, acc)) if *b == bucket => *acc += sign as f64,
            _ => merged.push((bucket, sign as f64)),
        }
    }
    BaseEmbedding::from_pairs(String::new(), dim, merged.into_iter())
}

/// Contents of an embedding file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    entries: Vec<BaseEmbedding>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new(), by_id: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, e: BaseEmbedding) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, found: e.dim() });
        }
        if self.by_id.contains_key(&e.source_id) {
            return Err(Error::DuplicateId(e.source_id));
        }
        self.by_id.insert(e.source_id.clone(), self.entries.len());
        self.entries.push(e);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&BaseEmbedding> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &BaseEmbedding> {
        self.entries.iter()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (self.dim * 4 + 16));
        out.extend_from_slice(EMBEDDING_MAGIC.as_bytes());
        put_u32(&mut out, EMBEDDING_VERSION);
        put_u32(&mut out, self.dim as u32);
        put_u64(&mut out, self.entries.len() as u64);
        for e in &self.entries {
            put_id(&mut out, &e.source_id)?;
            put_f32s(&mut out, e.to_dense());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(EMBEDDING_MAGIC)?;
        let version = r.u32()?;
        if version != EMBEDDING_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut set = Self::new(dim);
        let mut row = Vec::with_capacity(dim);
        for _ in 0..count {
            let id = r.id()?;
            row.clear();
            r.f32_into(&mut row, dim)?;
            set.insert(BaseEmbedding::from_dense(id, &row)?)?;
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptRecord(format!("{} trailing bytes", r.remaining())));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

/// Reads an embedding file; vectors that are not unit length are
/// normalized.
pub fn load_external_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    EmbeddingSet::from_bytes(&std::fs::read(path)?)
}
