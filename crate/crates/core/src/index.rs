//! Exact cosine-similarity vector index.
//!
//! The index holds the base store built from training data plus an
//! append-only overlay for labeled examples added later. Search is a linear
//! scan over both, so results are exact; ties on similarity are broken by
//! ascending id.
//!
//! Concurrent use follows the borrow rules: any number of `&VectorIndex`
//! readers or a single `&mut` writer. [`VectorIndex::add_unseen`] validates
//! a whole batch before appending, so a failed append leaves the index
//! untouched.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use crate::binio::{put_f32s, put_id, put_u16, put_u32, put_u64, ByteReader};
use crate::corpus::LabelCodes;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &str = "FIDX";
pub const INDEX_VERSION: u32 = 1;

/// Stored vectors may deviate from unit norm by `f32` rounding only.
const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Base = 0,
    Adapted = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub vector: Vec<f32>,
    pub codes: LabelCodes,
    pub provenance: Provenance,
}

impl IndexEntry {
    pub fn new(id: impl Into<String>, vector: Vec<f32>, codes: LabelCodes) -> Self {
        Self { id: id.into(), vector, codes, provenance: Provenance::Base }
    }
}

/// A search hit, borrowing from the index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<'a> {
    pub id: &'a str,
    pub codes: LabelCodes,
    pub provenance: Provenance,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    codes: Vec<LabelCodes>,
    provenance: Vec<Provenance>,
    /// Row-major `len × dim`.
    data: Vec<f32>,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl VectorIndex {
    /// Empty index of the given width.
    pub fn with_dim(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), codes: Vec::new(), provenance: Vec::new(), data: Vec::new() }
    }

    /// Builds the base store. Every entry is marked [`Provenance::Base`].
    pub fn build(entries: Vec<IndexEntry>) -> Result<Self> {
        let first = entries.first().ok_or(Error::Empty)?;
        let mut index = Self::with_dim(first.vector.len());
        index.append(entries, Provenance::Base)?;
        Ok(index)
    }

    /// Appends labeled entries to the overlay.
    pub fn add_unseen(&mut self, entries: Vec<IndexEntry>) -> Result<()> {
        self.append(entries, Provenance::Adapted)
    }

    fn append(&mut self, entries: Vec<IndexEntry>, provenance: Provenance) -> Result<()> {
        let mut fresh = HashSet::with_capacity(entries.len());
        let existing: HashSet<&str> = self.ids.iter().map(String::as_str).collect();
        for e in &entries {
            self.check_vector(&e.vector)?;
            if existing.contains(e.id.as_str()) || !fresh.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        drop(existing);
        for e in entries {
            self.push(e.id, &e.vector, e.codes, provenance);
        }
        Ok(())
    }

    fn check_vector(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, found: v.len() });
        }
        let n = norm(v);
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotUnitNorm(n));
        }
        Ok(())
    }

    fn push(&mut self, id: String, v: &[f32], codes: LabelCodes, provenance: Provenance) {
        self.ids.push(id);
        self.codes.push(codes);
        self.provenance.push(provenance);
        self.data.extend_from_slice(v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn base_len(&self) -> usize {
        self.provenance.iter().filter(|p| **p == Provenance::Base).count()
    }

    pub fn overlay_len(&self) -> usize {
        self.len() - self.base_len()
    }

    pub fn entry(&self, i: usize) -> IndexEntry {
        IndexEntry {
            id: self.ids[i].clone(),
            vector: self.vector(i).to_vec(),
            codes: self.codes[i],
            provenance: self.provenance[i],
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = IndexEntry> + '_ {
        (0..self.len()).map(|i| self.entry(i))
    }

    fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Similarity of `query` to every stored vector, in storage order.
    pub fn similarities(&self, query: &[f32]) -> Result<Vec<f32>> {
        if query.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, found: query.len() });
        }
        if self.dim == 0 {
            return Ok(vec![0.0; self.len()]);
        }
        Ok(self.data.chunks_exact(self.dim).map(|row| dot_f32(row, query).clamp(-1.0, 1.0)).collect())
    }

    /// The `k` most similar entries, best first. Returns everything when
    /// `k` exceeds the index size.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor<'_>>> {
        if k == 0 {
            return Err(Error::BadK(k));
        }
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let sims = self.similarities(query)?;
        let mut order: Vec<u32> = (0..sims.len() as u32).collect();
        let cmp = |a: &u32, b: &u32| -> Ordering {
            let (a, b) = (*a as usize, *b as usize);
            sims[b].total_cmp(&sims[a]).then_with(|| self.ids[a].cmp(&self.ids[b]))
        };
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| {
                let i = i as usize;
                Neighbor {
                    id: &self.ids[i],
                    codes: self.codes[i],
                    provenance: self.provenance[i],
                    similarity: sims[i] as f64,
                }
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.len() * (self.dim * 4 + 24));
        out.extend_from_slice(INDEX_MAGIC.as_bytes());
        put_u32(&mut out, INDEX_VERSION);
        put_u32(&mut out, self.dim as u32);
        put_u64(&mut out, self.len() as u64);
        for i in 0..self.len() {
            put_id(&mut out, &self.ids[i])?;
            let c = self.codes[i];
            out.push(c.x);
            out.push(c.y);
            put_u16(&mut out, c.z_raw());
            out.push(self.provenance[i] as u8);
            put_f32s(&mut out, self.vector(i).iter().copied());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut index = Self::with_dim(dim);
        let mut seen = HashSet::new();
        let mut row = Vec::with_capacity(dim);
        for _ in 0..count {
            let id = r.id()?;
            let codes = LabelCodes::from_raw(r.u8()?, r.u8()?, r.u16()?)?;
            let provenance = match r.u8()? {
                0 => Provenance::Base,
                1 => Provenance::Adapted,
                p => return Err(Error::CorruptRecord(format!("unknown provenance {p}"))),
            };
            row.clear();
            r.f32_into(&mut row, dim)?;
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            index.push(id, &row, codes, provenance);
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptRecord(format!("{} trailing bytes", r.remaining())));
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
