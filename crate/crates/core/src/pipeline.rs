//! Glue between corpus records, base embeddings, the projection head and
//! the index.

use crate::corpus::{CorpusDataset, LabelCodes, TextRecord};
use crate::encoder::{BaseEmbedding, EmbeddingSet, HashEncoder};
use crate::error::{Error, Result};
use crate::index::IndexEntry;
use crate::model::{project, EmbeddingVector, ModelParams};

/// Where base embeddings come from: hashed n-grams of the text, or a
/// precomputed set looked up by record id.
#[derive(Debug, Clone)]
pub enum BaseEncoder {
    Hash(HashEncoder),
    External(EmbeddingSet),
}

impl BaseEncoder {
    pub fn dim(&self) -> usize {
        match self {
            BaseEncoder::Hash(h) => h.dim,
            BaseEncoder::External(s) => s.dim(),
        }
    }

    pub fn encode(&self, id: &str, text: &str) -> Result<BaseEmbedding> {
        match self {
            BaseEncoder::Hash(h) => h.embed(id, text),
            BaseEncoder::External(s) => s.get(id).cloned().ok_or_else(|| Error::MissingEmbedding(id.to_string())),
        }
    }

    pub fn encode_record(&self, r: &TextRecord) -> Result<BaseEmbedding> {
        self.encode(&r.id, &r.text)
    }
}

/// Projects a labeled base embedding into an index entry.
pub fn index_entry(params: &ModelParams, base: &BaseEmbedding, codes: LabelCodes) -> Result<IndexEntry> {
    let e = project(params, base)?;
    Ok(IndexEntry::new(base.source_id.clone(), e.to_f32(), codes))
}

/// Index entries for the given records of a dataset.
pub fn corpus_entries(
    params: &ModelParams,
    encoder: &BaseEncoder,
    dataset: &CorpusDataset,
    indices: &[usize],
) -> Result<Vec<IndexEntry>> {
    indices
        .iter()
        .map(|&i| {
            let r = &dataset.records[i];
            index_entry(params, &encoder.encode_record(r)?, dataset.codes(r))
        })
        .collect()
}

/// Learned embeddings for the given records.
pub fn corpus_embeddings(
    params: &ModelParams,
    encoder: &BaseEncoder,
    dataset: &CorpusDataset,
    indices: &[usize],
) -> Result<Vec<EmbeddingVector>> {
    indices.iter().map(|&i| project(params, &encoder.encode_record(&dataset.records[i])?)).collect()
}
