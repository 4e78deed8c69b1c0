//! Fuzzy k-nearest-neighbor attribution.
//!
//! The `k` nearest index entries vote with weights `softmax(s_j / τ)`, and a
//! class membership is the total weight of the neighbors carrying it. Ties
//! go to the class that sorts first: llm, collab, human for the three-way
//! decision, and families by code (human last) for family attribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorClass, FamilyTable, LabelCodes};
use crate::error::{Error, Result};
use crate::index::{Neighbor, Provenance, VectorIndex};
use crate::model::{classify_prob, EmbeddingVector, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
    pub tau: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 20, tau: 0.7 }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::BadK(0));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::BadTemperature(self.tau));
        }
        Ok(())
    }
}

/// Target of family attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FamilyClass {
    Family(u16),
    Human,
}

impl FamilyClass {
    /// Purely human text has no family; anything else is attributed to the
    /// model that touched it.
    pub fn of(codes: &LabelCodes) -> Self {
        match codes.z {
            Some(z) if !(codes.x == 1 && codes.y == 0) => FamilyClass::Family(z),
            _ => FamilyClass::Human,
        }
    }

    pub fn label(&self, families: &FamilyTable) -> String {
        match self {
            FamilyClass::Human => "human".to_string(),
            FamilyClass::Family(z) => families.name(*z).map_or_else(|| format!("family#{z}"), str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNeighbor {
    pub id: String,
    pub codes: LabelCodes,
    pub provenance: Provenance,
    pub similarity: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyVote<C> {
    /// Membership per class, summing to 1.
    pub memberships: BTreeMap<C, f64>,
    pub predicted: C,
    pub neighbors: Vec<WeightedNeighbor>,
}

/// `softmax(s / τ)`, computed with the maximum subtracted.
pub fn fuzzy_weights(similarities: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::BadTemperature(tau));
    }
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities.iter().map(|s| ((s - max) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

fn neighbors(index: &VectorIndex, query: &EmbeddingVector, cfg: &KnnConfig) -> Result<Vec<WeightedNeighbor>> {
    cfg.validate()?;
    let hits: Vec<Neighbor> = index.top_k(&query.to_f32(), cfg.k)?;
    let sims: Vec<f64> = hits.iter().map(|h| h.similarity).collect();
    let weights = fuzzy_weights(&sims, cfg.tau)?;
    Ok(hits
        .into_iter()
        .zip(weights)
        .map(|(h, weight)| WeightedNeighbor {
            id: h.id.to_string(),
            codes: h.codes,
            provenance: h.provenance,
            similarity: h.similarity,
            weight,
        })
        .collect())
}

fn vote<C: Ord + Copy>(
    neighbors: Vec<WeightedNeighbor>,
    classes: impl IntoIterator<Item = C>,
    class_of: impl Fn(&LabelCodes) -> C,
) -> FuzzyVote<C> {
    let mut memberships: BTreeMap<C, f64> = classes.into_iter().map(|c| (c, 0.0)).collect();
    for n in &neighbors {
        *memberships.entry(class_of(&n.codes)).or_insert(0.0) += n.weight;
    }
    // strict > keeps the first class in sort order on ties
    let mut best: Option<(C, f64)> = None;
    for (&c, &m) in &memberships {
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((c, m));
        }
    }
    let predicted = best.expect("at least one class").0;
    FuzzyVote { memberships, predicted, neighbors }
}

/// Three-way decision: llm, collab or human.
pub fn fuzzy_knn_classify(index: &VectorIndex, query: &EmbeddingVector, cfg: &KnnConfig) -> Result<FuzzyVote<AuthorClass>> {
    let nb = neighbors(index, query, cfg)?;
    Ok(vote(nb, AuthorClass::ALL, |c| c.class()))
}

/// Family attribution over `{human} ∪ families`. Families that no
/// neighbor carries are omitted from the memberships.
pub fn classify_family(index: &VectorIndex, query: &EmbeddingVector, cfg: &KnnConfig) -> Result<FuzzyVote<FamilyClass>> {
    let nb = neighbors(index, query, cfg)?;
    Ok(vote(nb, [FamilyClass::Human], FamilyClass::of))
}

/// Training-time classifier head alone: `true` means fully LLM.
pub fn classify_direct(params: &ModelParams, query: &EmbeddingVector) -> bool {
    classify_prob(params, query) >= 0.5
}

/// Serializable classification of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub id: String,
    pub predicted: String,
    pub memberships: BTreeMap<String, f64>,
    pub family_predicted: String,
    pub family_memberships: BTreeMap<String, f64>,
    pub direct_llm_probability: f64,
    pub neighbors: Vec<NeighborRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub id: String,
    pub label: String,
    pub family: Option<String>,
    pub similarity: f64,
    pub weight: f64,
    pub adapted: bool,
}

impl ClassificationRecord {
    pub fn new(
        id: impl Into<String>,
        vote3: &FuzzyVote<AuthorClass>,
        family_vote: &FuzzyVote<FamilyClass>,
        direct_llm_probability: f64,
        families: &FamilyTable,
    ) -> Self {
        Self {
            id: id.into(),
            predicted: vote3.predicted.name().to_string(),
            memberships: vote3.memberships.iter().map(|(c, m)| (c.name().to_string(), *m)).collect(),
            family_predicted: family_vote.predicted.label(families),
            family_memberships: family_vote.memberships.iter().map(|(c, m)| (c.label(families), *m)).collect(),
            direct_llm_probability,
            neighbors: vote3
                .neighbors
                .iter()
                .map(|n| NeighborRecord {
                    id: n.id.clone(),
                    label: n.codes.class().name().to_string(),
                    family: n.codes.z.map(|z| FamilyClass::Family(z).label(families)),
                    similarity: n.similarity,
                    weight: n.weight,
                    adapted: n.provenance == Provenance::Adapted,
                })
                .collect(),
        }
    }
}
