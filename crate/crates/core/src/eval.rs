//! Classification metrics and the similarity-ordering diagnostic.

use std::collections::BTreeSet;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorClass, LabelCodes};
use crate::error::{Error, Result};
use crate::loss::{build_level_sets, dot};

/// Confusion matrix with accuracy and macro-averaged precision, recall and
/// F1. Per-class values that divide by zero count as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub classes: Vec<String>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

impl LabelMetrics {
    /// Metrics over explicit class positions `0..classes.len()`.
    pub fn from_indices(classes: Vec<String>, predicted: &[usize], gold: &[usize]) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::LengthMismatch(predicted.len(), gold.len()));
        }
        let c = classes.len();
        let mut confusion = vec![vec![0usize; c]; c];
        for (&p, &g) in predicted.iter().zip(gold) {
            confusion[g][p] += 1;
        }
        let n = gold.len();
        let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for i in 0..c {
            let tp = confusion[i][i];
            let pred_i: usize = (0..c).map(|g| confusion[g][i]).sum();
            let gold_i: usize = confusion[i].iter().sum();
            let p = ratio(tp, pred_i);
            let r = ratio(tp, gold_i);
            p_sum += p;
            r_sum += r;
            f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let cf = c.max(1) as f64;
        Ok(Self {
            classes,
            confusion,
            n,
            accuracy: ratio(correct, n),
            precision_macro: p_sum / cf,
            recall_macro: r_sum / cf,
            f1_macro: f_sum / cf,
        })
    }

    /// Metrics over the union of predicted and gold labels, in label order.
    pub fn from_labels<T: Ord + Clone + Display>(predicted: &[T], gold: &[T]) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::LengthMismatch(predicted.len(), gold.len()));
        }
        let classes: Vec<T> = predicted.iter().chain(gold).cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let pos = |t: &T| classes.binary_search(t).expect("label in class set");
        let p: Vec<usize> = predicted.iter().map(pos).collect();
        let g: Vec<usize> = gold.iter().map(pos).collect();
        Self::from_indices(classes.iter().map(|c| c.to_string()).collect(), &p, &g)
    }

    /// `gold\predicted` header followed by one row per gold class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("gold\\predicted");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(c);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Three-way metrics plus regression errors on the ordinal codes
/// (llm 0, collab 1, human 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub metrics: LabelMetrics,
    pub mse: f64,
    pub mae: f64,
}

pub fn evaluate(predicted: &[AuthorClass], gold: &[AuthorClass]) -> Result<MetricsReport> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch(predicted.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(Error::Empty);
    }
    let classes = AuthorClass::ALL.iter().map(|c| c.name().to_string()).collect();
    let p: Vec<usize> = predicted.iter().map(|c| c.index()).collect();
    let g: Vec<usize> = gold.iter().map(|c| c.index()).collect();
    let metrics = LabelMetrics::from_indices(classes, &p, &g)?;
    let n = gold.len() as f64;
    let diffs = predicted.iter().zip(gold).map(|(p, g)| p.ordinal() as f64 - g.ordinal() as f64);
    let mse = diffs.clone().map(|d| d * d).sum::<f64>() / n;
    let mae = diffs.map(f64::abs).sum::<f64>() / n;
    Ok(MetricsReport { metrics, mse, mae })
}

/// Mean similarity from LLM anchors to one population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingLevel {
    pub level: usize,
    pub population: String,
    pub mean: Option<f64>,
    pub pairs: usize,
    pub status: String,
}

/// `m_a − m_b` between consecutive populations that both have pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingGap {
    pub upper: usize,
    pub lower: usize,
    pub gap: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub levels: Vec<OrderingLevel>,
    pub gaps: Vec<OrderingGap>,
}

impl OrderingReport {
    pub fn mean(&self, level: usize) -> Option<f64> {
        self.levels[level - 1].mean
    }

    pub fn all_hold(&self) -> bool {
        self.gaps.iter().all(|g| g.holds)
    }
}

const POPULATIONS: [&str; 5] = [
    "llm, same family",
    "llm, other family",
    "collab, same family",
    "collab, other family",
    "human",
];

/// Checks that LLM anchors are, on average, closest to their own family,
/// then other LLMs, then collaborative text from their family, then other
/// collaborative text, and furthest from human text.
pub fn ordering_diagnostic<E: AsRef<[f64]>>(embeddings: &[E], codes: &[LabelCodes]) -> Result<OrderingReport> {
    if embeddings.len() != codes.len() {
        return Err(Error::LengthMismatch(embeddings.len(), codes.len()));
    }
    if codes.len() < 2 {
        return Err(Error::InsufficientSamples(codes.len()));
    }
    let mut sums = [0.0f64; 5];
    let mut counts = [0usize; 5];
    for (i, anchor) in codes.iter().enumerate() {
        if anchor.x != 0 {
            continue;
        }
        let sets = build_level_sets(codes, i)?;
        let l1 = sets.level(1);
        let l2 = sets.level(2);
        let mut add = |pop: usize, k: usize| {
            sums[pop] += dot(embeddings[i].as_ref(), embeddings[k].as_ref()).clamp(-1.0, 1.0);
            counts[pop] += 1;
        };
        l2.positives.iter().for_each(|&k| add(0, k));
        l2.negatives.iter().for_each(|&k| add(1, k));
        for &k in &l1.negatives {
            let c = &codes[k];
            let pop = match (c.y, c.z) {
                (1, z) if z == anchor.z => 2,
                (1, _) => 3,
                _ => 4,
            };
            add(pop, k);
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::InsufficientPairs(1));
    }
    let levels: Vec<OrderingLevel> = (0..5)
        .map(|p| OrderingLevel {
            level: p + 1,
            population: POPULATIONS[p].to_string(),
            mean: (counts[p] > 0).then(|| sums[p] / counts[p] as f64),
            pairs: counts[p],
            status: if counts[p] > 0 { "Ok" } else { "InsufficientPairs" }.to_string(),
        })
        .collect();
    let defined: Vec<&OrderingLevel> = levels.iter().filter(|l| l.mean.is_some()).collect();
    let gaps = defined
        .windows(2)
        .map(|w| {
            let gap = w[0].mean.unwrap() - w[1].mean.unwrap();
            OrderingGap { upper: w[0].level, lower: w[1].level, gap, holds: gap >= 0.0 }
        })
        .collect();
    Ok(OrderingReport { levels, gaps })
}
