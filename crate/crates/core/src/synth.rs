//! Deterministic synthetic corpora with planted per-family styles.
//!
//! Every class draws tokens `t<id>` from a Zipf(1.1) base distribution over
//! the vocabulary. LLM family `f` moves `style_strength` of its mass onto a
//! private, contiguous block of token ids; human text uses the base
//! distribution; collaborative text for family `f` draws each token from the
//! family-`f` distribution with probability `collab_mix` and from the human
//! one otherwise.
//!
//! Each class has its own ChaCha8 stream, so a family's documents do not
//! depend on how many other families are generated. Splits come from a hash
//! of the record id (70/15/15).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;
use twox_hash::XxHash64;

use crate::corpus::{AuthorshipLabel, CollabMode, CorpusDataset, Split, TextRecord};
use crate::error::{Error, Result};

pub const ZIPF_EXPONENT: f64 = 1.1;

/// Names handed out to synthetic families, in order.
pub const FAMILY_NAMES: [&str; 10] = [
    "GPT", "Gemini", "DeepSeek", "Llama", "Qwen", "Mistral", "Phi", "Gemma", "Falcon", "Yi",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub n_families: usize,
    pub docs_per_class: usize,
    pub doc_len_range: (usize, usize),
    pub style_strength: f64,
    pub collab_mix: f64,
    /// Set from the top-level `seed` of a configuration file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            n_families: 3,
            docs_per_class: 200,
            doc_len_range: (60, 120),
            style_strength: 0.6,
            collab_mix: 0.5,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_owned()));
        if self.n_families < 1 || self.n_families > FAMILY_NAMES.len() {
            return bad("n_families must be in 1..=10");
        }
        if self.docs_per_class < 1 {
            return bad("docs_per_class must be at least 1");
        }
        if self.vocab_size < 40 {
            return bad("vocab_size must be at least 40");
        }
        let (lo, hi) = self.doc_len_range;
        if lo < 1 || lo > hi {
            return bad("doc_len_range must satisfy 1 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.style_strength) {
            return bad("style_strength must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.collab_mix) {
            return bad("collab_mix must be in [0, 1]");
        }
        Ok(())
    }

    /// Token-id range preferred by family `f`. Blocks occupy the upper half
    /// of the vocabulary, one twentieth of it each.
    pub fn family_block(&self, family: usize) -> std::ops::Range<usize> {
        let size = self.vocab_size / 20;
        let start = self.vocab_size / 2 + family * size;
        start..start + size
    }
}

struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, exponent: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|r| {
                acc += (r as f64).powf(-exponent);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        Self { cdf }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    fn sample_outside(&self, rng: &mut ChaCha8Rng, block: &std::ops::Range<usize>) -> usize {
        loop {
            let t = self.sample(rng);
            if !block.contains(&t) {
                return t;
            }
        }
    }
}

struct Sampler<'a> {
    cfg: &'a SynthConfig,
    zipf: Zipf,
}

impl Sampler<'_> {
    fn human_token(&self, rng: &mut ChaCha8Rng) -> usize {
        self.zipf.sample(rng)
    }

    fn family_token(&self, rng: &mut ChaCha8Rng, family: usize) -> usize {
        let block = self.cfg.family_block(family);
        if rng.gen_bool(self.cfg.style_strength) {
            rng.gen_range(block)
        } else {
            self.zipf.sample_outside(rng, &block)
        }
    }

    fn document(&self, rng: &mut ChaCha8Rng, mut token: impl FnMut(&mut ChaCha8Rng) -> usize) -> String {
        let (lo, hi) = self.cfg.doc_len_range;
        let len = rng.gen_range(lo..=hi);
        let mut text = String::with_capacity(len * 6);
        for i in 0..len {
            if i > 0 {
                text.push(' ');
            }
            text.push('t');
            text.push_str(&token(rng).to_string());
        }
        text
    }
}

/// Assigns train/val/test from the id alone.
pub fn split_for_id(id: &str) -> Split {
    let mut h = XxHash64::with_seed(0);
    h.write(id.as_bytes());
    match h.finish() % 100 {
        0..=69 => Split::Train,
        70..=84 => Split::Val,
        _ => Split::Test,
    }
}

fn class_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const COLLAB_MODES: [CollabMode; 3] = [CollabMode::Polished, CollabMode::Continued, CollabMode::Paraphrased];

/// Generates `(1 + 2 * n_families) * docs_per_class` records: all human
/// documents first, then fully-LLM documents per family, then collaborative
/// documents per family.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<CorpusDataset> {
    cfg.validate()?;
    let sampler = Sampler { cfg, zipf: Zipf::new(cfg.vocab_size, ZIPF_EXPONENT) };
    let n = cfg.docs_per_class;
    let mut records = Vec::with_capacity((1 + 2 * cfg.n_families) * n);

    let make = |id: String, text: String, label: AuthorshipLabel| TextRecord {
        split: split_for_id(&id),
        id,
        text,
        lang: "en".into(),
        domain: "synthetic".into(),
        label,
    };

    let mut rng = class_rng(cfg.seed, 0);
    for i in 0..n {
        let text = sampler.document(&mut rng, |r| sampler.human_token(r));
        records.push(make(format!("human-{i:05}"), text, AuthorshipLabel::human()));
    }
    for (f, name) in FAMILY_NAMES.iter().enumerate().take(cfg.n_families) {
        let mut rng = class_rng(cfg.seed, 1 + 2 * f as u64);
        for i in 0..n {
            let text = sampler.document(&mut rng, |r| sampler.family_token(r, f));
            records.push(make(format!("llm-{name}-{i:05}"), text, AuthorshipLabel::llm(*name)));
        }
    }
    for (f, name) in FAMILY_NAMES.iter().enumerate().take(cfg.n_families) {
        let mut rng = class_rng(cfg.seed, 2 + 2 * f as u64);
        for i in 0..n {
            let text = sampler.document(&mut rng, |r| {
                if r.gen_bool(cfg.collab_mix) {
                    sampler.family_token(r, f)
                } else {
                    sampler.human_token(r)
                }
            });
            let mode = COLLAB_MODES[i % COLLAB_MODES.len()];
            records.push(make(format!("collab-{name}-{i:05}"), text, AuthorshipLabel::collab(*name, Some(mode))));
        }
    }
    CorpusDataset::from_records(records)
}
