//! Reference implementations used as test oracles. They are written from
//! the label semantics directly and favor clarity over speed or stability.

#![allow(dead_code)]

use authorship_core::corpus::LabelCodes;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Who {
    Llm(u16),
    Collab(u16),
    Human,
}

impl Who {
    pub fn codes(self) -> LabelCodes {
        match self {
            Who::Llm(f) => LabelCodes::llm(f),
            Who::Collab(f) => LabelCodes::collab(f),
            Who::Human => LabelCodes::human(),
        }
    }

    fn fully_llm(self) -> bool {
        matches!(self, Who::Llm(_))
    }

    fn family(self) -> Option<u16> {
        match self {
            Who::Llm(f) | Who::Collab(f) => Some(f),
            Who::Human => None,
        }
    }

    fn is_collab(self) -> bool {
        matches!(self, Who::Collab(_))
    }
}

pub fn random_who(rng: &mut impl Rng, families: u16) -> Who {
    match rng.gen_range(0..3) {
        0 => Who::Llm(rng.gen_range(0..families)),
        1 => Who::Collab(rng.gen_range(0..families)),
        _ => Who::Human,
    }
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        // sum of uniforms is close enough to isotropic for these checks
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn sim(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// `-ln(A / (A + B))` with `A = exp(mean(pos) / τ)` and
/// `B = Σ exp(neg / τ)`, evaluated literally.
pub fn naive_level_loss(pos: &[f64], neg: &[f64], tau: f64) -> f64 {
    let mean = pos.iter().sum::<f64>() / pos.len() as f64;
    let a = (mean / tau).exp();
    let b: f64 = neg.iter().map(|s| (s / tau).exp()).sum();
    -(a / (a + b)).ln()
}

/// Brute-force multi-level contrastive loss over all anchors.
pub fn brute_force_mcl(emb: &[Vec<f64>], who: &[Who], tau: f64, coef: [f64; 5]) -> f64 {
    let n = emb.len();
    let mut total = 0.0;
    for i in 0..n {
        let a = who[i];
        let others = || (0..n).filter(move |&j| j != i);
        let mut term = |l: usize, pos: Vec<usize>, neg: Vec<usize>| {
            if pos.is_empty() {
                return;
            }
            let ps: Vec<f64> = pos.iter().map(|&j| sim(&emb[i], &emb[j])).collect();
            let ns: Vec<f64> = neg.iter().map(|&j| sim(&emb[i], &emb[j])).collect();
            total += coef[l] * naive_level_loss(&ps, &ns, tau);
        };
        if a.fully_llm() {
            term(0, others().filter(|&j| who[j].fully_llm()).collect(), others().filter(|&j| !who[j].fully_llm()).collect());
            let llm = || others().filter(|&j| who[j].fully_llm());
            term(
                1,
                llm().filter(|&j| who[j].family() == a.family()).collect(),
                llm().filter(|&j| who[j].family() != a.family()).collect(),
            );
        } else {
            term(2, others().filter(|&j| !who[j].fully_llm()).collect(), others().filter(|&j| who[j].fully_llm()).collect());
            let mixed = || others().filter(|&j| !who[j].fully_llm());
            term(
                3,
                mixed().filter(|&j| who[j].is_collab() == a.is_collab()).collect(),
                mixed().filter(|&j| who[j].is_collab() != a.is_collab()).collect(),
            );
            if a.is_collab() {
                let collab = || others().filter(|&j| who[j].is_collab());
                term(
                    4,
                    collab().filter(|&j| who[j].family() == a.family()).collect(),
                    collab().filter(|&j| who[j].family() != a.family()).collect(),
                );
            }
        }
    }
    total
}

/// Relative error with a floor on the denominator so that entries that are
/// both essentially zero compare as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
