//! Multi-level contrastive objective with an auxiliary classification term.
//!
//! For every anchor `i` in a batch, five levels each define a positive set
//! `K⁺` and a negative set `K⁻` from the label codes (see
//! [`build_level_sets`]). A level's loss is
//!
//! ```text
//! A = exp(mean_{k∈K⁺} S(q,k) / τ)
//! B = Σ_{k∈K⁻} exp(S(q,k) / τ)
//! L = -log(A / (A + B))
//! ```
//!
//! and the contrastive total weights levels 1–2 by `α, β` for fully-LLM
//! anchors (`x = 0`) and levels 3–5 by `γ, δ, ζ` for the others (`x = 1`).
//! A level whose positive set is empty contributes nothing and is counted
//! as skipped. The total loss adds the mean binary cross-entropy of the
//! classifier head, whose target is "fully LLM" (`x = 0`).

use serde::{Deserialize, Serialize};

use crate::corpus::LabelCodes;
use crate::encoder::BaseEmbedding;
use crate::error::{Error, Result};
use crate::model::{sigmoid, Activations, EmbeddingVector, ModelParams};

pub const LEVELS: usize = 5;

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the
/// cross-entropy.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub zeta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.7, alpha: 2.0, beta: 2.0, gamma: 1.0, delta: 1.0, zeta: 2.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::BadTemperature(self.tau));
        }
        if self.coefficients().iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::ConfigInvalid("level coefficients must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `[α, β, γ, δ, ζ]`, indexed by level − 1.
    pub fn coefficients(&self) -> [f64; LEVELS] {
        [self.alpha, self.beta, self.gamma, self.delta, self.zeta]
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        self.as_slice()
    }
}

/// Dot product of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(clamped_dot(a.as_slice(), b.as_slice()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamped_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Level {
    pub active: bool,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Positive and negative sets of one anchor for levels 1 through 5
/// (`levels[0]` is level 1).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LevelSets {
    pub levels: [Level; LEVELS],
}

impl LevelSets {
    pub fn level(&self, level: usize) -> &Level {
        &self.levels[level - 1]
    }
}

/// Whether a level's constraint applies to an anchor at all.
pub fn level_applies(anchor: &LabelCodes, level: usize) -> bool {
    match level {
        1 | 2 => anchor.x == 0,
        3 | 4 => anchor.x == 1,
        5 => anchor.x == 1 && anchor.y == 1 && anchor.z.is_some(),
        _ => false,
    }
}

/// Builds `K⁺` / `K⁻` for every level with `codes[anchor]` as the anchor.
///
/// | level | anchor     | K⁺                          | K⁻                          |
/// |-------|------------|-----------------------------|-----------------------------|
/// | 1     | x=0        | x=0                         | x=1                         |
/// | 2     | x=0        | x=0, same z                 | x=0, other z                |
/// | 3     | x=1        | x=1                         | x=0                         |
/// | 4     | x=1        | x=1, same y                 | x=1, other y                |
/// | 5     | x=1, y=1   | x=1, y=1, same z            | x=1, y=1, other z           |
///
/// The anchor itself never appears; a level with no positives is inactive.
pub fn build_level_sets(codes: &[LabelCodes], anchor: usize) -> Result<LevelSets> {
    if codes.len() < 2 {
        return Err(Error::BatchTooSmall(codes.len()));
    }
    let a = codes[anchor];
    let mut sets = LevelSets::default();
    for (level, slot) in (1..=LEVELS).zip(sets.levels.iter_mut()) {
        if !level_applies(&a, level) {
            continue;
        }
        for (j, c) in codes.iter().enumerate() {
            if j == anchor {
                continue;
            }
            let side = match level {
                1 => Some(c.x == 0),
                2 => (c.x == 0).then_some(c.z == a.z),
                3 => Some(c.x == 1),
                4 => (c.x == 1).then_some(c.y == a.y),
                _ => (c.x == 1 && c.y == 1).then_some(c.z == a.z),
            };
            match side {
                Some(true) => slot.positives.push(j),
                Some(false) => slot.negatives.push(j),
                None => {}
            }
        }
        slot.active = !slot.positives.is_empty();
    }
    Ok(sets)
}

/// Loss and the softmax weights of the negatives, from raw similarities.
fn level_terms(pos: &[f64], neg: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let a = pos.iter().map(|s| s.clamp(-1.0, 1.0)).sum::<f64>() / pos.len() as f64 / tau;
    let logits: Vec<f64> = neg.iter().map(|s| s.clamp(-1.0, 1.0) / tau).collect();
    let m = logits.iter().copied().fold(a, f64::max);
    if m == a {
        // -log(A / (A + B)) = log(1 + Σ exp(b_k - a))
        let exps: Vec<f64> = logits.iter().map(|b| (b - a).exp()).collect();
        let s: f64 = exps.iter().sum();
        let loss = s.ln_1p();
        let weights = exps.iter().map(|e| e / (1.0 + s)).collect();
        (loss, weights)
    } else {
        let ea = (a - m).exp();
        let exps: Vec<f64> = logits.iter().map(|b| (b - m).exp()).collect();
        let z = ea + exps.iter().sum::<f64>();
        let loss = m - a + z.ln();
        let weights = exps.iter().map(|e| e / z).collect();
        (loss, weights)
    }
}

/// Contrastive loss of one anchor at one level, from the similarities of the
/// anchor to its positives and negatives.
pub fn level_loss_from_similarities(pos: &[f64], neg: &[f64], tau: f64) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::EmptyPositives);
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::BadTemperature(tau));
    }
    Ok(level_terms(pos, neg, tau).0)
}

/// Contrastive loss of one anchor at one level.
pub fn level_loss<E: AsRef<[f64]>>(
    anchor: &[f64],
    positives: &[usize],
    negatives: &[usize],
    embeddings: &[E],
    tau: f64,
) -> Result<f64> {
    let sims = |set: &[usize]| -> Vec<f64> { set.iter().map(|&k| clamped_dot(anchor, embeddings[k].as_ref())).collect() };
    level_loss_from_similarities(&sims(positives), &sims(negatives), tau)
}

/// Scalar contrastive loss with its per-level decomposition.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MclBreakdown {
    pub total: f64,
    /// Coefficient-weighted sum of each level over all anchors; these add up
    /// to `total`.
    pub levels: [f64; LEVELS],
    /// Applicable (anchor, level) terms skipped for lack of positives.
    pub skipped: usize,
}

fn check_batch<E: AsRef<[f64]>>(embeddings: &[E], codes: &[LabelCodes]) -> Result<()> {
    if embeddings.len() != codes.len() {
        return Err(Error::LengthMismatch(embeddings.len(), codes.len()));
    }
    if codes.len() < 2 {
        return Err(Error::BatchTooSmall(codes.len()));
    }
    let d = embeddings[0].as_ref().len();
    if let Some(e) = embeddings.iter().find(|e| e.as_ref().len() != d) {
        return Err(Error::DimMismatch { expected: d, found: e.as_ref().len() });
    }
    Ok(())
}

/// Forward pass of the contrastive loss, optionally accumulating
/// `∂L/∂embedding` for every batch element into `grads`.
fn mcl_impl<E: AsRef<[f64]>>(
    embeddings: &[E],
    codes: &[LabelCodes],
    cfg: &LossConfig,
    mut grads: Option<&mut [Vec<f64>]>,
) -> Result<MclBreakdown> {
    check_batch(embeddings, codes)?;
    cfg.validate()?;
    let n = embeddings.len();
    let tau = cfg.tau;
    let coef = cfg.coefficients();

    let raw: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dot(embeddings[i].as_ref(), embeddings[j].as_ref())).collect())
        .collect();
    // clamp is flat outside [-1, 1]
    let live = |s: f64| (-1.0..=1.0).contains(&s);

    let mut out = MclBreakdown::default();
    for i in 0..n {
        let sets = build_level_sets(codes, i)?;
        for (l, set) in sets.levels.iter().enumerate() {
            if !level_applies(&codes[i], l + 1) {
                continue;
            }
            if !set.active {
                out.skipped += 1;
                continue;
            }
            let pos: Vec<f64> = set.positives.iter().map(|&k| raw[i][k]).collect();
            let neg: Vec<f64> = set.negatives.iter().map(|&k| raw[i][k]).collect();
            let (loss, weights) = level_terms(&pos, &neg, tau);
            out.levels[l] += coef[l] * loss;

            let Some(g) = grads.as_deref_mut() else { continue };
            if coef[l] == 0.0 {
                continue;
            }
            // dL/da = -Σπ_k with a = mean positive similarity / τ; dL/db_k = π_k
            let dl_da = -weights.iter().sum::<f64>();
            let per_pos = coef[l] * dl_da / (set.positives.len() as f64 * tau);
            for &k in &set.positives {
                if live(raw[i][k]) {
                    axpy(&mut g[i], per_pos, embeddings[k].as_ref());
                    axpy(&mut g[k], per_pos, embeddings[i].as_ref());
                }
            }
            for (&k, w) in set.negatives.iter().zip(&weights) {
                if live(raw[i][k]) {
                    let c = coef[l] * w / tau;
                    axpy(&mut g[i], c, embeddings[k].as_ref());
                    axpy(&mut g[k], c, embeddings[i].as_ref());
                }
            }
        }
    }
    out.total = out.levels.iter().sum();
    Ok(out)
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Multi-level contrastive loss summed over all anchors of the batch.
pub fn mcl_loss<E: AsRef<[f64]>>(embeddings: &[E], codes: &[LabelCodes], cfg: &LossConfig) -> Result<MclBreakdown> {
    mcl_impl(embeddings, codes, cfg, None)
}

/// Mean binary cross-entropy with target "fully LLM" (`x = 0`).
pub fn ce_loss(probs: &[f64], x_codes: &[u8]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if probs.len() != x_codes.len() {
        return Err(Error::LengthMismatch(probs.len(), x_codes.len()));
    }
    let sum: f64 = probs
        .iter()
        .zip(x_codes)
        .map(|(&p, &x)| {
            let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            if x == 0 { p.ln() } else { (1.0 - p).ln() }
        })
        .sum();
    Ok(-sum / probs.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub mcl: MclBreakdown,
}

struct BatchForward {
    acts: Vec<Activations>,
    probs: Vec<f64>,
}

fn forward_batch(batch: &[&BaseEmbedding], codes: &[LabelCodes], params: &ModelParams) -> Result<BatchForward> {
    if batch.len() != codes.len() {
        return Err(Error::LengthMismatch(batch.len(), codes.len()));
    }
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall(batch.len()));
    }
    let acts = batch.iter().map(|b| params.forward(b)).collect::<Result<Vec<_>>>()?;
    let probs = acts.iter().map(|a| sigmoid(params.logit(&a.embedding))).collect();
    Ok(BatchForward { acts, probs })
}

/// `L = L_ce + L_mcl` for a batch of base embeddings.
pub fn total_loss(batch: &[&BaseEmbedding], codes: &[LabelCodes], params: &ModelParams, cfg: &LossConfig) -> Result<LossBreakdown> {
    let fwd = forward_batch(batch, codes, params)?;
    let embeddings: Vec<&[f64]> = fwd.acts.iter().map(|a| a.embedding.as_slice()).collect();
    let mcl = mcl_loss(&embeddings, codes, cfg)?;
    let xs: Vec<u8> = codes.iter().map(|c| c.x).collect();
    let ce = ce_loss(&fwd.probs, &xs)?;
    Ok(LossBreakdown { total: ce + mcl.total, ce, mcl })
}

/// Total loss and its exact gradient with respect to every parameter array.
pub fn loss_gradients(
    batch: &[&BaseEmbedding],
    codes: &[LabelCodes],
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let fwd = forward_batch(batch, codes, params)?;
    let n = batch.len();
    let embeddings: Vec<&[f64]> = fwd.acts.iter().map(|a| a.embedding.as_slice()).collect();
    let d = params.dims.output_dim;
    let mut g_emb = vec![vec![0.0; d]; n];
    let mcl = mcl_impl(&embeddings, codes, cfg, Some(&mut g_emb))?;
    let xs: Vec<u8> = codes.iter().map(|c| c.x).collect();
    let ce = ce_loss(&fwd.probs, &xs)?;

    let mut grads = ModelParams::zeros(params.dims);
    let (d_in, hidden) = (params.dims.input_dim, params.dims.hidden_dim);
    let mut g_u = vec![0.0; d];
    let mut g_h = vec![0.0; hidden];
    for i in 0..n {
        let act = &fwd.acts[i];
        let e = &act.embedding;
        let p = fwd.probs[i];
        // clamp is flat outside (P_CLAMP, 1 - P_CLAMP)
        if p > P_CLAMP && p < 1.0 - P_CLAMP {
            let target = if codes[i].x == 0 { 1.0 } else { 0.0 };
            let g_logit = (p - target) / n as f64;
            axpy(&mut grads.wc, g_logit, e);
            grads.bc += g_logit;
            axpy(&mut g_emb[i], g_logit, &params.wc);
        }

        // through e = u / ‖u‖
        let proj = dot(e, &g_emb[i]);
        for r in 0..d {
            g_u[r] = (g_emb[i][r] - e[r] * proj) / act.norm;
        }
        axpy(&mut grads.b2, 1.0, &g_u);
        g_h.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..d {
            let row = r * hidden..(r + 1) * hidden;
            axpy(&mut grads.w2[row.clone()], g_u[r], &act.hidden);
            axpy(&mut g_h, g_u[r], &params.w2[row]);
        }
        // through tanh
        for (gh, h) in g_h.iter_mut().zip(&act.hidden) {
            *gh *= 1.0 - h * h;
        }
        axpy(&mut grads.b1, 1.0, &g_h);
        for (r, &ga) in g_h.iter().enumerate() {
            if ga == 0.0 {
                continue;
            }
            let row = &mut grads.w1[r * d_in..(r + 1) * d_in];
            for (k, v) in batch[i].iter() {
                row[k] += ga * v;
            }
        }
    }
    Ok((LossBreakdown { total: ce + mcl.total, ce, mcl }, grads))
}
