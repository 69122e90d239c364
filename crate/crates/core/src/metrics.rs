//! Perplexity aggregates (AP, AP+), representational similarity (ARS) and
//! attention-pattern export.

use crate::error::{Error, Result};
use crate::model::{Objective, TokenBatch, TransformerLM, MASK_ID};
use crate::scalar::Scalar;
use crate::tensor::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Probability floor guarding `ln` in KL computations.
pub const KL_EPS: f64 = 1e-12;
/// Default number of ARS probe positions.
pub const ARS_PROBES: usize = 512;

/// Row softmax at 64-bit, used for KL between model outputs.
pub fn softmax_f64<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `KL(p || q)` in nats with an epsilon floor on both arguments.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            if a <= 0.0 {
                0.0
            } else {
                let a = a.max(KL_EPS);
                let b = b.max(KL_EPS);
                a * (a.ln() - b.ln())
            }
        })
        .sum()
}

/// Average perplexity: the geometric mean of per-domain perplexities.
pub fn ap(ppls: &[f64]) -> Result<f64> {
    if ppls.is_empty() {
        return Err(Error::Metric("ap of an empty perplexity list".into()));
    }
    for &p in ppls {
        if !(p > 0.0) {
            return Err(Error::Metric(format!("ap requires positive perplexities, got {p}")));
        }
    }
    let mean_log = ppls.iter().map(|p| p.ln()).sum::<f64>() / ppls.len() as f64;
    Ok(mean_log.exp())
}

/// Per-domain perplexity captured exactly when that domain's training
/// finished. Write-once per domain.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct FinalPplTable {
    map: BTreeMap<String, f64>,
}

impl FinalPplTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, domain: &str, ppl: f64) -> Result<()> {
        if self.map.contains_key(domain) {
            return Err(Error::Metric(format!("final perplexity for {domain} already recorded")));
        }
        self.map.insert(domain.to_string(), ppl);
        Ok(())
    }

    pub fn get(&self, domain: &str) -> Option<f64> {
        self.map.get(domain).copied()
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.map
    }
}

/// Average increased perplexity over the domains seen before the current
/// one: mean of `PPL_now - PPL_final` per prior domain. Negative values mean
/// the old domains improved.
pub fn ap_plus(
    prior_domains: &[String],
    current: &BTreeMap<String, f64>,
    finals: &FinalPplTable,
) -> Result<f64> {
    if prior_domains.is_empty() {
        return Err(Error::Metric("ap_plus needs at least one prior domain".into()));
    }
    let mut sum = 0.0;
    for d in prior_domains {
        let now = current
            .get(d)
            .ok_or_else(|| Error::Metric(format!("missing current perplexity for {d}")))?;
        let fin = finals
            .get(d)
            .ok_or_else(|| Error::Metric(format!("missing final perplexity for {d}")))?;
        sum += now - fin;
    }
    Ok(sum / prior_domains.len() as f64)
}

/// Per-evaluation record serialized as JSON lines.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub stage: usize,
    pub domain: String,
    pub step: u64,
    pub wall_time_s: f64,
    /// Steps x parameters consumed so far (deterministic wall-time proxy).
    pub budget: u64,
    pub ppl: BTreeMap<String, f64>,
    pub ap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_plus: Option<f64>,
}

impl MetricsRecord {
    /// The AP field must be the geometric mean of the recorded perplexities.
    pub fn check_consistent(&self) -> Result<()> {
        let ppls: Vec<f64> = self.ppl.values().copied().collect();
        let expect = ap(&ppls)?;
        let rel = (self.ap - expect).abs() / expect.abs().max(1e-300);
        if rel > 1e-9 {
            return Err(Error::Metric(format!(
                "ap {} inconsistent with perplexities (expected {expect})",
                self.ap
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// ARS
// ---------------------------------------------------------------------------

/// Probe positions sampled from a validation slice: for the masked objective
/// the positions are replaced by `MASK`; for the causal objective the
/// distribution at the position predicts the next token.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub chunks: Vec<Vec<u8>>,
    /// `(chunk index, content position)` pairs.
    pub positions: Vec<(usize, usize)>,
    pub objective: Objective,
}

/// Seed-deterministic probe sample over validation chunks.
pub fn sample_probes(
    val_chunks: &[Vec<u8>],
    n: usize,
    objective: Objective,
    seed: u64,
) -> Result<ProbeSet> {
    if val_chunks.is_empty() || n == 0 {
        return Err(Error::Metric("probe sampling needs chunks and n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = val_chunks[0].len();
    let max_pos = match objective {
        Objective::MaskedLm => seq,
        Objective::CausalLm => seq - 1,
    };
    let positions = (0..n)
        .map(|_| (rng.gen_range(0..val_chunks.len()), rng.gen_range(0..max_pos)))
        .collect();
    Ok(ProbeSet { chunks: val_chunks.to_vec(), positions, objective })
}

/// Token distributions (64-bit, one row per probe) of a model at the probe
/// positions.
pub fn token_distributions<T: Scalar>(
    model: &TransformerLM<T>,
    probes: &ProbeSet,
) -> Result<Vec<Vec<f64>>> {
    let vocab = model.config().vocab_size;
    // Probes of one chunk share a forward; masked probes mask jointly.
    let mut per_chunk: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pi, &(ci, _)) in probes.positions.iter().enumerate() {
        per_chunk.entry(ci).or_default().push(pi);
    }
    let mut dists = vec![Vec::new(); probes.positions.len()];
    for (ci, probe_ids) in per_chunk {
        let chunk = &probes.chunks[ci];
        let mut tokens: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        if probes.objective == Objective::MaskedLm {
            for &pi in &probe_ids {
                tokens[probes.positions[pi].1] = MASK_ID;
            }
        }
        let batch = TokenBatch::new(1, tokens.len(), tokens)?;
        let mut g = Graph::inference();
        let logits = model.forward(&mut g, &batch, None)?;
        let data = logits.to_vec();
        for &pi in &probe_ids {
            let pos = probes.positions[pi].1;
            let row = &data[pos * vocab..(pos + 1) * vocab];
            dists[pi] = softmax_f64(row);
        }
    }
    Ok(dists)
}

/// The similarity formula over precomputed distributions: negative mean KL
/// of each ancestor's distribution against the descendant's.
pub fn ars_from_distributions(
    ancestors: &[Vec<Vec<f64>>],
    descendant: &[Vec<f64>],
) -> Result<f64> {
    if ancestors.is_empty() {
        return Err(Error::Metric("ars needs at least one ancestor".into()));
    }
    if descendant.is_empty() {
        return Err(Error::Metric("ars needs at least one probe".into()));
    }
    let n = descendant.len();
    let mut total = 0.0;
    for anc in ancestors {
        if anc.len() != n {
            return Err(Error::Metric("ancestor/descendant probe counts differ".into()));
        }
        for (p, q) in anc.iter().zip(descendant) {
            total += kl_divergence(p, q);
        }
    }
    Ok(-total / (ancestors.len() * n) as f64)
}

/// Average representational similarity of a descendant model against its
/// ancestors at the probe positions. Higher (closer to zero) = more similar.
pub fn ars<T: Scalar>(
    ancestors: &[&TransformerLM<T>],
    descendant: &TransformerLM<T>,
    probes: &ProbeSet,
) -> Result<f64> {
    for a in ancestors {
        if a.config().vocab_size != descendant.config().vocab_size {
            return Err(Error::VocabMismatch {
                left: a.config().vocab_size,
                right: descendant.config().vocab_size,
            });
        }
    }
    let desc = token_distributions(descendant, probes)?;
    let anc: Result<Vec<_>> = ancestors.iter().map(|m| token_distributions(m, probes)).collect();
    ars_from_distributions(&anc?, &desc)
}

// ---------------------------------------------------------------------------
// attention export
// ---------------------------------------------------------------------------

/// Attention probabilities of one head on the first sequence of the batch,
/// rows summing to one.
pub fn export_attention<T: Scalar>(
    model: &TransformerLM<T>,
    tokens: &TokenBatch,
    layer: usize,
    head: usize,
) -> Result<Vec<Vec<f64>>> {
    let cfg = model.config();
    if layer >= cfg.n_layers {
        return Err(Error::Metric(format!("layer {layer} out of range 0..{}", cfg.n_layers)));
    }
    if head >= cfg.n_heads {
        return Err(Error::Metric(format!("head {head} out of range 0..{}", cfg.n_heads)));
    }
    let mut g = Graph::inference();
    let out = model.forward_with_attention(&mut g, tokens, None)?;
    let probs = &out.attention[layer];
    let shape = probs.shape(); // [B, H, S, S]
    let s = shape[3];
    let data = probs.to_vec();
    let base = head * s * s; // batch row 0
    let mut rows = Vec::with_capacity(s);
    for i in 0..s {
        rows.push(
            data[base + i * s..base + (i + 1) * s].iter().map(|v| v.to_f64_lossy()).collect(),
        );
    }
    Ok(rows)
}

/// Renders an attention matrix as CSV rows.
pub fn attention_to_csv(matrix: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in matrix {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
