//! Per-domain tunable prompt vectors: lifecycle, attachment and the
//! right/wrong/none perplexity probe.

use crate::data::{derive_seed, hash_str};
use crate::error::{Error, Result};
use crate::expansion::{expand_vector, WidthMap};
use crate::model::{TransformerLM, INIT_STD};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One domain's tunable prompt vector, implanted at position 0 of prompted
/// inputs and trained jointly with the model.
#[derive(Debug, Clone)]
pub struct DomainPrompt<T> {
    pub domain_id: String,
    pub vector: Tensor<T>,
    pub created_at_stage: usize,
}

/// Append-only inventory of domain prompts.
#[derive(Debug, Clone, Default)]
pub struct PromptStore<T> {
    prompts: BTreeMap<String, DomainPrompt<T>>,
}

/// One row of the prompt probe: the domain's validation perplexity under the
/// matching prompt, a wrong domain's prompt, and no prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRow {
    pub domain: String,
    pub ppl_right: f64,
    pub ppl_wrong: f64,
    pub ppl_none: f64,
    pub wrong_domain: String,
    pub seed: u64,
}

impl<T: Scalar> PromptStore<T> {
    pub fn new() -> Self {
        PromptStore { prompts: BTreeMap::new() }
    }

    pub fn from_prompts(prompts: BTreeMap<String, DomainPrompt<T>>) -> Self {
        PromptStore { prompts }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn domains(&self) -> Vec<&str> {
        self.prompts.keys().map(|k| k.as_str()).collect()
    }

    pub fn get(&self, domain: &str) -> Option<&DomainPrompt<T>> {
        self.prompts.get(domain)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DomainPrompt<T>)> {
        self.prompts.iter()
    }

    /// Returns the existing prompt unchanged, or initializes a new tunable
    /// vector from a scaled gaussian keyed by `(seed, domain)`.
    pub fn get_or_create(
        &mut self,
        domain_id: &str,
        d_model: usize,
        stage: usize,
        seed: u64,
    ) -> Result<&DomainPrompt<T>> {
        if !self.prompts.contains_key(domain_id) {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, hash_str(domain_id)));
            let vector = Tensor::randn(&[d_model], INIT_STD, &mut rng).traced();
            self.prompts.insert(
                domain_id.to_string(),
                DomainPrompt { domain_id: domain_id.to_string(), vector, created_at_stage: stage },
            );
        }
        let prompt = &self.prompts[domain_id];
        if prompt.vector.numel() != d_model {
            return Err(Error::Prompt(format!(
                "prompt for {domain_id} has length {}, model wants {d_model}",
                prompt.vector.numel()
            )));
        }
        Ok(prompt)
    }

    /// Prompt vectors for a batch of per-sequence domains; every domain must
    /// already exist.
    pub fn vectors_for(&self, domains: &[&str]) -> Result<Vec<Tensor<T>>> {
        domains
            .iter()
            .map(|d| {
                self.prompts
                    .get(*d)
                    .map(|p| p.vector.clone())
                    .ok_or_else(|| Error::Prompt(format!("no prompt for domain {d}")))
            })
            .collect()
    }

    /// Expands every prompt with the embedding family's width map so
    /// prompted forwards stay consistent after growth.
    pub fn expand_all(&mut self, d_model_map: &WidthMap) -> Result<()> {
        let mut grown = BTreeMap::new();
        for (k, p) in &self.prompts {
            let vector = expand_vector(&p.vector, d_model_map, false)?.traced();
            grown.insert(
                k.clone(),
                DomainPrompt {
                    domain_id: p.domain_id.clone(),
                    vector,
                    created_at_stage: p.created_at_stage,
                },
            );
        }
        self.prompts = grown;
        Ok(())
    }
}

/// Evaluates each domain's validation slice under right / wrong / no prompt.
/// The wrong prompt is drawn uniformly over the other prompted domains,
/// keyed by `(seed, domain)`.
pub fn probe<T: Scalar>(
    model: &TransformerLM<T>,
    prompts: &PromptStore<T>,
    eval_slices: &BTreeMap<String, Vec<Vec<u8>>>,
    seed: u64,
    eval_batch: usize,
) -> Result<Vec<ProbeRow>> {
    let domains: Vec<&str> = prompts.domains();
    if domains.len() < 2 {
        return Err(Error::Prompt(format!(
            "prompt probe needs at least 2 prompted domains, have {}",
            domains.len()
        )));
    }
    let mut rows = Vec::new();
    for (domain, slices) in eval_slices {
        let right = prompts
            .get(domain)
            .ok_or_else(|| Error::Prompt(format!("no prompt for domain {domain}")))?;
        let others: Vec<&str> = domains.iter().copied().filter(|d| d != domain).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, hash_str(domain)));
        let wrong_domain = others[rng.gen_range(0..others.len())].to_string();
        let wrong = prompts.get(&wrong_domain).expect("listed domain has a prompt");
        let eval_seed = derive_seed(seed, hash_str(domain));
        let ppl_right = model.perplexity(slices, Some(&right.vector), eval_seed, eval_batch)?;
        let ppl_wrong = model.perplexity(slices, Some(&wrong.vector), eval_seed, eval_batch)?;
        let ppl_none = model.perplexity(slices, None, eval_seed, eval_batch)?;
        rows.push(ProbeRow {
            domain: domain.clone(),
            ppl_right,
            ppl_wrong,
            ppl_none,
            wrong_domain,
            seed,
        });
    }
    Ok(rows)
}

/// CSV rendering of probe rows: domain, ppl_right, ppl_wrong, ppl_none, seed.
pub fn probe_to_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("domain,ppl_right,ppl_wrong,ppl_none,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.domain, r.ppl_right, r.ppl_wrong, r.ppl_none, r.seed
        ));
    }
    out
}
