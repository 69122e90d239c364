//! Per-domain corpora, byte chunking, replay memory and batch mixing.

use crate::error::{Error, Result};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

/// Splitmix64 step, used to derive independent seeds from a base seed and a
/// stream tag. Stable across platforms.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over bytes; stable tag for strings.
pub fn hash_str(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// Fixed chunk length in tokens; callers reserve the prompt slot by
    /// passing `max_seq_len - 1`.
    pub chunk_len: usize,
    /// Fraction of chunks held out for validation (at least one chunk).
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { chunk_len: 63, val_fraction: 0.05, seed: 0 }
    }
}

/// One domain's tokenized corpus with a train/validation split.
#[derive(Debug, Clone)]
pub struct DomainCorpus {
    pub domain_id: String,
    chunks: Vec<Vec<u8>>,
    val_count: usize,
    pub chunk_len: usize,
}

impl DomainCorpus {
    /// Reads the files, chunks the byte stream, shuffles deterministically
    /// and records the split. `token_budget` caps the bytes consumed.
    pub fn ingest(
        paths: &[PathBuf],
        domain_id: &str,
        token_budget: Option<usize>,
        cfg: &IngestConfig,
    ) -> Result<Self> {
        let mut bytes = Vec::new();
        for p in paths {
            let content = std::fs::read(p).map_err(|e| {
                Error::Data(format!("cannot read {} for domain {domain_id}: {e}", p.display()))
            })?;
            bytes.extend_from_slice(&content);
            if let Some(cap) = token_budget {
                if bytes.len() >= cap {
                    bytes.truncate(cap);
                    break;
                }
            }
        }
        Self::from_bytes(&bytes, domain_id, cfg)
    }

    /// Same as [`DomainCorpus::ingest`] over an in-memory byte stream.
    pub fn from_bytes(bytes: &[u8], domain_id: &str, cfg: &IngestConfig) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Data(format!("domain {domain_id}: empty corpus")));
        }
        let n = bytes.len() / cfg.chunk_len;
        if n < 2 {
            return Err(Error::Data(format!(
                "domain {domain_id}: {} bytes yield {n} chunks of {}, need at least 2",
                bytes.len(),
                cfg.chunk_len
            )));
        }
        let mut chunks: Vec<Vec<u8>> =
            bytes.chunks_exact(cfg.chunk_len).map(|c| c.to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, hash_str(domain_id)));
        // Fisher-Yates, spelled out so the order is pinned by this code alone.
        for i in (1..chunks.len()).rev() {
            let j = rng.gen_range(0..=i);
            chunks.swap(i, j);
        }
        let val_count = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
        Ok(DomainCorpus {
            domain_id: domain_id.to_string(),
            chunks,
            val_count,
            chunk_len: cfg.chunk_len,
        })
    }

    pub fn validation(&self) -> &[Vec<u8>] {
        &self.chunks[..self.val_count]
    }

    pub fn train(&self) -> &[Vec<u8>] {
        &self.chunks[self.val_count..]
    }

    pub fn train_token_count(&self) -> usize {
        self.train().len() * self.chunk_len
    }

    pub fn token_count(&self) -> usize {
        self.chunks.len() * self.chunk_len
    }

    /// Audit helper: content set of the validation slice.
    pub fn validation_set(&self) -> HashSet<&[u8]> {
        self.validation().iter().map(|c| c.as_slice()).collect()
    }
}

/// Bounded per-domain reservoir of training chunks kept for replay.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    entries: BTreeMap<String, Vec<Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: BTreeMap<String, Vec<Vec<u8>>>) -> Self {
        MemoryStore { entries }
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<Vec<u8>>> {
        &self.entries
    }

    /// Uniform sample without replacement of `budget_tokens` worth of chunks
    /// from the corpus' training split. A zero budget disables replay for the
    /// domain; the full train size copies it.
    pub fn fill(&mut self, corpus: &DomainCorpus, budget_tokens: usize, seed: u64) -> Result<()> {
        let train = corpus.train();
        let available = corpus.train_token_count();
        if budget_tokens > available {
            return Err(Error::Data(format!(
                "memory budget {budget_tokens} exceeds domain {} train tokens {available}",
                corpus.domain_id
            )));
        }
        let k = budget_tokens / corpus.chunk_len;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, hash_str(&corpus.domain_id)));
        let mut idx = sample(&mut rng, train.len(), k).into_vec();
        idx.sort_unstable();
        let picked: Vec<Vec<u8>> = idx.into_iter().map(|i| train[i].clone()).collect();
        self.entries.insert(corpus.domain_id.clone(), picked);
        Ok(())
    }

    pub fn domains(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(|v| v.is_empty())
    }

    pub fn get(&self, domain: &str) -> Option<&[Vec<u8>]> {
        self.entries.get(domain).map(|v| v.as_slice())
    }

    /// One replay draw: a uniformly chosen domain, then a uniform chunk.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<BatchRow> {
        let domains = self.domains();
        if domains.is_empty() {
            return Err(Error::Data("replay draw from an empty memory".into()));
        }
        let d = domains[rng.gen_range(0..domains.len())];
        let chunks = &self.entries[d];
        let c = &chunks[rng.gen_range(0..chunks.len())];
        Ok(BatchRow { domain: d.to_string(), bytes: c.clone() })
    }
}

/// One training sequence labeled with the domain it came from, so the right
/// prompt can be attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRow {
    pub domain: String,
    pub bytes: Vec<u8>,
}

/// Assembles one batch mixing `ratio.0` parts of the current domain with
/// `ratio.1` parts drawn from memory. Composition is exact in every batch.
pub fn mixed_batch<R: Rng>(
    current: &DomainCorpus,
    memory: &MemoryStore,
    ratio: (u32, u32),
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<BatchRow>> {
    let parts = (ratio.0 + ratio.1) as usize;
    if parts == 0 {
        return Err(Error::Data("replay ratio 0:0".into()));
    }
    if batch_size % parts != 0 {
        return Err(Error::Data(format!(
            "batch size {batch_size} not divisible by ratio parts {}+{}",
            ratio.0, ratio.1
        )));
    }
    let n_old = batch_size / parts * ratio.1 as usize;
    let n_new = batch_size - n_old;
    if n_old > 0 && memory.is_empty() {
        return Err(Error::Data("nonzero replay share with empty memory".into()));
    }
    let train = current.train();
    let mut rows = Vec::with_capacity(batch_size);
    for _ in 0..n_new {
        let c = &train[rng.gen_range(0..train.len())];
        rows.push(BatchRow { domain: current.domain_id.clone(), bytes: c.clone() });
    }
    for _ in 0..n_old {
        rows.push(memory.draw(rng)?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// corpus manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub paths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_budget: Option<usize>,
}

/// Lists each domain's id, source files and optional token budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub domains: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: CorpusManifest = toml::from_str(&text)
            .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Data("manifest lists no domains".into()));
        }
        let mut seen = HashSet::new();
        for d in &self.domains {
            if d.id.is_empty() || d.paths.is_empty() {
                return Err(Error::Data(format!("manifest entry {:?} incomplete", d.id)));
            }
            if !seen.insert(&d.id) {
                return Err(Error::Data(format!("duplicate domain id {}", d.id)));
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.domains
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::Data(format!("domain {id} not in manifest")))
    }
}
