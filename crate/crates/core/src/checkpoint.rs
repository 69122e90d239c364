//! Checkpoint file: JSON header (format version, model config, copy ledger,
//! prompt inventory, final-perplexity table, RNG state) followed by named
//! tensor blobs as length-prefixed little-endian f32, then the replay
//! memory. Round-trips bit-exactly.

use crate::error::{Error, Result};
use crate::metrics::FinalPplTable;
use crate::model::{LayerCopyLedger, ModelConfig, TransformerLM};
use crate::prompts::{DomainPrompt, PromptStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::data::MemoryStore;
use num_traits::FromPrimitive;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GLMC";
pub const FORMAT_VERSION: u32 = 1;

const PROMPT_PREFIX: &str = "prompt.";

/// Seed bookkeeping carried across resume: every stage derives its streams
/// from the experiment seed and its index, so the completed-stage count is
/// the whole RNG state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RngState {
    pub global_seed: u64,
    pub completed_stages: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptMeta {
    pub domain_id: String,
    pub created_at_stage: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    ledger: LayerCopyLedger,
    prompts: Vec<PromptMeta>,
    finals: FinalPplTable,
    rng: RngState,
    domains_seen: Vec<String>,
}

/// Everything a checkpoint restores.
pub struct Bundle<T> {
    pub model: TransformerLM<T>,
    pub prompts: PromptStore<T>,
    pub finals: FinalPplTable,
    pub memory: MemoryStore,
    pub rng: RngState,
    pub domains_seen: Vec<String>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn save<T: Scalar>(
    path: &Path,
    model: &TransformerLM<T>,
    prompts: &PromptStore<T>,
    finals: &FinalPplTable,
    memory: &MemoryStore,
    rng: RngState,
    domains_seen: &[String],
) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let file = std::fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;

        let header = Header {
            version: FORMAT_VERSION,
            config: model.config().clone(),
            ledger: model.ledger().clone(),
            prompts: prompts
                .iter()
                .map(|(_, p)| PromptMeta {
                    domain_id: p.domain_id.clone(),
                    created_at_stage: p.created_at_stage,
                })
                .collect(),
            finals: finals.clone(),
            rng,
            domains_seen: domains_seen.to_vec(),
        };
        let header_bytes = serde_json::to_vec(&header).map_err(|e| ck(e.to_string()))?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;

        let mut tensors: Vec<(String, Tensor<T>)> = model
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (d, p) in prompts.iter() {
            tensors.push((format!("{PROMPT_PREFIX}{d}"), p.vector.clone()));
        }
        tensors.sort_by(|a, b| a.0.cmp(&b.0));
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &tensors {
            write_str(&mut w, name)?;
            let shape = t.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in &shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let data = t.to_vec();
            w.write_all(&(data.len() as u64).to_le_bytes())?;
            for v in data {
                let f: f32 = v.to_f32().ok_or_else(|| ck("non-representable value"))?;
                w.write_all(&f.to_le_bytes())?;
            }
        }

        let entries = memory.entries();
        w.write_all(&(entries.len() as u32).to_le_bytes())?;
        for (domain, chunks) in entries {
            write_str(&mut w, domain)?;
            w.write_all(&(chunks.len() as u32).to_le_bytes())?;
            let chunk_len = chunks.first().map(|c| c.len()).unwrap_or(0);
            w.write_all(&(chunk_len as u32).to_le_bytes())?;
            for c in chunks {
                if c.len() != chunk_len {
                    return Err(ck(format!("ragged memory chunks for {domain}")));
                }
                w.write_all(c)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Bundle<T>> {
    let file = std::fs::File::open(path)
        .map_err(|e| ck(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ck(format!("bad magic in {}", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(ck(format!("unsupported format version {version}")));
    }
    let header_len = read_u64(&mut r)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| ck(format!("header: {e}")))?;

    let n_tensors = read_u32(&mut r)? as usize;
    let mut model_params: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    let mut prompt_vectors: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    for _ in 0..n_tensors {
        let name = read_str(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let len = read_u64(&mut r)? as usize;
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            let f = f32::from_le_bytes(buf);
            data.push(<T as FromPrimitive>::from_f32(f).ok_or_else(|| ck("value conversion"))?);
        }
        let tensor = Tensor::from_vec(&shape, data)?.traced();
        if let Some(domain) = name.strip_prefix(PROMPT_PREFIX) {
            prompt_vectors.insert(domain.to_string(), tensor);
        } else {
            model_params.insert(name, tensor);
        }
    }

    let n_domains = read_u32(&mut r)? as usize;
    let mut entries: BTreeMap<String, Vec<Vec<u8>>> = BTreeMap::new();
    for _ in 0..n_domains {
        let domain = read_str(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let chunk_len = read_u32(&mut r)? as usize;
        let mut chunks = Vec::with_capacity(count);
        for _ in 0..count {
            let mut c = vec![0u8; chunk_len];
            r.read_exact(&mut c)?;
            chunks.push(c);
        }
        entries.insert(domain, chunks);
    }

    let model = TransformerLM::from_parts(header.config, model_params, header.ledger)?;
    let mut prompt_map = BTreeMap::new();
    for meta in header.prompts {
        let vector = prompt_vectors
            .remove(&meta.domain_id)
            .ok_or_else(|| ck(format!("prompt tensor missing for {}", meta.domain_id)))?;
        prompt_map.insert(
            meta.domain_id.clone(),
            DomainPrompt {
                domain_id: meta.domain_id,
                vector,
                created_at_stage: meta.created_at_stage,
            },
        );
    }
    if !prompt_vectors.is_empty() {
        return Err(ck("prompt tensors without inventory entries"));
    }
    Ok(Bundle {
        model,
        prompts: PromptStore::from_prompts(prompt_map),
        finals: header.finals,
        memory: MemoryStore::from_entries(entries),
        rng: header.rng,
        domains_seen: header.domains_seen,
    })
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| ck(format!("utf8: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
