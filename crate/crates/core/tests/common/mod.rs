//! Shared test fixtures: synthetic byte-level domain corpora with distinct
//! statistics, plus experiment plumbing helpers.

#![allow(dead_code)]

use growlm::config::{
    DataSection, ExperimentConfig, Features, Mode, ModelSection, StageExpansionSection,
    StageSection, TrainingSection,
};
use growlm::data::{CorpusManifest, ManifestEntry};
use growlm::trainer::Schedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const DOMAINS: [&str; 5] = ["prose", "code", "tables", "dialogue", "markup"];

/// Deterministic synthetic corpus for one named domain.
///
/// Every domain mixes rigid template structure (learned quickly) with a
/// large zipf-sampled bank of domain words whose spellings must be
/// memorized, so small models saturate while larger ones keep improving;
/// byte distributions differ strongly across domains so forgetting and
/// prompting are measurable at desk scale.
pub fn synth_domain(domain: &str, n_bytes: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ growlm::data::hash_str(domain));
    let bank = WordBank::new(domain, &mut rng);
    let mut out = Vec::with_capacity(n_bytes + 64);
    while out.len() < n_bytes {
        let chunk = match domain {
            "prose" => {
                format!(
                    "the {} {} {} the {}. ",
                    bank.word(&mut rng),
                    bank.word(&mut rng),
                    bank.word(&mut rng),
                    bank.word(&mut rng)
                )
            }
            "code" => format!(
                "let {} = {}({}, {});\n",
                bank.word(&mut rng),
                bank.word(&mut rng),
                bank.word(&mut rng),
                rng.gen_range(0..100)
            ),
            "tables" => format!(
                "{},{},{},{}\n",
                bank.word(&mut rng),
                bank.word(&mut rng),
                rng.gen_range(0..10),
                bank.word(&mut rng)
            ),
            "dialogue" => format!(
                "A: {} {}?\nB: {} {}.\n",
                bank.word(&mut rng),
                bank.word(&mut rng),
                bank.word(&mut rng),
                bank.word(&mut rng)
            ),
            "markup" => {
                let tag = bank.short(&mut rng);
                format!(
                    "<{tag} id=\"{}\">{} {}</{tag}>\n",
                    bank.word(&mut rng),
                    bank.word(&mut rng),
                    bank.word(&mut rng)
                )
            }
            other => panic!("unknown synthetic domain {other}"),
        };
        out.extend_from_slice(chunk.as_bytes());
    }
    out.truncate(n_bytes);
    out
}

/// Domain-specific vocabulary with zipf-like usage: frequent words are easy,
/// the long tail demands model capacity.
struct WordBank {
    words: Vec<String>,
    short: Vec<String>,
}

impl WordBank {
    fn new(domain: &str, rng: &mut ChaCha8Rng) -> Self {
        let n = 4000;
        let alphabet: &[u8] = match domain {
            "prose" => b"aeioubcdfglmnprst",
            "code" => b"xyzabcdefgh_",
            "tables" => b"0123456789",
            "dialogue" => b"aeiouhklmnwy",
            "markup" => b"abcdelmnoprt",
            _ => b"abcdefghij",
        };
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            let len = rng.gen_range(4..11);
            let w: String =
                (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char).collect();
            words.push(w);
        }
        let short = words.iter().take(40).map(|w| w.chars().take(3).collect()).collect();
        WordBank { words, short }
    }

    fn word<R: Rng>(&self, rng: &mut R) -> &str {
        &self.words[rng.gen_range(0..self.words.len())]
    }

    fn short<R: Rng>(&self, rng: &mut R) -> &str {
        &self.short[rng.gen_range(0..self.short.len())]
    }
}

/// Writes corpora files and a manifest under `dir`, returning the manifest
/// path.
pub fn write_corpora(dir: &Path, domains: &[&str], n_bytes: usize, seed: u64) -> PathBuf {
    let corpora_dir = dir.join("corpora");
    std::fs::create_dir_all(&corpora_dir).unwrap();
    let mut entries = Vec::new();
    for d in domains {
        let path = corpora_dir.join(format!("{d}.txt"));
        std::fs::write(&path, synth_domain(d, n_bytes, seed)).unwrap();
        entries.push(ManifestEntry { id: d.to_string(), paths: vec![path], token_budget: None });
    }
    let manifest = CorpusManifest { domains: entries };
    let manifest_path = dir.join("manifest.toml");
    std::fs::write(&manifest_path, toml::to_string(&manifest).unwrap()).unwrap();
    manifest_path
}

/// Desk-scale experiment skeleton: equal-step stages over the given domains.
pub struct StreamSpec {
    pub domains: Vec<String>,
    pub train_steps: u64,
    pub frw_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: Mode,
    pub grow: bool,
    /// Per-stage growth: (d_model delta, layer copies); empty entries mean
    /// no expansion at that stage. Defaults to two jumps: 32->48 (+1 layer)
    /// at stage 2 and 48->64 (+1 layer) at stage 4.
    pub grow_plan: Vec<(usize, usize)>,
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec {
            domains: DOMAINS.iter().map(|s| s.to_string()).collect(),
            train_steps: 600,
            frw_steps: 150,
            batch_size: 10,
            lr: 1.5e-3,
            seed: 1,
            mode: Mode::GptStyle,
            grow: true,
            grow_plan: vec![(0, 0), (16, 1), (0, 0), (16, 1), (0, 0)],
        }
    }
}

/// Builds a full experiment config in `dir` for the given preset.
pub fn experiment_config(
    dir: &Path,
    manifest: &Path,
    preset: &str,
    spec: &StreamSpec,
    per_stage_steps: Option<Vec<(u64, u64)>>, // (frw, train) override per stage
) -> ExperimentConfig {
    let features = Features::from_preset(preset).unwrap();
    let mut stages = Vec::new();
    for (i, d) in spec.domains.iter().enumerate() {
        let (frw, train) = per_stage_steps
            .as_ref()
            .map(|v| v[i])
            .unwrap_or((if i == 0 { 0 } else { spec.frw_steps }, spec.train_steps));
        let (dm, copies) = spec.grow_plan.get(i).copied().unwrap_or((0, 0));
        let expansion = if i > 0
            && spec.grow
            && (features.width_expansion || features.depth_expansion)
            && (dm > 0 || copies > 0)
        {
            Some(StageExpansionSection {
                d_model_delta: dm,
                n_heads_delta: dm / 8,
                d_ffn_delta: dm * 4,
                depth_copies: copies,
                noise_scale: 1e-3,
                ..Default::default()
            })
        } else {
            None
        };
        stages.push(StageSection {
            domain: d.clone(),
            train_steps: train,
            frw_steps: frw,
            lr: spec.lr,
            schedule: match spec.mode {
                Mode::BertStyle => Schedule::LinearDecay,
                Mode::GptStyle => Schedule::InverseSqrt,
            },
            warmup_ratio: 0.08,
            batch_size: spec.batch_size,
            replay_ratio: [9, 1],
            expansion,
        });
    }
    ExperimentConfig {
        manifest: manifest.to_path_buf(),
        output_dir: dir.join(format!("run-{preset}-{}", spec.seed)),
        seed: spec.seed,
        mode: spec.mode,
        preset: Some(preset.to_string()),
        features: None,
        model: ModelSection {
            n_layers: 2,
            d_model: 32,
            n_heads: 4,
            d_head: 8,
            d_ffn: 128,
            max_seq_len: 32,
        },
        data: DataSection {
            val_fraction: 0.05,
            memory_fraction: 0.01,
            memory_tokens: None,
            eval_batch: 16,
            max_eval_chunks: 32,
        },
        training: TrainingSection::default(),
        stages,
    }
}

/// Loads the metrics stream a finished run wrote.
pub fn read_metrics(run_dir: &Path) -> Vec<growlm::metrics::MetricsRecord> {
    let text = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
