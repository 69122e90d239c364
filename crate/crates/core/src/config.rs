//! Experiment configuration: manifest path, ordered stages, global seeds,
//! feature toggles and their named presets. Unknown keys are rejected so a
//! typo cannot silently flip an ablation.

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::expansion::{ExpansionPlan, LayerCopy, Placement};
use crate::model::{LayerCopyLedger, ModelConfig, Objective, VOCAB_SIZE};
use crate::trainer::{Schedule, StageConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    BertStyle,
    GptStyle,
}

impl Mode {
    pub fn objective(self) -> Objective {
        match self {
            Mode::BertStyle => Objective::MaskedLm,
            Mode::GptStyle => Objective::CausalLm,
        }
    }
}

/// Strategy toggles. The named presets are fixed combinations; ablation rows
/// toggle individual switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Features {
    pub width_expansion: bool,
    pub depth_expansion: bool,
    pub frw: bool,
    pub noise: bool,
    pub prompts: bool,
    pub replay: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features::elle()
    }
}

impl Features {
    /// Plain sequential training.
    pub fn naive() -> Self {
        Features {
            width_expansion: false,
            depth_expansion: false,
            frw: false,
            noise: false,
            prompts: false,
            replay: false,
        }
    }

    /// Experience replay only.
    pub fn er() -> Self {
        Features { replay: true, ..Features::naive() }
    }

    /// Everything on: expansion (both axes), warmup, noise, prompts, replay.
    pub fn elle() -> Self {
        Features {
            width_expansion: true,
            depth_expansion: true,
            frw: true,
            noise: true,
            prompts: true,
            replay: true,
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "naive" => Ok(Self::naive()),
            "er" => Ok(Self::er()),
            "elle" => Ok(Self::elle()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?} (expected naive, er or elle)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
}

impl ModelSection {
    pub fn to_config(&self, mode: Mode) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_head: self.d_head,
            d_ffn: self.d_ffn,
            vocab_size: VOCAB_SIZE,
            max_seq_len: self.max_seq_len,
            objective: mode.objective(),
        }
    }
}

fn default_val_fraction() -> f64 {
    0.05
}
fn default_memory_fraction() -> f64 {
    0.01
}
fn default_eval_batch() -> usize {
    16
}
fn default_max_eval_chunks() -> usize {
    48
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub val_fraction: f64,
    /// Replay budget per domain as a fraction of its training tokens;
    /// `memory_tokens` overrides it when set.
    pub memory_fraction: f64,
    pub memory_tokens: Option<usize>,
    pub eval_batch: usize,
    pub max_eval_chunks: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            val_fraction: default_val_fraction(),
            memory_fraction: default_memory_fraction(),
            memory_tokens: None,
            eval_batch: default_eval_batch(),
            max_eval_chunks: default_max_eval_chunks(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub grad_clip: f64,
    pub decay_prompts: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection { grad_clip: 1.0, decay_prompts: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageExpansionSection {
    pub d_model_delta: usize,
    pub n_heads_delta: usize,
    pub d_ffn_delta: usize,
    /// Number of layers to copy; least-copied layers are chosen unless
    /// `layers` pins them explicitly.
    pub depth_copies: usize,
    pub layers: Option<Vec<usize>>,
    pub placement: Placement,
    pub noise_scale: f64,
    pub allow_nonminimal_depth: bool,
}

impl Default for StageExpansionSection {
    fn default() -> Self {
        StageExpansionSection {
            d_model_delta: 0,
            n_heads_delta: 0,
            d_ffn_delta: 0,
            depth_copies: 0,
            layers: None,
            placement: Placement::After,
            noise_scale: 1e-3,
            allow_nonminimal_depth: false,
        }
    }
}

fn default_replay_ratio() -> [u32; 2] {
    [9, 1]
}
fn default_warmup_ratio() -> f64 {
    0.08
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub domain: String,
    pub train_steps: u64,
    #[serde(default)]
    pub frw_steps: u64,
    pub lr: f64,
    pub schedule: Schedule,
    #[serde(default = "default_warmup_ratio")]
    pub warmup_ratio: f64,
    pub batch_size: usize,
    #[serde(default = "default_replay_ratio")]
    pub replay_ratio: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<StageExpansionSection>,
}

/// Whole-experiment description, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Features>,
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub training: TrainingSection,
    pub stages: Vec<StageSection>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// The effective toggle set: a named preset, an explicit feature table,
    /// or the full preset by default. Giving both is rejected.
    pub fn effective_features(&self) -> Result<Features> {
        match (&self.preset, &self.features) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "give either `preset` or `features`, not both".into(),
            )),
            (Some(name), None) => Features::from_preset(name),
            (None, Some(f)) => Ok(*f),
            (None, None) => Ok(Features::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.to_config(self.mode).validate()?;
        let features = self.effective_features()?;
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("no stages configured".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, s) in self.stages.iter().enumerate() {
            if !seen.insert(&s.domain) {
                return Err(Error::InvalidConfig(format!("domain {} staged twice", s.domain)));
            }
            let stage = self.stage_config_shape(i, s, features);
            stage.validate(i == 0)?;
            let parts = (stage.replay_ratio.0 + stage.replay_ratio.1) as usize;
            if parts == 0 || stage.batch_size % parts != 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {}: batch size {} not divisible by replay parts {}:{}",
                    s.domain, stage.batch_size, stage.replay_ratio.0, stage.replay_ratio.1
                )));
            }
            if let Some(e) = &s.expansion {
                if features.width_expansion
                    && e.d_model_delta != e.n_heads_delta * self.model.d_head
                {
                    return Err(Error::InvalidConfig(format!(
                        "stage {}: d_model delta {} requires n_heads delta {} at d_head {}",
                        s.domain,
                        e.d_model_delta,
                        e.d_model_delta / self.model.d_head.max(1),
                        self.model.d_head
                    )));
                }
            }
        }
        if self.data.val_fraction <= 0.0 || self.data.val_fraction >= 1.0 {
            return Err(Error::InvalidConfig("val_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Stage config without the expansion plan (which needs the live ledger).
    fn stage_config_shape(&self, index: usize, s: &StageSection, features: Features) -> StageConfig {
        StageConfig {
            domain_id: s.domain.clone(),
            expansion: None,
            frw_steps: if features.frw && index > 0 { s.frw_steps } else { 0 },
            train_steps: s.train_steps,
            replay_ratio: if features.replay && index > 0 {
                (s.replay_ratio[0], s.replay_ratio[1])
            } else {
                (1, 0)
            },
            lr: s.lr,
            schedule: s.schedule,
            warmup_ratio: s.warmup_ratio,
            batch_size: s.batch_size,
            seed: derive_seed(self.seed, index as u64 + 1),
        }
    }

    /// Fully resolved stage config, honoring toggles and the current ledger.
    pub fn stage_config(
        &self,
        index: usize,
        ledger: &LayerCopyLedger,
        features: Features,
    ) -> Result<StageConfig> {
        let s = &self.stages[index];
        let mut stage = self.stage_config_shape(index, s, features);
        if index > 0 {
            if let Some(e) = &s.expansion {
                let (wd, wh, wf) = if features.width_expansion {
                    (e.d_model_delta, e.n_heads_delta, e.d_ffn_delta)
                } else {
                    (0, 0, 0)
                };
                let copies = if features.depth_expansion { e.depth_copies } else { 0 };
                let plan_seed = derive_seed(self.seed, 0x9000 + index as u64);
                let mut plan = match (&e.layers, copies) {
                    (_, 0) => ExpansionPlan {
                        d_model_delta: wd,
                        n_heads_delta: wh,
            d_ffn_delta: wf,
                        depth: Vec::new(),
                        noise_scale: 0.0,
                        seed: plan_seed,
                        allow_nonminimal_depth: e.allow_nonminimal_depth,
                    },
                    (Some(layers), _) => ExpansionPlan {
                        d_model_delta: wd,
                        n_heads_delta: wh,
                        d_ffn_delta: wf,
                        depth: layers
                            .iter()
                            .map(|&layer| LayerCopy { layer, placement: e.placement })
                            .collect(),
                        noise_scale: 0.0,
                        seed: plan_seed,
                        allow_nonminimal_depth: e.allow_nonminimal_depth,
                    },
                    (None, n) => {
                        let mut p = ExpansionPlan::auto(ledger, n, wd, wh, wf, 0.0, plan_seed);
                        p.allow_nonminimal_depth = e.allow_nonminimal_depth;
                        p
                    }
                };
                plan.noise_scale = if features.noise { e.noise_scale } else { 0.0 };
                if !plan.is_identity() {
                    stage.expansion = Some(plan);
                }
            }
        }
        Ok(stage)
    }
}
