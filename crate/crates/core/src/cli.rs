//! Command-line surface: binds configs, corpora and checkpoints to the
//! engine. One experiment per process, guarded by a lock file in the output
//! directory; interrupted streams resume from the last completed stage.

use crate::checkpoint::{self, Bundle};
use crate::config::{ExperimentConfig, Features};
use crate::data::{CorpusManifest, DomainCorpus, IngestConfig};
use crate::error::{Error, Result};
use crate::expansion::{self, ExpansionPlan};
use crate::metrics::{self, MetricsRecord};
use crate::model::TransformerLM;
use crate::prompts;
use crate::trainer::{check_equal_budget, Schedule, Trainer, TrainerOptions};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

const MODEL_SEED_STREAM: u64 = 0x4D4F44;

#[derive(Parser)]
#[command(name = "growlm", version, about = "Lifelong byte-level LM pre-training with model growth")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run every stage of an experiment config, resuming after interruption.
    TrainStream {
        config: PathBuf,
        /// Discard previous state in the output directory.
        #[arg(long)]
        fresh: bool,
    },
    /// Grow a checkpointed model per an expansion plan and verify drift.
    Expand {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Probe batches for the preservation verifier.
        #[arg(long, default_value_t = 8)]
        probes: usize,
        #[arg(long)]
        probe_seed: Option<u64>,
        /// JSON-lines verifier report (defaults next to `out`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Function-recovering warmup on the checkpoint's replay memory.
    Frw {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        lr: f64,
        #[arg(long, value_enum, default_value = "inverse-sqrt")]
        schedule: ScheduleArg,
        #[arg(long, default_value_t = 0.08)]
        warmup_ratio: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-domain perplexities, AP/AP+ and optional ARS against ancestors.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Domains to evaluate (default: all seen by the checkpoint).
        #[arg(long, value_delimiter = ',')]
        domains: Vec<String>,
        /// Ancestor checkpoints for representational similarity.
        #[arg(long, value_delimiter = ',')]
        ancestors: Vec<PathBuf>,
        #[arg(long, default_value_t = 512)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Right/wrong/no-prompt perplexity table.
    ProbePrompts {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention probabilities of one head as CSV.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        head: usize,
        /// Raw byte file used as the probe sequence.
        #[arg(long, conflicts_with_all = ["manifest", "domain"])]
        input: Option<PathBuf>,
        #[arg(long, requires = "domain")]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        domain: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run metrics into an AP/AP+-vs-budget table.
    Report {
        /// One or more run directories; multiple runs are budget-checked.
        #[arg(long = "run-dir", required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.02)]
        budget_tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ScheduleArg {
    LinearDecay,
    InverseSqrt,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Schedule {
        match s {
            ScheduleArg::LinearDecay => Schedule::LinearDecay,
            ScheduleArg::InverseSqrt => Schedule::InverseSqrt,
        }
    }
}

/// Exit codes: 0 ok, 2 config error, 3 numeric abort, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss { .. } => 3,
        Error::Io(_) | Error::Checkpoint(_) => 4,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainStream { config, fresh } => cmd_train_stream(&config, fresh),
        Command::Expand { checkpoint, plan, out, probes, probe_seed, report } => {
            cmd_expand(&checkpoint, &plan, &out, probes, probe_seed, report.as_deref())
        }
        Command::Frw { checkpoint, out, steps, lr, schedule, warmup_ratio, batch_size, seed } => {
            cmd_frw(&checkpoint, &out, steps, lr, schedule.into(), warmup_ratio, batch_size, seed)
        }
        Command::Eval { checkpoint, manifest, domains, ancestors, probes, seed, out } => {
            cmd_eval(&checkpoint, &manifest, &domains, &ancestors, probes, seed, out.as_deref())
        }
        Command::ProbePrompts { checkpoint, manifest, seed, out } => {
            cmd_probe_prompts(&checkpoint, &manifest, seed, &out)
        }
        Command::ExportAttention { checkpoint, layer, head, input, manifest, domain, out } => {
            cmd_export_attention(
                &checkpoint,
                layer,
                head,
                input.as_deref(),
                manifest.as_deref(),
                domain.as_deref(),
                &out,
            )
        }
        Command::Report { run_dirs, budget_tol, out } => {
            cmd_report(&run_dirs, budget_tol, out.as_deref())
        }
    }
}

// ---------------------------------------------------------------------------
// locking and stream state
// ---------------------------------------------------------------------------

/// Lock file holding the owner PID; stale locks from dead processes are
/// reclaimed.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        loop {
            match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(DirLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = std::fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if Path::new(&format!("/proc/{pid}")).exists() => {
                            return Err(Error::InvalidConfig(format!(
                                "output directory {} is locked by running process {pid}",
                                dir.display()
                            )));
                        }
                        _ => {
                            let _ = std::fs::remove_file(&path);
                        }
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Progress marker updated after every completed stage.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct StreamState {
    completed: usize,
    budget_used: u64,
    total_steps: u64,
    total_wall_s: f64,
}

fn write_json_atomic<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(value).map_err(|e| Error::Data(e.to_string()))?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn stage_ckpt_path(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage_{stage:02}.ckpt"))
}

fn stage_metrics_path(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage_{stage:02}.metrics.json"))
}

// ---------------------------------------------------------------------------
// train-stream
// ---------------------------------------------------------------------------

fn ingest_all(
    config: &ExperimentConfig,
    manifest: &CorpusManifest,
) -> Result<BTreeMap<String, DomainCorpus>> {
    let ingest_cfg = IngestConfig {
        chunk_len: config.model.max_seq_len - 1,
        val_fraction: config.data.val_fraction,
        seed: config.seed,
    };
    let mut corpora = BTreeMap::new();
    for stage in &config.stages {
        let entry = manifest.entry(&stage.domain)?;
        let corpus = DomainCorpus::ingest(&entry.paths, &entry.id, entry.token_budget, &ingest_cfg)?;
        corpora.insert(stage.domain.clone(), corpus);
    }
    Ok(corpora)
}

fn trainer_options(config: &ExperimentConfig, features: Features) -> TrainerOptions {
    TrainerOptions {
        prompts_enabled: features.prompts,
        memory_budget_tokens: 0, // set per stage from the corpus
        eval_batch: config.data.eval_batch,
        max_eval_chunks: config.data.max_eval_chunks,
        grad_clip: config.training.grad_clip,
        adam: crate::trainer::AdamHyper {
            decay_prompts: config.training.decay_prompts,
            ..Default::default()
        },
        eval_seed: config.seed,
        global_seed: config.seed,
        output_dir: Some(config.output_dir.clone()),
    }
}

fn memory_budget(config: &ExperimentConfig, corpus: &DomainCorpus) -> usize {
    match config.data.memory_tokens {
        Some(t) => t,
        None => (corpus.train_token_count() as f64 * config.data.memory_fraction) as usize,
    }
}

pub fn cmd_train_stream(config_path: &Path, fresh: bool) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let features = config.effective_features()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let _lock = DirLock::acquire(&config.output_dir)?;

    if fresh {
        for entry in std::fs::read_dir(&config.output_dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.ends_with(".ckpt")
                || name.ends_with(".metrics.json")
                || name.ends_with(".log")
                || name == "state.json"
                || name == "metrics.jsonl"
            {
                let _ = std::fs::remove_file(&path);
            }
        }
    }

    let manifest = CorpusManifest::load(&config.manifest)?;
    let corpora = ingest_all(&config, &manifest)?;

    let state_path = config.output_dir.join("state.json");
    let mut state: StreamState = if !fresh && state_path.exists() {
        serde_json::from_slice(&std::fs::read(&state_path)?)
            .map_err(|e| Error::Data(format!("state.json: {e}")))?
    } else {
        StreamState::default()
    };

    let opts = trainer_options(&config, features);
    let mut trainer = if state.completed > 0 {
        let ckpt = stage_ckpt_path(&config.output_dir, state.completed);
        let bundle: Bundle<f32> = checkpoint::load(&ckpt)?;
        let mut t = Trainer::from_bundle(bundle, opts);
        t.budget_used = state.budget_used;
        t.total_steps = state.total_steps;
        t.total_wall_s = state.total_wall_s;
        for d in t.domains_seen.clone() {
            let corpus = corpora
                .get(&d)
                .ok_or_else(|| Error::Data(format!("resumed domain {d} missing from manifest")))?;
            t.register_validation(&d, corpus.validation().to_vec());
        }
        t
    } else {
        let model_cfg = config.model.to_config(config.mode);
        let model = TransformerLM::<f32>::new(
            model_cfg,
            crate::data::derive_seed(config.seed, MODEL_SEED_STREAM),
        )?;
        Trainer::new(model, opts)
    };

    for index in state.completed..config.stages.len() {
        let stage_no = index + 1;
        let stage = config.stage_config(index, trainer.model.ledger(), features)?;
        let corpus = &corpora[&stage.domain_id];
        trainer.opts.memory_budget_tokens = memory_budget(&config, corpus);

        let log_path = config.output_dir.join(format!("train_stage_{stage_no:02}.log"));
        let log_file = std::fs::File::create(&log_path)?;
        let mut log_writer = std::io::BufWriter::new(log_file);
        let report = trainer.run_stage(stage_no, &stage, corpus, &mut |entry| {
            if let Ok(line) = serde_json::to_string(entry) {
                let _ = writeln!(log_writer, "{line}");
                let _ = log_writer.flush();
            }
        })?;
        write_json_atomic(&stage_metrics_path(&config.output_dir, stage_no), &report.metrics)?;
        state = StreamState {
            completed: stage_no,
            budget_used: trainer.budget_used,
            total_steps: trainer.total_steps,
            total_wall_s: trainer.total_wall_s,
        };
        write_json_atomic(&state_path, &state)?;
        println!(
            "stage {stage_no} ({}): ap {:.4}{} ppl {:?}",
            stage.domain_id,
            report.metrics.ap,
            report
                .metrics
                .ap_plus
                .map(|v| format!(" ap+ {v:.4}"))
                .unwrap_or_default(),
            report.metrics.ppl
        );
    }

    // Assemble the JSON-lines metrics stream from the per-stage records.
    let mut lines = String::new();
    for stage_no in 1..=config.stages.len() {
        let rec = std::fs::read_to_string(stage_metrics_path(&config.output_dir, stage_no))?;
        let rec: MetricsRecord =
            serde_json::from_str(&rec).map_err(|e| Error::Data(e.to_string()))?;
        lines.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?);
        lines.push('\n');
    }
    std::fs::write(config.output_dir.join("metrics.jsonl"), lines)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// expand / frw
// ---------------------------------------------------------------------------

fn cmd_expand(
    ckpt: &Path,
    plan_path: &Path,
    out: &Path,
    probes: usize,
    probe_seed: Option<u64>,
    report: Option<&Path>,
) -> Result<()> {
    let bundle: Bundle<f32> = checkpoint::load(ckpt)?;
    let plan_text = std::fs::read_to_string(plan_path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", plan_path.display())))?;
    let plan: ExpansionPlan = toml::from_str(&plan_text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", plan_path.display())))?;
    let (grown, maps) = expansion::expand(&bundle.model, &plan)?;
    let mut prompts = bundle.prompts.clone();
    prompts.expand_all(&maps.d_model)?;

    let seq = (bundle.model.config().max_seq_len - 1).min(32);
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed.unwrap_or(plan.seed));
    let batches: Vec<_> =
        (0..probes.max(1)).map(|_| expansion::random_probe_batch(8, seq, &mut rng)).collect();
    let records = expansion::verify_preservation(&bundle.model, &grown, &batches)?;
    let (max_diff, mean_kl) = expansion::summarize_preservation(&records);

    let report_path = report
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("verify.jsonl"));
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(&report_path, text)?;

    checkpoint::save(out, &grown, &prompts, &bundle.finals, &bundle.memory, bundle.rng, &bundle.domains_seen)?;
    println!(
        "expanded {} -> {}: max |logit diff| {max_diff:.3e}, mean token KL {mean_kl:.3e} ({} probe batches)",
        ckpt.display(),
        out.display(),
        records.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_frw(
    ckpt: &Path,
    out: &Path,
    steps: u64,
    lr: f64,
    schedule: Schedule,
    warmup_ratio: f64,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    let bundle: Bundle<f32> = checkpoint::load(ckpt)?;
    let prompts_enabled = !bundle.prompts.is_empty();
    let rng_state = bundle.rng;
    let mut trainer = Trainer::from_bundle(
        bundle,
        TrainerOptions { prompts_enabled, ..Default::default() },
    );
    trainer.frw(steps, lr, schedule, warmup_ratio, batch_size, seed, &mut |entry| {
        if entry.step % 50 == 0 || entry.step == steps {
            println!("frw step {} loss {:.4}", entry.step, entry.loss);
        }
    })?;
    checkpoint::save(
        out,
        &trainer.model,
        &trainer.prompts,
        &trainer.finals,
        &trainer.memory,
        rng_state,
        &trainer.domains_seen,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval / probe-prompts / export-attention / report
// ---------------------------------------------------------------------------

fn ingest_for_checkpoint(
    manifest_path: &Path,
    model_cfg: &crate::model::ModelConfig,
    seed: u64,
    domains: &[String],
) -> Result<BTreeMap<String, DomainCorpus>> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let ingest_cfg = IngestConfig {
        chunk_len: model_cfg.max_seq_len - 1,
        val_fraction: default_val_fraction_for_eval(),
        seed,
    };
    let mut corpora = BTreeMap::new();
    for d in domains {
        let entry = manifest.entry(d)?;
        corpora.insert(
            d.clone(),
            DomainCorpus::ingest(&entry.paths, &entry.id, entry.token_budget, &ingest_cfg)?,
        );
    }
    Ok(corpora)
}

fn default_val_fraction_for_eval() -> f64 {
    0.05
}

#[derive(Serialize)]
struct EvalOutput {
    metrics: MetricsRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    ars: Option<f64>,
}

fn cmd_eval(
    ckpt: &Path,
    manifest: &Path,
    domains: &[String],
    ancestors: &[PathBuf],
    probes: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let bundle: Bundle<f32> = checkpoint::load(ckpt)?;
    let eval_domains: Vec<String> =
        if domains.is_empty() { bundle.domains_seen.clone() } else { domains.to_vec() };
    if eval_domains.is_empty() {
        return Err(Error::InvalidConfig("checkpoint has no seen domains; pass --domains".into()));
    }
    let corpora =
        ingest_for_checkpoint(manifest, bundle.model.config(), bundle.rng.global_seed, &eval_domains)?;
    let prompts_enabled = !bundle.prompts.is_empty();
    let global_seed = bundle.rng.global_seed;
    let mut trainer = Trainer::from_bundle(
        bundle,
        TrainerOptions {
            prompts_enabled,
            eval_seed: global_seed,
            global_seed,
            ..Default::default()
        },
    );
    trainer.domains_seen = eval_domains.clone();
    for (d, c) in &corpora {
        trainer.register_validation(d, c.validation().to_vec());
    }
    let metrics = trainer.evaluate(eval_domains.len(), eval_domains.last().unwrap())?;

    let ars = if ancestors.is_empty() {
        None
    } else {
        let probe_domain = eval_domains.last().unwrap();
        let val = corpora[probe_domain].validation();
        let n = val.len().min(trainer.opts.max_eval_chunks);
        let probe_set = metrics::sample_probes(
            &val[..n],
            probes,
            trainer.model.config().objective,
            seed,
        )?;
        let loaded: Result<Vec<Bundle<f32>>> = ancestors.iter().map(|p| checkpoint::load(p)).collect();
        let loaded = loaded?;
        let refs: Vec<&TransformerLM<f32>> = loaded.iter().map(|b| &b.model).collect();
        Some(metrics::ars(&refs, &trainer.model, &probe_set)?)
    };

    let output = EvalOutput { metrics, ars };
    let line = serde_json::to_string(&output).map_err(|e| Error::Data(e.to_string()))?;
    if let Some(path) = out {
        std::fs::write(path, format!("{line}\n"))?;
    }
    println!("{line}");
    Ok(())
}

fn cmd_probe_prompts(ckpt: &Path, manifest: &Path, seed: u64, out: &Path) -> Result<()> {
    let bundle: Bundle<f32> = checkpoint::load(ckpt)?;
    let prompted: Vec<String> = bundle.prompts.domains().iter().map(|s| s.to_string()).collect();
    if prompted.len() < 2 {
        return Err(Error::Prompt(format!(
            "prompt probe needs at least 2 prompted domains, checkpoint has {}",
            prompted.len()
        )));
    }
    let corpora =
        ingest_for_checkpoint(manifest, bundle.model.config(), bundle.rng.global_seed, &prompted)?;
    let mut slices = BTreeMap::new();
    for (d, c) in &corpora {
        let val = c.validation();
        let n = val.len().min(48);
        slices.insert(d.clone(), val[..n].to_vec());
    }
    let rows = prompts::probe(&bundle.model, &bundle.prompts, &slices, seed, 16)?;
    std::fs::write(out, prompts::probe_to_csv(&rows))?;
    println!("wrote {} probe rows to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_export_attention(
    ckpt: &Path,
    layer: usize,
    head: usize,
    input: Option<&Path>,
    manifest: Option<&Path>,
    domain: Option<&str>,
    out: &Path,
) -> Result<()> {
    let bundle: Bundle<f32> = checkpoint::load(ckpt)?;
    let cfg = bundle.model.config();
    let bytes: Vec<u8> = match (input, manifest, domain) {
        (Some(path), _, _) => {
            let raw = std::fs::read(path)?;
            if raw.is_empty() {
                return Err(Error::Data(format!("{} is empty", path.display())));
            }
            raw.into_iter().take(cfg.max_seq_len).collect()
        }
        (None, Some(m), Some(d)) => {
            let corpora =
                ingest_for_checkpoint(m, cfg, bundle.rng.global_seed, &[d.to_string()])?;
            corpora[d].validation()[0].clone()
        }
        _ => {
            return Err(Error::InvalidConfig(
                "pass --input FILE or --manifest M --domain D".into(),
            ))
        }
    };
    let tokens: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
    let batch = crate::model::TokenBatch::new(1, tokens.len(), tokens)?;
    let matrix = metrics::export_attention(&bundle.model, &batch, layer, head)?;
    std::fs::write(out, metrics::attention_to_csv(&matrix))?;
    println!("wrote {}x{} attention matrix to {}", matrix.len(), matrix.len(), out.display());
    Ok(())
}

fn cmd_report(run_dirs: &[PathBuf], budget_tol: f64, out: Option<&Path>) -> Result<()> {
    let mut csv = String::from("run,stage,domain,step,budget,wall_time_s,ap,ap_plus\n");
    let mut final_budgets = Vec::new();
    for dir in run_dirs {
        let label = dir.file_name().and_then(|n| n.to_str()).unwrap_or("run");
        let path = dir.join("metrics.jsonl");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let mut last_budget = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: MetricsRecord =
                serde_json::from_str(line).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            rec.check_consistent()?;
            csv.push_str(&format!(
                "{label},{},{},{},{},{},{},{}\n",
                rec.stage,
                rec.domain,
                rec.step,
                rec.budget,
                rec.wall_time_s,
                rec.ap,
                rec.ap_plus.map(|v| v.to_string()).unwrap_or_default()
            ));
            last_budget = rec.budget;
        }
        final_budgets.push(last_budget);
    }
    if run_dirs.len() > 1 {
        check_equal_budget(&final_budgets, budget_tol)?;
    }
    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
