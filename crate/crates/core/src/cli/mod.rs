//! Command-line front end: configuration, dataset plumbing and one function
//! per subcommand. Every command writes its effective configuration next to
//! the artifacts it produces.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, RunConfig};

use crate::data::synth::{generate as synth_generate, write_dataset};
use crate::data::{load_dataset, ClipRecord, Splits};
use crate::error::{Error, Result};
use crate::metrics::{cider_corpus, corpus_bleu};
use crate::model::{checkpoint, Transformer};
use crate::tensor::no_grad;
use crate::tokenizer::{load_embedding_matrix, normalize_words, Vocabulary};
use crate::train::{train_loop, write_metric_log, Example, MetricRow, Objective, METRIC_LOG_HEADER};

#[derive(Debug, Parser)]
#[command(name = "fpevtt", version, about = "Audio-visual captioning transformer")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a word vocabulary from the training captions.
    BuildVocab {
        /// Output file; defaults to `data.vocab`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-entropy training into `data.out_dir`.
    Train,
    /// Self-critical fine-tuning of `data.checkpoint` into `data.out_dir`.
    FinetuneScst,
    /// Greedy captions for `data.split` as JSON lines.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus BLEU-1..4 and CIDEr-D of generated captions.
    Evaluate {
        /// Output of `generate`; decoded from `data.checkpoint` when absent.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic audio-visual ordering dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configuration of a matrix file and collect the best
    /// validation rows into one CSV.
    Ablate {
        /// Lines of `name key=value ...` applied on top of the base config.
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCaption {
    pub video_id: String,
    pub caption: String,
}

/// Resolves the configuration and runs the command.
pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    match &cli.command {
        Command::BuildVocab { out } => cmd_build_vocab(&cfg, out.as_deref()),
        Command::Train => cmd_train(&cfg).map(|_| ()),
        Command::FinetuneScst => cmd_finetune_scst(&cfg).map(|_| ()),
        Command::Generate { out } => cmd_generate(&cfg, out),
        Command::Evaluate { candidates, out } => cmd_evaluate(&cfg, candidates.as_deref(), out.as_deref()),
        Command::Synth { out } => cmd_synth(&cfg, out),
        Command::Ablate { matrix, out } => cmd_ablate(&cfg, matrix, out),
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is not set")))
}

fn sibling_config(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".config");
    artifact.with_file_name(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_clips(cfg: &RunConfig, vision_dim: Option<usize>) -> Result<Vec<ClipRecord>> {
    load_dataset(required(&cfg.data.manifest, "data.manifest")?, vision_dim)
}

fn load_splits(cfg: &RunConfig) -> Result<Option<Splits>> {
    cfg.data.splits.as_deref().map(Splits::load).transpose()
}

fn split_ids<'a>(splits: &'a Splits, name: &str) -> &'a [String] {
    match name {
        "train" => &splits.train,
        "test" => &splits.test,
        _ => &splits.val,
    }
}

/// Records of `name`, or every record when no split file is configured.
fn clips_of<'a>(clips: &'a [ClipRecord], splits: Option<&Splits>, name: &str) -> Result<Vec<&'a ClipRecord>> {
    match splits {
        Some(s) => Splits::select(clips, split_ids(s, name)),
        None => Ok(clips.iter().collect()),
    }
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    Vocabulary::load(required(&cfg.data.vocab, "data.vocab")?, cfg.data.vocab_kind)
}

fn to_examples(clips: &[&ClipRecord], vocab: &Vocabulary, cfg: &RunConfig, max_len: usize) -> Vec<Example> {
    clips
        .iter()
        .flat_map(|c| Example::from_clip(c, vocab, max_len, cfg.data.use_audio))
        .collect()
}

fn load_checkpoint(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Transformer> {
    let path = required(&cfg.data.checkpoint, "data.checkpoint")?;
    let (model, _) = checkpoint::load(path)?;
    if model.cfg.vocab_size != vocab.len() {
        return Err(Error::data(
            path.display().to_string(),
            format!("checkpoint vocabulary has {} tokens, vocabulary file {}", model.cfg.vocab_size, vocab.len()),
        ));
    }
    Ok(model)
}

pub fn cmd_build_vocab(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let out = match out {
        Some(p) => p,
        None => required(&cfg.data.vocab, "data.vocab")?,
    };
    let clips = load_clips(cfg, None)?;
    let splits = load_splits(cfg)?;
    let corpus: Vec<&str> = clips_of(&clips, splits.as_ref(), "train")?
        .iter()
        .flat_map(|c| c.captions.iter().map(String::as_str))
        .collect();
    let vocab = Vocabulary::build_default(&corpus, cfg.data.vocab_cap)?;
    vocab.save(out)?;
    cfg.write(&sibling_config(out))?;
    eprintln!(
        "vocabulary: {} tokens written to {}; unknown-word rate {:.4} over {} captions",
        vocab.len(),
        out.display(),
        vocab.unk_rate(&corpus),
        corpus.len()
    );
    Ok(())
}

/// Artifacts of a training command.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Log row of the epoch whose parameters were kept.
    pub best: MetricRow,
}

fn train_into_dir(cfg: &RunConfig, model: &Transformer) -> Result<TrainArtifacts> {
    let vocab = load_vocab(cfg)?;
    let clips = load_clips(cfg, Some(model.cfg.d_vision))?;
    let splits = load_splits(cfg)?.ok_or_else(|| Error::Config("data.splits is not set".into()))?;
    let train = to_examples(&Splits::select(&clips, &splits.train)?, &vocab, cfg, model.cfg.max_len);
    let val = to_examples(&Splits::select(&clips, &splits.val)?, &vocab, cfg, model.cfg.max_len);
    let mut run = cfg.train.clone();
    run.seed = cfg.seed;
    let outcome = train_loop(model, &run, &train, &val, &vocab)?;

    let dir = cfg.data.out_dir.clone();
    create_dir(&dir)?;
    let mut effective = cfg.clone();
    effective.model = model.cfg.clone();
    effective.write(&dir.join("config.txt"))?;
    let ckpt = dir.join("checkpoint.fpec");
    checkpoint::save(&ckpt, model, cfg.seed)?;
    let metrics = dir.join("metrics.csv");
    write_metric_log(&metrics, &outcome.log)?;
    let best = outcome
        .log
        .iter()
        .find(|r| r.epoch == outcome.best_epoch)
        .cloned()
        .ok_or_else(|| Error::Numeric("training produced no log rows".into()))?;
    eprintln!(
        "{} epochs, best epoch {} (val CIDEr-D {:.4}); wrote {}",
        outcome.log.len(),
        best.epoch,
        best.val_cider,
        dir.display()
    );
    Ok(TrainArtifacts {
        dir,
        checkpoint: ckpt,
        metrics,
        best,
    })
}

fn apply_embeddings(cfg: &RunConfig, model: &mut Transformer, vocab: &Vocabulary) -> Result<()> {
    if let Some(path) = &cfg.data.embeddings {
        let emb = load_embedding_matrix(vocab, path, model.cfg.d_model, cfg.data.freeze_embeddings)?;
        model.params.set_word_embedding(emb)?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    if cfg.train.objective != Objective::Xe {
        return Err(Error::Config("train runs the xe objective; use finetune-scst".into()));
    }
    let vocab = load_vocab(cfg)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    let mut model = Transformer::new(model_cfg, cfg.seed)?;
    apply_embeddings(cfg, &mut model, &vocab)?;
    train_into_dir(cfg, &model)
}

pub fn cmd_finetune_scst(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let mut cfg = cfg.clone();
    cfg.train.objective = Objective::Scst;
    cfg.validate()?;
    let vocab = load_vocab(&cfg)?;
    let model = load_checkpoint(&cfg, &vocab)?;
    if cfg.data.freeze_embeddings {
        model.params.word_emb.set_requires_grad(false);
    }
    train_into_dir(&cfg, &model)
}

fn decode_split(cfg: &RunConfig, model: &Transformer, clips: &[&ClipRecord], vocab: &Vocabulary) -> Result<Vec<GeneratedCaption>> {
    clips
        .iter()
        .map(|c| {
            let audio = cfg.data.use_audio.then_some(&c.audio);
            let seq = no_grad(|| -> Result<_> {
                let z = model.encode(&c.vision, audio, None)?;
                model.greedy_decode(&z, cfg.train.max_decode_len)
            })?;
            Ok(GeneratedCaption {
                video_id: c.video_id.clone(),
                caption: vocab.detokenize(&seq),
            })
        })
        .collect()
}

fn generate_captions(cfg: &RunConfig) -> Result<(Vec<GeneratedCaption>, Vec<ClipRecord>)> {
    let vocab = load_vocab(cfg)?;
    let model = load_checkpoint(cfg, &vocab)?;
    let mut checked = cfg.clone();
    checked.model = model.cfg.clone();
    checked.validate()?;
    let clips = load_clips(cfg, Some(model.cfg.d_vision))?;
    let splits = load_splits(cfg)?;
    let chosen = clips_of(&clips, splits.as_ref(), &cfg.data.split)?;
    let captions = decode_split(cfg, &model, &chosen, &vocab)?;
    Ok((captions, clips))
}

pub fn write_captions(path: &Path, captions: &[GeneratedCaption]) -> Result<()> {
    let mut text = String::new();
    for c in captions {
        text.push_str(&serde_json::to_string(c).expect("caption serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_captions(path: &Path) -> Result<Vec<GeneratedCaption>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::data(format!("{}:{}", path.display(), i + 1), e.to_string()))
        })
        .collect()
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (captions, _) = generate_captions(cfg)?;
    write_captions(out, &captions)?;
    cfg.write(&sibling_config(out))?;
    eprintln!("{} captions written to {}", captions.len(), out.display());
    Ok(())
}

/// Scores keyed as the usual caption-evaluation report. Metrics this crate
/// does not compute are reported as `null`.
pub fn score_captions(captions: &[GeneratedCaption], clips: &[ClipRecord]) -> Result<serde_json::Value> {
    let by_id: BTreeMap<&str, &ClipRecord> = clips.iter().map(|c| (c.video_id.as_str(), c)).collect();
    let mut cands = Vec::with_capacity(captions.len());
    let mut refs = Vec::with_capacity(captions.len());
    for c in captions {
        let clip = by_id
            .get(c.video_id.as_str())
            .ok_or_else(|| Error::data("candidates", format!("video_id {} is not in the manifest", c.video_id)))?;
        cands.push(normalize_words(&c.caption));
        refs.push(clip.captions.iter().map(|r| normalize_words(r)).collect::<Vec<_>>());
    }
    if cands.is_empty() {
        return Err(Error::data("candidates", "nothing to evaluate"));
    }
    let bleu = corpus_bleu(&cands, &refs)?;
    let cider = cider_corpus(&cands, &refs)?;
    if !cider.empty_candidates.is_empty() {
        eprintln!("warning: {} empty candidate captions scored 0", cider.empty_candidates.len());
    }
    Ok(serde_json::json!({
        "BLEU-1": bleu[0],
        "BLEU-2": bleu[1],
        "BLEU-3": bleu[2],
        "BLEU-4": bleu[3],
        "METEOR": null,
        "ROUGE-L": null,
        "CIDEr": cider.mean(),
    }))
}

pub fn cmd_evaluate(cfg: &RunConfig, candidates: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let (captions, clips) = match candidates {
        Some(path) => (read_captions(path)?, load_clips(cfg, None)?),
        None => generate_captions(cfg)?,
    };
    let report = score_captions(&captions, &clips)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(out) = out {
        fs::write(out, text + "\n").map_err(|e| Error::io(out, e))?;
        cfg.write(&sibling_config(out))?;
    }
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let clips = synth_generate(cfg.seed, cfg.data.synth_clips, &cfg.data.synth)?;
    write_dataset(out, &clips, &cfg.data.synth)?;
    cfg.write(&out.join("config.txt"))?;
    eprintln!("{} synthetic clips written to {}", clips.len(), out.display());
    Ok(())
}

/// One matrix line: a name followed by `key=value` overrides.
pub fn parse_matrix(text: &str) -> Result<Vec<(String, Vec<(String, String)>)>> {
    let mut out: Vec<(String, Vec<(String, String)>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts.next().expect("nonempty line").to_string();
        if name.contains('=') || name.contains('/') {
            return Err(Error::Config(format!("matrix line {}: bad config name {name:?}", i + 1)));
        }
        if out.iter().any(|(n, _)| *n == name) {
            return Err(Error::Config(format!("matrix line {}: duplicate config name {name:?}", i + 1)));
        }
        let sets = parts
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Config(format!("matrix line {}: expected key=value, got {kv:?}", i + 1)))
            })
            .collect::<Result<_>>()?;
        out.push((name, sets));
    }
    if out.is_empty() {
        return Err(Error::Config("ablation matrix lists no configurations".into()));
    }
    Ok(out)
}

pub fn cmd_ablate(cfg: &RunConfig, matrix: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(matrix).map_err(|e| Error::io(matrix, e))?;
    let entries = parse_matrix(&text)?;
    // resolve every configuration before training any of them
    let mut runs = Vec::with_capacity(entries.len());
    for (name, sets) in entries {
        let mut c = cfg.clone();
        for (k, v) in &sets {
            c.set(k, v)?;
        }
        c.data.out_dir = cfg.data.out_dir.join(&name);
        c.validate()?;
        runs.push((name, c));
    }
    let mut csv = format!("config,{METRIC_LOG_HEADER}\n");
    for (name, c) in &runs {
        eprintln!("ablation {name}");
        let art = cmd_train(c)?;
        csv.push_str(&format!("{name},{}\n", art.best.csv()));
    }
    let mut f = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    f.write_all(csv.as_bytes()).map_err(|e| Error::io(out, e))?;
    cfg.write(&sibling_config(out))
}
