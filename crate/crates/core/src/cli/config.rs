//! `key = value` run configuration with `model.`, `train.` and `data.`
//! sections. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::synth::SynthGrid;
use crate::error::{Error, Result};
use crate::metrics::RewardSpec;
use crate::model::{ModelConfig, PeMode};
use crate::tokenizer::VocabKind;
use crate::train::{Objective, ScheduleMode, TrainRunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub vocab_kind: VocabKind,
    pub vocab_cap: usize,
    pub embeddings: Option<PathBuf>,
    pub freeze_embeddings: bool,
    pub use_audio: bool,
    pub checkpoint: Option<PathBuf>,
    /// Output directory of training runs.
    pub out_dir: PathBuf,
    /// Split decoded by `generate` and scored by `evaluate`.
    pub split: String,
    pub synth_clips: usize,
    pub synth: SynthGrid,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            splits: None,
            vocab: None,
            vocab_kind: VocabKind::Default,
            vocab_cap: 12_000,
            embeddings: None,
            freeze_embeddings: false,
            use_audio: true,
            checkpoint: None,
            out_dir: PathBuf::from("run"),
            split: "val".into(),
            synth_clips: 2000,
            synth: SynthGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainRunConfig,
    pub data: DataConfig,
    pub seed: u64,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key} expects true or false, got {value:?}"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    let (lo, hi) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key} expects lo,hi, got {value:?}")))?;
    Ok((parse(key, lo.trim())?, parse(key, hi.trim())?))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Defaults, then the file at `path` (if any), then `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {o:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t, d) = (&mut self.model, &mut self.train, &mut self.data);
        match key {
            "seed" | "train.seed" => {
                self.seed = parse(key, value)?;
                t.seed = self.seed;
            }
            "model.d_model" => m.d_model = parse(key, value)?,
            "model.d_ff" => m.d_ff = parse(key, value)?,
            "model.n_layers_enc" => m.n_layers_enc = parse(key, value)?,
            "model.n_layers_dec" => m.n_layers_dec = parse(key, value)?,
            "model.n_heads" => m.n_heads = parse(key, value)?,
            "model.mem_slots" => m.mem_slots = parse(key, value)?,
            "model.vocab_size" => m.vocab_size = parse(key, value)?,
            "model.max_len" => m.max_len = parse(key, value)?,
            "model.pe_mode" => m.pe_mode = value.parse()?,
            "model.dropout_rate" => m.dropout_rate = parse(key, value)?,
            "model.d_vision" => m.d_vision = parse(key, value)?,
            "model.d_audio" => m.d_audio = parse(key, value)?,
            "model.max_vision_frames" => m.max_vision_frames = parse(key, value)?,
            "model.encoder_attention" => m.encoder_attention = value.parse()?,
            "train.objective" => {
                t.objective = match value {
                    "xe" => Objective::Xe,
                    "scst" => Objective::Scst,
                    _ => return Err(Error::Config(format!("unknown objective {value:?} (xe, scst)"))),
                }
            }
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.scst_batch_size" => t.scst_batch_size = parse(key, value)?,
            "train.patience" => t.patience = parse(key, value)?,
            "train.schedule" => t.schedule = value.parse::<ScheduleMode>()?,
            "train.warmup_steps" => t.warmup_steps = parse(key, value)?,
            "train.eta_max" => t.eta_max = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "train.eta_min" => t.eta_min = parse(key, value)?,
            "train.restarts" => t.restarts = parse_bool(key, value)?,
            "train.t0_epochs" => t.t0_epochs = parse(key, value)?,
            "train.constant_lr" => t.constant_lr = parse(key, value)?,
            "train.scst_lr" => t.scst_lr = parse(key, value)?,
            "train.lambda_cider" => t.reward.lambda_cider = parse(key, value)?,
            "train.lambda_bleu4" => t.reward.lambda_bleu4 = parse(key, value)?,
            "train.n_samples" => t.reward.n_samples = parse(key, value)?,
            "train.max_decode_len" => t.max_decode_len = parse(key, value)?,
            "data.manifest" => d.manifest = parse_path(value),
            "data.splits" => d.splits = parse_path(value),
            "data.vocab" => d.vocab = parse_path(value),
            "data.vocab_kind" => {
                d.vocab_kind = match value {
                    "default" => VocabKind::Default,
                    "wordpiece" => VocabKind::WordPiece,
                    _ => return Err(Error::Config(format!("unknown vocab_kind {value:?} (default, wordpiece)"))),
                }
            }
            "data.vocab_cap" => d.vocab_cap = parse(key, value)?,
            "data.embeddings" => d.embeddings = parse_path(value),
            "data.freeze_embeddings" => d.freeze_embeddings = parse_bool(key, value)?,
            "data.use_audio" => d.use_audio = parse_bool(key, value)?,
            "data.checkpoint" => d.checkpoint = parse_path(value),
            "data.out_dir" => d.out_dir = PathBuf::from(value),
            "data.split" => {
                if !["train", "val", "test"].contains(&value) {
                    return Err(Error::Config(format!("data.split must be train, val or test, got {value:?}")));
                }
                d.split = value.to_string();
            }
            "data.synth_clips" => d.synth_clips = parse(key, value)?,
            "data.synth_vision_dim" => d.synth.vision_dim = parse(key, value)?,
            "data.synth_duration_s" => d.synth.duration_s = parse_range(key, value)?,
            "data.synth_vision_fps" => d.synth.vision_fps = parse_range(key, value)?,
            "data.synth_audio_fps" => d.synth.audio_fps = parse_range(key, value)?,
            "data.synth_min_gap_s" => d.synth.min_gap_s = parse(key, value)?,
            "data.synth_noise" => d.synth.noise = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Checks that the combination of settings can run.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        RewardSpec::new(
            self.train.reward.lambda_cider,
            self.train.reward.lambda_bleu4,
            self.train.reward.n_samples,
        )?;
        if self.model.pe_mode == PeMode::Fpe && !self.data.use_audio {
            return Err(Error::Config(
                "pe_mode=fpe needs audio timestamp factors; set data.use_audio=true or pick another pe_mode".into(),
            ));
        }
        if self.data.freeze_embeddings && self.data.embeddings.is_none() {
            return Err(Error::Config("data.freeze_embeddings needs data.embeddings".into()));
        }
        Ok(())
    }

    /// The full effective configuration; feeding it back through
    /// [`RunConfig::apply_text`] reproduces `self`.
    pub fn to_text(&self) -> String {
        let (m, t, d) = (&self.model, &self.train, &self.data);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("model.d_model", m.d_model.to_string());
        kv("model.d_ff", m.d_ff.to_string());
        kv("model.n_layers_enc", m.n_layers_enc.to_string());
        kv("model.n_layers_dec", m.n_layers_dec.to_string());
        kv("model.n_heads", m.n_heads.to_string());
        kv("model.mem_slots", m.mem_slots.to_string());
        kv("model.vocab_size", m.vocab_size.to_string());
        kv("model.max_len", m.max_len.to_string());
        kv("model.pe_mode", m.pe_mode.to_string());
        kv("model.dropout_rate", m.dropout_rate.to_string());
        kv("model.d_vision", m.d_vision.to_string());
        kv("model.d_audio", m.d_audio.to_string());
        kv("model.max_vision_frames", m.max_vision_frames.to_string());
        kv("model.encoder_attention", m.encoder_attention.to_string());
        kv(
            "train.objective",
            match t.objective {
                Objective::Xe => "xe",
                Objective::Scst => "scst",
            }
            .into(),
        );
        kv("train.max_epochs", t.max_epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.scst_batch_size", t.scst_batch_size.to_string());
        kv("train.patience", t.patience.to_string());
        kv("train.schedule", t.schedule.to_string());
        kv("train.warmup_steps", t.warmup_steps.to_string());
        kv("train.eta_max", t.eta_max.map(|v| v.to_string()).unwrap_or_default());
        kv("train.eta_min", t.eta_min.to_string());
        kv("train.restarts", t.restarts.to_string());
        kv("train.t0_epochs", t.t0_epochs.to_string());
        kv("train.constant_lr", t.constant_lr.to_string());
        kv("train.scst_lr", t.scst_lr.to_string());
        kv("train.lambda_cider", t.reward.lambda_cider.to_string());
        kv("train.lambda_bleu4", t.reward.lambda_bleu4.to_string());
        kv("train.n_samples", t.reward.n_samples.to_string());
        kv("train.max_decode_len", t.max_decode_len.to_string());
        kv("data.manifest", show_path(&d.manifest));
        kv("data.splits", show_path(&d.splits));
        kv("data.vocab", show_path(&d.vocab));
        kv(
            "data.vocab_kind",
            match d.vocab_kind {
                VocabKind::Default => "default",
                VocabKind::WordPiece => "wordpiece",
            }
            .into(),
        );
        kv("data.vocab_cap", d.vocab_cap.to_string());
        kv("data.embeddings", show_path(&d.embeddings));
        kv("data.freeze_embeddings", d.freeze_embeddings.to_string());
        kv("data.use_audio", d.use_audio.to_string());
        kv("data.checkpoint", show_path(&d.checkpoint));
        kv("data.out_dir", d.out_dir.display().to_string());
        kv("data.split", d.split.clone());
        kv("data.synth_clips", d.synth_clips.to_string());
        kv("data.synth_vision_dim", d.synth.vision_dim.to_string());
        let range = |(lo, hi): (f64, f64)| format!("{lo},{hi}");
        kv("data.synth_duration_s", range(d.synth.duration_s));
        kv("data.synth_vision_fps", range(d.synth.vision_fps));
        kv("data.synth_audio_fps", range(d.synth.audio_fps));
        kv("data.synth_min_gap_s", d.synth.min_gap_s.to_string());
        kv("data.synth_noise", d.synth.noise.to_string());
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
