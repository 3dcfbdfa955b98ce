//! Cross-entropy training, learning-rate schedules, Adam, self-critical
//! fine-tuning and the epoch loop with early stopping.

mod adam;
pub mod schedule;
pub mod scst;
mod trainer;

pub use adam::Adam;
pub use schedule::{lr_default, lr_sgdr_warmup, ScheduleMode, ScheduleState};
pub use scst::{scst_step, Baseline, ScstStats};
pub use trainer::{
    evaluate_split, train_loop, write_metric_log, MetricRow, Objective, SplitScores, TrainOutcome, TrainRunConfig,
    METRIC_LOG_HEADER,
};

use crate::data::{ClipRecord, FeatureSequence};
use crate::error::{Error, Result};
use crate::model::Transformer;
use crate::tensor::DiffTensor;
use crate::tokenizer::{normalize_words, TokenSequence, Vocabulary, EOS, PAD};

/// `−Σ_t log softmax(logits_t)[target_t]` over non-pad targets.
pub fn xe_loss(logits: &DiffTensor, targets: &[u32]) -> Result<DiffTensor> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::data(
            "xe_loss",
            format!("{} targets for logits of shape {shape:?}", targets.len()),
        ));
    }
    let vocab = shape[1];
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::data("xe_loss", format!("target id {t} outside vocabulary of {vocab}")));
    }
    let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] != PAD).collect();
    let cols: Vec<usize> = rows.iter().map(|&i| targets[i] as usize).collect();
    let logp = logits.log_softmax()?;
    Ok(logp.gather_rows(&rows)?.pick_per_row(&cols)?.sum().scale(-1.0))
}

/// One clip prepared for training: features, a tokenized caption
/// (`<bos> … <eos>`) and all of the clip's references as normalized words.
#[derive(Debug, Clone)]
pub struct Example {
    pub video_id: String,
    pub vision: FeatureSequence,
    pub audio: Option<FeatureSequence>,
    pub tokens: TokenSequence,
    pub references: Vec<Vec<String>>,
}

impl Example {
    /// One example per caption of `clip`. Captions longer than the decoder
    /// allows are cut and re-terminated with `<eos>`.
    pub fn from_clip(clip: &ClipRecord, vocab: &Vocabulary, max_len: usize, use_audio: bool) -> Vec<Example> {
        let references: Vec<Vec<String>> = clip.captions.iter().map(|c| normalize_words(c)).collect();
        clip.captions
            .iter()
            .map(|c| {
                let mut tokens = vocab.encode_for_training(c);
                if tokens.len() > max_len + 1 {
                    tokens.truncate(max_len);
                    tokens.push(EOS);
                }
                Example {
                    video_id: clip.video_id.clone(),
                    vision: clip.vision.clone(),
                    audio: use_audio.then(|| clip.audio.clone()),
                    tokens,
                    references: references.clone(),
                }
            })
            .collect()
    }
}

/// Teacher-forced cross-entropy of an example's caption.
pub fn caption_loss(
    model: &Transformer,
    ex: &Example,
    mut rng: Option<&mut dyn rand::RngCore>,
) -> Result<DiffTensor> {
    let reborrow = rng.as_mut().map(|r| &mut **r as &mut dyn rand::RngCore);
    let z = model.encode(&ex.vision, ex.audio.as_ref(), reborrow)?;
    let n = ex.tokens.len() - 1;
    let logits = model.decoder_logits(&ex.tokens[..n], &z, rng)?;
    xe_loss(&logits, &ex.tokens[1..])
}
