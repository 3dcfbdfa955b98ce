use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scst::{scst_step, Baseline, ScstSetup};
use super::{caption_loss, lr_default, Adam, Example, ScheduleMode, ScheduleState};
use crate::error::{Error, Result};
use crate::metrics::{cider_corpus, corpus_bleu, DocumentFrequency, RewardSpec};
use crate::model::Transformer;
use crate::tensor::{no_grad, DiffTensor};
use crate::tokenizer::{normalize_words, TokenSequence, Vocabulary};

pub const METRIC_LOG_HEADER: &str = "epoch,step,lr,train_loss,val_cider,val_bleu4";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Xe,
    Scst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub objective: Objective,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub scst_batch_size: usize,
    /// Epochs without a validation CIDEr improvement before stopping.
    pub patience: usize,
    pub schedule: ScheduleMode,
    pub warmup_steps: u64,
    /// Peak of the warm-up/cosine schedule; the default schedule's peak
    /// for this `d_model` when unset.
    pub eta_max: Option<f64>,
    pub eta_min: f64,
    pub restarts: bool,
    /// Cosine period in epochs.
    pub t0_epochs: usize,
    pub constant_lr: f64,
    pub scst_lr: f64,
    pub reward: RewardSpec,
    /// Cap on generated tokens when decoding.
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Xe,
            max_epochs: 50,
            batch_size: 128,
            scst_batch_size: 16,
            patience: 5,
            schedule: ScheduleMode::Default,
            warmup_steps: 10_000,
            eta_max: None,
            eta_min: 0.0,
            restarts: false,
            t0_epochs: 5,
            constant_lr: 5e-6,
            scst_lr: 5e-6,
            reward: RewardSpec::default(),
            max_decode_len: 30,
            seed: 0,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.scst_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.max_decode_len == 0 {
            return Err(Error::Config("max_decode_len must be at least 1".into()));
        }
        RewardSpec::new(self.reward.lambda_cider, self.reward.lambda_bleu4, self.reward.n_samples)?;
        Ok(())
    }

    fn schedule_state(&self, d_model: usize, steps_per_epoch: u64) -> Result<ScheduleState> {
        let state = match self.objective {
            Objective::Xe => ScheduleState {
                mode: self.schedule,
                it: 0,
                warmup_steps: self.warmup_steps,
                d_model,
                t0_steps: self.t0_epochs as u64 * steps_per_epoch,
                eta_min: self.eta_min,
                eta_max: self
                    .eta_max
                    .unwrap_or_else(|| lr_default(d_model, self.warmup_steps.max(1), self.warmup_steps.max(1))),
                restarts_enabled: self.restarts,
                constant_rate: self.constant_lr,
            },
            Objective::Scst => ScheduleState {
                mode: ScheduleMode::Constant,
                it: 0,
                warmup_steps: 0,
                d_model,
                t0_steps: 1,
                eta_min: 0.0,
                eta_max: 0.0,
                restarts_enabled: false,
                constant_rate: self.scst_lr,
            },
        };
        state.validate()?;
        Ok(state)
    }
}

/// One row of the per-epoch metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_cider: f64,
    pub val_bleu4: f64,
}

impl MetricRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.train_loss, self.val_cider, self.val_bleu4
        )
    }
}

pub fn write_metric_log(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut text = String::from(METRIC_LOG_HEADER);
    text.push('\n');
    for r in rows {
        let _ = writeln!(text, "{}", r.csv());
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitScores {
    /// Mean CIDEr-D over items.
    pub cider: f64,
    /// Corpus BLEU-1..4.
    pub bleu: [f64; 4],
    pub captions: Vec<TokenSequence>,
}

/// Greedy-decodes every example and scores the captions against the
/// examples' references.
pub fn evaluate_split(model: &Transformer, examples: &[Example], vocab: &Vocabulary, max_len: usize) -> Result<SplitScores> {
    let mut captions = Vec::with_capacity(examples.len());
    let mut words = Vec::with_capacity(examples.len());
    for ex in examples {
        let seq = no_grad(|| -> Result<_> {
            let z = model.encode(&ex.vision, ex.audio.as_ref(), None)?;
            model.greedy_decode(&z, max_len)
        })?;
        words.push(normalize_words(&vocab.detokenize(&seq)));
        captions.push(seq);
    }
    let refs: Vec<Vec<Vec<String>>> = examples.iter().map(|e| e.references.clone()).collect();
    if examples.is_empty() {
        return Ok(SplitScores {
            cider: 0.0,
            bleu: [0.0; 4],
            captions,
        });
    }
    Ok(SplitScores {
        cider: cider_corpus(&words, &refs)?.mean(),
        bleu: corpus_bleu(&words, &refs)?,
        captions,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<MetricRow>,
    pub best_epoch: usize,
    pub best_val_cider: f64,
    /// Global optimizer steps taken.
    pub steps: u64,
}

fn snapshot(params: &[DiffTensor]) -> Vec<Vec<f64>> {
    params.iter().map(DiffTensor::to_vec).collect()
}

fn restore(params: &[DiffTensor], values: &[Vec<f64>]) {
    for (p, v) in params.iter().zip(values) {
        p.update_values(|x| x.copy_from_slice(v));
    }
}

/// One example per distinct clip, first occurrence kept.
fn distinct_clips(examples: &[Example]) -> Vec<&Example> {
    let mut seen = BTreeSet::new();
    examples.iter().filter(|e| seen.insert(e.video_id.as_str())).collect()
}

/// Runs epochs of seeded minibatches, validates after each epoch and keeps
/// the parameters of the best validation CIDEr. On return `model` holds
/// those best parameters.
pub fn train_loop(
    model: &Transformer,
    run: &TrainRunConfig,
    train: &[Example],
    val: &[Example],
    vocab: &Vocabulary,
) -> Result<TrainOutcome> {
    run.validate()?;
    if train.is_empty() {
        return Err(Error::data("training set", "no examples"));
    }
    let scst_items = distinct_clips(train);
    let (n_items, batch_size) = match run.objective {
        Objective::Xe => (train.len(), run.batch_size),
        Objective::Scst => (scst_items.len(), run.scst_batch_size),
    };
    let steps_per_epoch = n_items.div_ceil(batch_size) as u64;
    let mut sched = run.schedule_state(model.cfg.d_model, steps_per_epoch)?;
    let params = model.params.parameters();
    let mut opt = Adam::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(run.seed);
    dropout_rng.set_stream(1);

    let words = |ids: &[u32]| normalize_words(&vocab.detokenize(ids));
    let train_refs: Vec<Vec<Vec<String>>> = scst_items.iter().map(|e| e.references.clone()).collect();
    let df = DocumentFrequency::from_references(&train_refs);
    let setup = ScstSetup {
        reward: run.reward,
        df: &df,
        max_len: run.max_decode_len,
        baseline: Baseline::Greedy,
        words: &words,
    };

    let mut log = Vec::new();
    // (epoch, val CIDEr, train loss, parameters); equal CIDEr counts as an
    // improvement only when the training loss went down
    let mut best = (0usize, f64::NEG_INFINITY, f64::INFINITY, snapshot(&params));
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..n_items).collect();
    for epoch in 1..=run.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut rate = 0.0;
        for chunk in order.chunks(batch_size) {
            sched.it += 1;
            rate = sched.rate();
            match run.objective {
                Objective::Xe => {
                    model.params.zero_grad();
                    let inv = 1.0 / chunk.len() as f64;
                    for &i in chunk {
                        let loss = caption_loss(model, &train[i], Some(&mut dropout_rng as &mut dyn RngCore))?;
                        let value = loss.item();
                        if !value.is_finite() {
                            return Err(Error::Numeric(format!(
                                "non-finite loss at epoch {epoch}, step {}",
                                sched.it
                            )));
                        }
                        loss_sum += value;
                        loss.scale(inv).backward()?;
                    }
                    opt.step(&params, rate);
                }
                Objective::Scst => {
                    let batch: Vec<&Example> = chunk.iter().map(|&i| scst_items[i]).collect();
                    let stats = scst_step(model, &mut opt, rate, &batch, &setup, run.seed ^ sched.it)?;
                    loss_sum += stats.loss * batch.len() as f64;
                }
            }
        }
        let scores = evaluate_split(model, val, vocab, run.max_decode_len)?;
        log.push(MetricRow {
            epoch,
            step: sched.it,
            lr: rate,
            train_loss: loss_sum / n_items as f64,
            val_cider: scores.cider,
            val_bleu4: scores.bleu[3],
        });
        let train_loss = loss_sum / n_items as f64;
        if scores.cider > best.1 || (scores.cider == best.1 && train_loss < best.2) {
            best = (epoch, scores.cider, train_loss, snapshot(&params));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > run.patience {
                break;
            }
        }
    }
    restore(&params, &best.3);
    Ok(TrainOutcome {
        log,
        best_epoch: best.0,
        best_val_cider: best.1,
        steps: sched.it,
    })
}
