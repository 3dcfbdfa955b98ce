//! Self-critical sequence training: sampled captions are rewarded relative
//! to the model's own greedy caption, and every token of a sample shares its
//! advantage.

use super::{Adam, Example};
use crate::error::{Error, Result};
use crate::metrics::{combined_reward, DocumentFrequency, RewardSpec};
use crate::model::Transformer;
use crate::tensor::{no_grad, DiffTensor};

/// What is subtracted from each sample's reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Reward of the greedy caption (self-critical).
    Greedy,
    /// Raw rewards; only used to measure the baseline's effect.
    None,
}

pub struct ScstSetup<'a> {
    pub reward: RewardSpec,
    pub df: &'a DocumentFrequency,
    /// Cap on generated tokens per caption.
    pub max_len: usize,
    pub baseline: Baseline,
    /// Generated token ids to normalized words for scoring.
    pub words: &'a dyn Fn(&[u32]) -> Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScstStats {
    pub loss: f64,
    pub mean_sample_reward: f64,
    pub mean_baseline_reward: f64,
    /// Whether any advantage was nonzero (and therefore any gradient flowed).
    pub updated: bool,
}

fn item_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Accumulates the self-critical policy gradient of `batch` into the
/// parameter gradients. Dropout is not applied, so the sampled
/// log-probabilities and the differentiated ones come from the same network.
pub fn scst_gradients(model: &Transformer, batch: &[&Example], setup: &ScstSetup, seed: u64) -> Result<ScstStats> {
    if batch.is_empty() {
        return Err(Error::data("scst", "empty batch"));
    }
    let n_s = setup.reward.n_samples;
    let norm = 1.0 / (n_s * batch.len()) as f64;
    let mut stats = ScstStats::default();
    for (i, ex) in batch.iter().enumerate() {
        if ex.references.is_empty() {
            return Err(Error::data(&ex.video_id, "no references for the reward"));
        }
        let z = model.encode(&ex.vision, ex.audio.as_ref(), None)?;
        let (greedy, samples) = no_grad(|| -> Result<_> {
            Ok((
                model.greedy_decode(&z, setup.max_len)?,
                model.sample_decode(&z, setup.max_len, item_seed(seed, i), n_s)?,
            ))
        })?;
        let r_greedy = combined_reward(&(setup.words)(&greedy), &ex.references, &setup.reward, setup.df)?;
        stats.mean_baseline_reward += r_greedy / batch.len() as f64;
        let base = match setup.baseline {
            Baseline::Greedy => r_greedy,
            Baseline::None => 0.0,
        };
        let mut item_loss: Option<DiffTensor> = None;
        for s in &samples {
            let r = combined_reward(&(setup.words)(&s.tokens), &ex.references, &setup.reward, setup.df)?;
            stats.mean_sample_reward += r * norm;
            let advantage = r - base;
            if advantage == 0.0 || s.tokens.len() < 2 {
                continue;
            }
            let term = model.token_log_probs(&z, &s.tokens)?.sum().scale(-advantage * norm);
            item_loss = Some(match item_loss {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        if let Some(loss) = item_loss {
            stats.loss += loss.item();
            stats.updated = true;
            loss.backward()?;
        }
    }
    Ok(stats)
}

/// One self-critical update. When every advantage in the batch is zero the
/// optimizer is not stepped, so the parameters stay bit-identical.
pub fn scst_step(
    model: &Transformer,
    opt: &mut Adam,
    rate: f64,
    batch: &[&Example],
    setup: &ScstSetup,
    seed: u64,
) -> Result<ScstStats> {
    let params = model.params.parameters();
    model.params.zero_grad();
    let stats = scst_gradients(model, batch, setup, seed)?;
    if stats.updated {
        opt.step(&params, rate);
    }
    Ok(stats)
}
