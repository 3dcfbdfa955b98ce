//! Encoder-decoder transformer over vision/audio feature sequences.
//!
//! Pre-layer-norm blocks throughout. The encoder embeds each modality with
//! its own linear map, adds positional encodings chosen by
//! [`PeMode`], and runs self-attention layers whose keys and values may be
//! extended by learned memory slots. The decoder uses causal self-attention,
//! cross-attention over the encoder output, and projects onto the vocabulary
//! with the transposed word embedding.

pub mod attention;
pub mod checkpoint;
mod config;
pub mod params;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{EncoderAttention, ModelConfig, PeMode};
pub use params::ModelParams;

use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::position::{default_plan, fpe_plan, naive_fusion_plan, sinusoidal_pe, PositionPlan, TimestampFactors};
use crate::tensor::{no_grad, DiffTensor};
use crate::tokenizer::{TokenSequence, BOS, EOS};
use attention::{attention, memory_augmented_attention, standard_attention};
use params::{FeedForward, LayerNorm};

/// One sampled caption with the log-probability of each emitted token.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Starts with `<bos>`; ends with `<eos>` unless the length cap was hit.
    pub tokens: TokenSequence,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub cfg: ModelConfig,
    pub params: ModelParams,
}

fn dropout(x: DiffTensor, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Result<DiffTensor> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask = (0..x.numel())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            Ok(x.mul_const(mask)?)
        }
        _ => Ok(x),
    }
}

fn feed_forward(ff: &FeedForward, x: &DiffTensor) -> Result<DiffTensor> {
    ff.l2.forward(&ff.l1.forward(x)?.relu())
}

fn pre_norm(ln: &LayerNorm, x: &DiffTensor) -> Result<DiffTensor> {
    ln.forward(x)
}

impl Transformer {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(cfg, &mut rng)
    }

    pub fn with_rng(cfg: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let params = ModelParams::init(&cfg, rng)?;
        Ok(Self { cfg, params })
    }

    /// Encoder positions for a clip under the configured mode.
    pub fn position_plan(&self, vision: &FeatureSequence, audio: Option<&FeatureSequence>) -> Result<PositionPlan> {
        let n_v = vision.n_frames();
        let n_a = audio.map_or(0, FeatureSequence::n_frames);
        Ok(match self.cfg.pe_mode {
            PeMode::Default => default_plan(n_v, n_a),
            PeMode::NaiveFusion => naive_fusion_plan(n_v, n_a, self.cfg.max_vision_frames)?,
            PeMode::Fpe => {
                let spf_v = vision.seconds_per_frame();
                let spf_a = audio.map_or(spf_v, FeatureSequence::seconds_per_frame);
                fpe_plan(n_v, n_a, TimestampFactors::new(spf_v, spf_a)?)
            }
        })
    }

    fn embed_features(&self, f: &FeatureSequence, expected: usize, emb: &params::Linear) -> Result<DiffTensor> {
        if f.dim() != expected {
            return Err(Error::data(
                format!("{} features", f.modality()),
                format!("width {} but the embedding expects {expected}", f.dim()),
            ));
        }
        let x = DiffTensor::new(f.to_f64(), &[f.n_frames(), f.dim()])?;
        emb.forward(&x)
    }

    /// Encoder output `[n_v (+ n_a) × d_model]`. Dropout is applied only
    /// when `rng` is given.
    pub fn encode(
        &self,
        vision: &FeatureSequence,
        audio: Option<&FeatureSequence>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<DiffTensor> {
        let plan = self.position_plan(vision, audio)?;
        let mut parts = vec![self.embed_features(vision, self.cfg.d_vision, &self.params.vision_emb)?];
        if let Some(a) = audio {
            parts.push(self.embed_features(a, self.cfg.d_audio, &self.params.audio_emb)?);
        }
        let x = DiffTensor::concat_rows(&parts)?.add_const(&plan.encodings(self.cfg.d_model))?;
        self.encoder_stack(x, rng)
    }

    /// Encoder layers and final norm applied to embedded, position-encoded
    /// frames `x` (`[n × d_model]`).
    pub fn encoder_stack(&self, x: DiffTensor, mut rng: Option<&mut dyn RngCore>) -> Result<DiffTensor> {
        let mut x = dropout(x, self.cfg.dropout_rate, &mut rng)?;
        for layer in &self.params.encoder {
            let h = pre_norm(&layer.ln_attn, &x)?;
            let a = match self.cfg.encoder_attention {
                EncoderAttention::Memory => {
                    memory_augmented_attention(&h, &layer.attn, layer.memory.as_ref(), None, self.cfg.n_heads)?
                }
                EncoderAttention::Standard => standard_attention(&h, &layer.attn, None, self.cfg.n_heads)?,
            };
            x = x.add(&dropout(a.output, self.cfg.dropout_rate, &mut rng)?)?;
            let f = feed_forward(&layer.ff, &pre_norm(&layer.ln_ff, &x)?)?;
            x = x.add(&dropout(f, self.cfg.dropout_rate, &mut rng)?)?;
        }
        self.params.enc_norm.forward(&x)
    }

    fn check_prefix(&self, prefix: &[u32]) -> Result<()> {
        if prefix.is_empty() {
            return Err(Error::data("decoder", "empty prefix; it must start with <bos>"));
        }
        if prefix.len() > self.cfg.max_len {
            return Err(Error::data(
                "decoder",
                format!("prefix of {} tokens exceeds max_len {}", prefix.len(), self.cfg.max_len),
            ));
        }
        if let Some(&t) = prefix.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::data("decoder", format!("token id {t} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        Ok(())
    }

    /// Next-token logits `[len(prefix) × |V|]` for every prefix position.
    pub fn decoder_logits(&self, prefix: &[u32], z: &DiffTensor, mut rng: Option<&mut dyn RngCore>) -> Result<DiffTensor> {
        self.check_prefix(prefix)?;
        let d = self.cfg.d_model;
        let ids: Vec<usize> = prefix.iter().map(|&t| t as usize).collect();
        let pe: Vec<f64> = (0..prefix.len()).flat_map(|t| sinusoidal_pe(t as f64, d)).collect();
        let x = self
            .params
            .word_emb
            .gather_rows(&ids)?
            .scale((d as f64).sqrt())
            .add_const(&pe)?;
        let mut x = dropout(x, self.cfg.dropout_rate, &mut rng)?;
        for layer in &self.params.decoder {
            let h = pre_norm(&layer.ln_self, &x)?;
            let a = attention(&h, &h, &layer.self_attn, self.cfg.n_heads, None, true)?;
            x = x.add(&dropout(a.output, self.cfg.dropout_rate, &mut rng)?)?;
            let h = pre_norm(&layer.ln_cross, &x)?;
            let c = attention(&h, z, &layer.cross_attn, self.cfg.n_heads, None, false)?;
            x = x.add(&dropout(c.output, self.cfg.dropout_rate, &mut rng)?)?;
            let f = feed_forward(&layer.ff, &pre_norm(&layer.ln_ff, &x)?)?;
            x = x.add(&dropout(f, self.cfg.dropout_rate, &mut rng)?)?;
        }
        let h = self.params.dec_norm.forward(&x)?;
        Ok(h.matmul(&self.params.word_emb.transpose()?)?)
    }

    /// Distribution over the next token given `prefix`.
    pub fn decode_step(&self, prefix: &[u32], z: &DiffTensor) -> Result<Vec<f64>> {
        no_grad(|| {
            let logits = self.decoder_logits(prefix, z, None)?;
            let last = logits.gather_rows(&[prefix.len() - 1])?;
            Ok(last.softmax(1)?.to_vec())
        })
    }

    fn generation_cap(&self, max_len: usize) -> usize {
        max_len.min(self.cfg.max_len - 1)
    }

    /// Argmax decoding from `<bos>`; ties go to the lowest id. Produces at most
    /// `max_len` tokens after `<bos>`.
    pub fn greedy_decode(&self, z: &DiffTensor, max_len: usize) -> Result<TokenSequence> {
        let mut seq = vec![BOS];
        for _ in 0..self.generation_cap(max_len) {
            let probs = self.decode_step(&seq, z)?;
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            seq.push(best as u32);
            if best as u32 == EOS {
                break;
            }
        }
        Ok(seq)
    }

    /// `n_s` categorical rollouts drawn from one generator seeded with `seed`.
    pub fn sample_decode(&self, z: &DiffTensor, max_len: usize, seed: u64, n_s: usize) -> Result<Vec<Rollout>> {
        if n_s == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n_s);
        for _ in 0..n_s {
            let mut tokens = vec![BOS];
            let mut log_probs = Vec::new();
            for _ in 0..self.generation_cap(max_len) {
                let probs = self.decode_step(&tokens, z)?;
                let tok = sample_categorical(&probs, rng.random::<f64>());
                tokens.push(tok as u32);
                log_probs.push(probs[tok].ln());
                if tok as u32 == EOS {
                    break;
                }
            }
            out.push(Rollout { tokens, log_probs });
        }
        Ok(out)
    }

    /// Differentiable per-token log-probabilities `[len−1]` of `tokens`
    /// (which starts with `<bos>`), teacher-forced.
    pub fn token_log_probs(&self, z: &DiffTensor, tokens: &[u32]) -> Result<DiffTensor> {
        if tokens.len() < 2 {
            return Err(Error::data("decoder", "sequence needs at least one token after <bos>"));
        }
        let n = tokens.len() - 1;
        let logits = self.decoder_logits(&tokens[..n], z, None)?;
        let targets: Vec<usize> = tokens[1..].iter().map(|&t| t as usize).collect();
        Ok(logits.log_softmax()?.pick_per_row(&targets)?)
    }
}

/// Smallest index whose cumulative probability exceeds `u`; falls back to
/// the last index with positive mass when rounding leaves `u` uncovered.
fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
