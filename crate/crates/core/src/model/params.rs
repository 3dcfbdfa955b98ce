//! Learnable arrays of the model and their initialization.
//!
//! Every parameter is drawn in a fixed order from one seeded generator, so a
//! configuration and a seed determine the initial model bit for bit.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{layer_norm, DiffTensor};

const LN_EPS: f64 = 1e-5;

fn uniform_param(rng: &mut dyn RngCore, shape: &[usize], bound: f64) -> DiffTensor {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    DiffTensor::parameter(values, shape).expect("shape matches values")
}

/// `x·W + b` with `W` of shape `[in × out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: DiffTensor,
    pub b: DiffTensor,
}

impl Linear {
    pub fn init(rng: &mut dyn RngCore, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            w: uniform_param(rng, &[d_in, d_out], bound),
            b: uniform_param(rng, &[d_out], bound),
        }
    }

    pub fn forward(&self, x: &DiffTensor) -> Result<DiffTensor> {
        Ok(x.matmul(&self.w)?.add_row(&self.b)?)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, DiffTensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: DiffTensor,
    pub bias: DiffTensor,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gain: DiffTensor::parameter(vec![1.0; d], &[d]).expect("1-d"),
            bias: DiffTensor::parameter(vec![0.0; d], &[d]).expect("1-d"),
        }
    }

    pub fn forward(&self, x: &DiffTensor) -> Result<DiffTensor> {
        Ok(layer_norm(x, &self.gain, &self.bias, LN_EPS)?)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, DiffTensor)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl AttentionParams {
    fn init(rng: &mut dyn RngCore, d: usize) -> Self {
        Self {
            wq: Linear::init(rng, d, d),
            wk: Linear::init(rng, d, d),
            wv: Linear::init(rng, d, d),
            wo: Linear::init(rng, d, d),
        }
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, DiffTensor)>) {
        self.wq.named(&format!("{prefix}.wq"), out);
        self.wk.named(&format!("{prefix}.wk"), out);
        self.wv.named(&format!("{prefix}.wv"), out);
        self.wo.named(&format!("{prefix}.wo"), out);
    }
}

/// Persistent key and value rows appended to an encoder layer's attention.
#[derive(Debug, Clone)]
pub struct MemorySlots {
    pub keys: DiffTensor,
    pub values: DiffTensor,
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    fn init(rng: &mut dyn RngCore, d: usize, d_ff: usize) -> Self {
        Self {
            l1: Linear::init(rng, d, d_ff),
            l2: Linear::init(rng, d_ff, d),
        }
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, DiffTensor)>) {
        self.l1.named(&format!("{prefix}.l1"), out);
        self.l2.named(&format!("{prefix}.l2"), out);
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: AttentionParams,
    pub memory: Option<MemorySlots>,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: AttentionParams,
    pub ln_cross: LayerNorm,
    pub cross_attn: AttentionParams,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    /// `[|V| × d_model]`; also the output projection (transposed).
    pub word_emb: DiffTensor,
    pub vision_emb: Linear,
    pub audio_emb: Linear,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: LayerNorm,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let word_emb = uniform_param(rng, &[cfg.vocab_size, d], 1.0 / (d as f64).sqrt());
        let vision_emb = Linear::init(rng, cfg.d_vision, d);
        let audio_emb = Linear::init(rng, cfg.d_audio, d);
        let mem_dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
        let mut encoder = Vec::with_capacity(cfg.n_layers_enc);
        for _ in 0..cfg.n_layers_enc {
            let attn = AttentionParams::init(rng, d);
            let memory = (cfg.mem_slots > 0).then(|| {
                let mut draw = || {
                    let v = (0..cfg.mem_slots * d).map(|_| mem_dist.sample(rng)).collect();
                    DiffTensor::parameter(v, &[cfg.mem_slots, d]).expect("shape matches")
                };
                let keys = draw();
                let values = draw();
                MemorySlots { keys, values }
            });
            encoder.push(EncoderLayer {
                ln_attn: LayerNorm::new(d),
                attn,
                memory,
                ln_ff: LayerNorm::new(d),
                ff: FeedForward::init(rng, d, cfg.d_ff),
            });
        }
        let mut decoder = Vec::with_capacity(cfg.n_layers_dec);
        for _ in 0..cfg.n_layers_dec {
            decoder.push(DecoderLayer {
                ln_self: LayerNorm::new(d),
                self_attn: AttentionParams::init(rng, d),
                ln_cross: LayerNorm::new(d),
                cross_attn: AttentionParams::init(rng, d),
                ln_ff: LayerNorm::new(d),
                ff: FeedForward::init(rng, d, cfg.d_ff),
            });
        }
        Ok(Self {
            word_emb,
            vision_emb,
            audio_emb,
            encoder,
            enc_norm: LayerNorm::new(d),
            decoder,
            dec_norm: LayerNorm::new(d),
        })
    }

    /// All parameters with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, DiffTensor)> {
        let mut out = vec![("word_emb".to_string(), self.word_emb.clone())];
        self.vision_emb.named("vision_emb", &mut out);
        self.audio_emb.named("audio_emb", &mut out);
        for (i, l) in self.encoder.iter().enumerate() {
            let p = format!("enc.{i}");
            l.ln_attn.named(&format!("{p}.ln_attn"), &mut out);
            l.attn.named(&format!("{p}.attn"), &mut out);
            if let Some(m) = &l.memory {
                out.push((format!("{p}.mem_k"), m.keys.clone()));
                out.push((format!("{p}.mem_v"), m.values.clone()));
            }
            l.ln_ff.named(&format!("{p}.ln_ff"), &mut out);
            l.ff.named(&format!("{p}.ff"), &mut out);
        }
        self.enc_norm.named("enc_norm", &mut out);
        for (i, l) in self.decoder.iter().enumerate() {
            let p = format!("dec.{i}");
            l.ln_self.named(&format!("{p}.ln_self"), &mut out);
            l.self_attn.named(&format!("{p}.self_attn"), &mut out);
            l.ln_cross.named(&format!("{p}.ln_cross"), &mut out);
            l.cross_attn.named(&format!("{p}.cross_attn"), &mut out);
            l.ln_ff.named(&format!("{p}.ln_ff"), &mut out);
            l.ff.named(&format!("{p}.ff"), &mut out);
        }
        self.dec_norm.named("dec_norm", &mut out);
        out
    }

    pub fn parameters(&self) -> Vec<DiffTensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.parameters().iter().map(DiffTensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    /// Replaces the word embedding (e.g. with pretrained vectors).
    pub fn set_word_embedding(&mut self, emb: DiffTensor) -> Result<()> {
        if emb.shape() != self.word_emb.shape() {
            return Err(Error::data(
                "word embedding",
                format!("shape {:?} does not match {:?}", emb.shape(), self.word_emb.shape()),
            ));
        }
        self.word_emb = emb;
        Ok(())
    }

    /// Overwrites values from `(name, shape, values)` blocks; every
    /// parameter must be covered exactly once.
    pub fn load_named(&self, blocks: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let named = self.named();
        if blocks.len() != named.len() {
            return Err(Error::data(
                "checkpoint",
                format!("{} parameter blocks, model has {}", blocks.len(), named.len()),
            ));
        }
        for (name, tensor) in &named {
            let (_, shape, values) = blocks
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::data("checkpoint", format!("missing parameter {name}")))?;
            if shape.as_slice() != tensor.shape() {
                return Err(Error::data(
                    "checkpoint",
                    format!("{name}: shape {shape:?}, model expects {:?}", tensor.shape()),
                ));
            }
            tensor.update_values(|v| v.copy_from_slice(values));
        }
        Ok(())
    }
}
