use serde::{Deserialize, Serialize};

use crate::data::AUDIO_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    Default,
    NaiveFusion,
    Fpe,
}

impl std::str::FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(PeMode::Default),
            "naive_fusion" => Ok(PeMode::NaiveFusion),
            "fpe" => Ok(PeMode::Fpe),
            _ => Err(Error::Config(format!("unknown pe_mode {s:?} (default, naive_fusion, fpe)"))),
        }
    }
}

impl std::fmt::Display for PeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PeMode::Default => "default",
            PeMode::NaiveFusion => "naive_fusion",
            PeMode::Fpe => "fpe",
        })
    }
}

/// Which encoder self-attention routine to run. `Standard` is a plain
/// multi-head attention kept as a reference for memory-free models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderAttention {
    Memory,
    Standard,
}

impl std::str::FromStr for EncoderAttention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(EncoderAttention::Memory),
            "standard" => Ok(EncoderAttention::Standard),
            _ => Err(Error::Config(format!("unknown encoder_attention {s:?} (memory, standard)"))),
        }
    }
}

impl std::fmt::Display for EncoderAttention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderAttention::Memory => "memory",
            EncoderAttention::Standard => "standard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub mem_slots: usize,
    pub vocab_size: usize,
    /// Longest decoder prefix, `<bos>` included.
    pub max_len: usize,
    pub pe_mode: PeMode,
    pub dropout_rate: f64,
    pub d_vision: usize,
    pub d_audio: usize,
    /// Audio position offset `N_v` under naive fusion.
    pub max_vision_frames: usize,
    pub encoder_attention: EncoderAttention,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            d_ff: 2048,
            n_layers_enc: 8,
            n_layers_dec: 8,
            n_heads: 8,
            mem_slots: 64,
            vocab_size: 12000,
            max_len: 32,
            pe_mode: PeMode::Fpe,
            dropout_rate: 0.1,
            d_vision: 1024,
            d_audio: AUDIO_DIM,
            max_vision_frames: 64,
            encoder_attention: EncoderAttention::Memory,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return fail(format!("d_model must be positive and even, got {}", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ff == 0 || self.d_vision == 0 || self.d_audio == 0 {
            return fail("d_ff, d_vision and d_audio must be positive".into());
        }
        if self.vocab_size < crate::tokenizer::SPECIALS.len() {
            return fail(format!("vocab_size {} cannot hold the special tokens", self.vocab_size));
        }
        if self.max_len < 2 {
            return fail(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.max_vision_frames == 0 {
            return fail("max_vision_frames must be positive".into());
        }
        if self.encoder_attention == EncoderAttention::Standard && self.mem_slots != 0 {
            return fail("standard encoder attention has no memory slots; set mem_slots=0".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
