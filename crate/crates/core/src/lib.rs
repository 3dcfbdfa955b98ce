//! Encoder-decoder transformer toolkit for audio-visual captioning.
//!
//! Vision and audio feature streams sampled at different rates are fused in
//! a memory-augmented transformer encoder. Positional encodings can be
//! evaluated at fractional (time-based) positions so that frames covering the
//! same instant receive nearby encodings. Training supports cross-entropy
//! with two learning-rate schedules and self-critical sequence training with
//! CIDEr-D/BLEU-4 rewards.

pub mod cli;
pub mod tensor;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod position;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
