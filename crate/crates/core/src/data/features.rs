//! Per-modality frame matrices and the `FPEF` binary feature file.
//!
//! Layout (little-endian): `b"FPEF"`, modality byte (0 vision, 1 audio),
//! `u32 n`, `u32 d`, `f64 duration_s`, then `n·d` `f32` values row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::position::Modality;

pub const FEATURE_MAGIC: &[u8; 4] = b"FPEF";
pub const AUDIO_DIM: usize = 128;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 8;

/// One modality's `[n × d]` frames of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    modality: Modality,
    frames: Vec<f32>,
    n: usize,
    d: usize,
    duration_s: f64,
    spf: f64,
}

impl FeatureSequence {
    /// Frames spanning `duration_s` seconds evenly; the timestamp factor is
    /// `duration_s / n`.
    pub fn new(modality: Modality, frames: Vec<f32>, n: usize, d: usize, duration_s: f64) -> Result<Self> {
        Self::with_spf(modality, frames, n, d, duration_s, duration_s / n.max(1) as f64)
    }

    pub fn with_spf(
        modality: Modality,
        frames: Vec<f32>,
        n: usize,
        d: usize,
        duration_s: f64,
        spf: f64,
    ) -> Result<Self> {
        let ctx = format!("{modality} features");
        if n == 0 || d == 0 {
            return Err(Error::data(ctx, format!("empty frame matrix {n}x{d}")));
        }
        if frames.len() != n * d {
            return Err(Error::data(ctx, format!("{} values for {n}x{d} frames", frames.len())));
        }
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::data(ctx, format!("duration must be positive, got {duration_s}")));
        }
        if !(spf.is_finite() && spf > 0.0) {
            return Err(Error::data(ctx, format!("seconds per frame must be positive, got {spf}")));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(ctx, format!("non-finite value at frame {}, column {}", i / d, i % d)));
        }
        Ok(Self {
            modality,
            frames,
            n,
            d,
            duration_s,
            spf,
        })
    }

    /// The all-zero `1 × 128` audio stand-in for clips without sound; its one
    /// frame spans the whole clip.
    pub fn dummy_audio(duration_s: f64) -> Result<Self> {
        Self::new(Modality::Audio, vec![0.0; AUDIO_DIM], 1, AUDIO_DIM, duration_s)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames[i * self.d..(i + 1) * self.d]
    }

    pub fn n_frames(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    /// Seconds spanned by one frame.
    pub fn seconds_per_frame(&self) -> f64 {
        self.spf
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.frames.iter().map(|&v| v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.frames.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.push(match self.modality {
            Modality::Vision => 0,
            Modality::Audio => 1,
        });
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&self.duration_s.to_le_bytes());
        for v in &self.frames {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let bad = |msg: String| Error::data(context, msg);
        if bytes.len() < HEADER_LEN || &bytes[..4] != FEATURE_MAGIC {
            return Err(bad("not an FPEF feature file".into()));
        }
        let modality = match bytes[4] {
            0 => Modality::Vision,
            1 => Modality::Audio,
            b => return Err(bad(format!("unknown modality byte {b}"))),
        };
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (n, d) = (u32_at(5), u32_at(9));
        let duration_s = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
        let expected = HEADER_LEN + 4 * n * d;
        if bytes.len() != expected {
            return Err(bad(format!("{n}x{d} frames need {expected} bytes, file has {}", bytes.len())));
        }
        let frames = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(modality, frames, n, d, duration_s).map_err(|e| match e {
            Error::Data { message, .. } => bad(message),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
