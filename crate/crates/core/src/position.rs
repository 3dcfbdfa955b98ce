//! Sinusoidal positional encodings at integer or fractional positions, and
//! the position plans that place concatenated vision/audio frames.
//!
//! Three plans are supported:
//! - default: one running integer index over the concatenated sequence;
//! - naive fusion: vision at `0..n_v`, audio at a fixed offset `N_v + j`;
//! - fractional (FPE): each frame at `index × seconds_per_frame` of its own
//!   modality, so vision and audio frames covering the same instant land at
//!   the same position.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PositionError {
    #[error("vision length {n_v} exceeds the audio offset N_v = {max_vision}")]
    VisionTooLong { n_v: usize, max_vision: usize },
    #[error("timestamp factor for {modality} must be positive and finite, got {value}")]
    BadFactor { modality: Modality, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Audio,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Vision => "vision",
            Modality::Audio => "audio",
        })
    }
}

/// Seconds spanned by one frame of each modality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestampFactors {
    vision_spf: f64,
    audio_spf: f64,
}

impl TimestampFactors {
    pub fn new(vision_spf: f64, audio_spf: f64) -> Result<Self, PositionError> {
        for (modality, value) in [(Modality::Vision, vision_spf), (Modality::Audio, audio_spf)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(PositionError::BadFactor { modality, value });
            }
        }
        Ok(Self {
            vision_spf,
            audio_spf,
        })
    }

    /// Factors from a clip duration and per-modality frame counts.
    pub fn from_duration(duration_s: f64, n_v: usize, n_a: usize) -> Result<Self, PositionError> {
        Self::new(duration_s / n_v as f64, duration_s / n_a as f64)
    }

    pub fn vision_spf(&self) -> f64 {
        self.vision_spf
    }

    pub fn audio_spf(&self) -> f64 {
        self.audio_spf
    }
}

/// Positions for a vision-then-audio concatenated encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionPlan {
    pub positions: Vec<f64>,
    pub modality: Vec<Modality>,
}

impl PositionPlan {
    fn build(vision: impl Iterator<Item = f64>, audio: impl Iterator<Item = f64>) -> Self {
        let mut positions = Vec::new();
        let mut modality = Vec::new();
        for p in vision {
            positions.push(p);
            modality.push(Modality::Vision);
        }
        for p in audio {
            positions.push(p);
            modality.push(Modality::Audio);
        }
        Self {
            positions,
            modality,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Positions of one modality, in frame order.
    pub fn of(&self, m: Modality) -> Vec<f64> {
        self.positions
            .iter()
            .zip(&self.modality)
            .filter(|(_, mm)| **mm == m)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Row-major `[len × d_model]` encoding matrix.
    pub fn encodings(&self, d_model: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * d_model);
        for &p in &self.positions {
            out.extend(sinusoidal_pe(p, d_model));
        }
        out
    }
}

/// `PE(pos)[2i] = sin(pos / 10000^(2i/d))`, `PE(pos)[2i+1] = cos(...)`.
/// `pos` may be any nonnegative real.
pub fn sinusoidal_pe(pos: f64, d_model: usize) -> Vec<f64> {
    assert!(d_model % 2 == 0, "d_model must be even, got {d_model}");
    let mut out = Vec::with_capacity(d_model);
    for i in 0..d_model / 2 {
        let angle = pos / 10000f64.powf((2 * i) as f64 / d_model as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// One running integer index over the whole concatenated sequence.
pub fn default_plan(n_v: usize, n_a: usize) -> PositionPlan {
    PositionPlan::build((0..n_v).map(|i| i as f64), (n_v..n_v + n_a).map(|i| i as f64))
}

/// `[0, …, n_v−1, N_v+0, …, N_v+n_a−1]`.
pub fn naive_fusion_plan(n_v: usize, n_a: usize, max_vision: usize) -> Result<PositionPlan, PositionError> {
    if n_v > max_vision {
        return Err(PositionError::VisionTooLong { n_v, max_vision });
    }
    Ok(PositionPlan::build(
        (0..n_v).map(|i| i as f64),
        (0..n_a).map(|j| (max_vision + j) as f64),
    ))
}

/// Vision frame `i` at `i·vision_spf` seconds, audio frame `j` at `j·audio_spf`.
pub fn fpe_plan(n_v: usize, n_a: usize, factors: TimestampFactors) -> PositionPlan {
    PositionPlan::build(
        (0..n_v).map(|i| i as f64 * factors.vision_spf),
        (0..n_a).map(|j| j as f64 * factors.audio_spf),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn pe_at_zero_alternates() {
        let pe = sinusoidal_pe(0.0, 8);
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pe_at_half_direct_evaluation() {
        let pe = sinusoidal_pe(0.5, 4);
        let expected = [0.5f64.sin(), 0.5f64.cos(), 0.005f64.sin(), 0.005f64.cos()];
        assert!(max_abs_diff(&pe, &expected) < 1e-15);
    }

    #[test]
    #[should_panic(expected = "even")]
    fn pe_rejects_odd_width() {
        sinusoidal_pe(1.0, 5);
    }

    #[test]
    fn naive_fusion_examples() {
        let p = naive_fusion_plan(3, 2, 40).unwrap();
        assert_eq!(p.positions, vec![0.0, 1.0, 2.0, 40.0, 41.0]);
        assert_eq!(
            p.modality,
            vec![
                Modality::Vision,
                Modality::Vision,
                Modality::Vision,
                Modality::Audio,
                Modality::Audio
            ]
        );
        assert_eq!(naive_fusion_plan(3, 0, 40).unwrap().positions, vec![0.0, 1.0, 2.0]);
        assert_eq!(naive_fusion_plan(1, 1, 40).unwrap().positions, vec![0.0, 40.0]);
        assert_eq!(
            naive_fusion_plan(41, 1, 40).unwrap_err(),
            PositionError::VisionTooLong { n_v: 41, max_vision: 40 }
        );
    }

    #[test]
    fn fpe_ten_second_clip() {
        let f = TimestampFactors::from_duration(10.0, 32, 11).unwrap();
        assert_eq!(f.vision_spf(), 0.3125);
        assert!((f.audio_spf() - 10.0 / 11.0).abs() < 1e-15);
        let plan = fpe_plan(32, 11, f);
        let vision = plan.of(Modality::Vision);
        let audio = plan.of(Modality::Audio);
        assert_eq!(vision[16], 5.0);
        assert!((audio[5] - 4.545454545454545).abs() < 1e-12);
        assert!((audio[6] - 5.454545454545454).abs() < 1e-12);
        assert!(audio[5] < vision[16] && vision[16] < audio[6]);
    }

    #[test]
    fn fpe_unit_factors_equal_integer_positions_bitwise() {
        let f = TimestampFactors::new(1.0, 1.0).unwrap();
        let plan = fpe_plan(5, 3, f);
        assert_eq!(plan.of(Modality::Vision), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(plan.of(Modality::Audio), vec![0.0, 1.0, 2.0]);
        let vision_only = fpe_plan(6, 0, f);
        assert_eq!(vision_only.encodings(16), default_plan(6, 0).encodings(16));
    }

    #[test]
    fn fpe_pure_audio_clip() {
        let f = TimestampFactors::new(0.5, 0.96).unwrap();
        assert_eq!(fpe_plan(0, 3, f).positions, vec![0.0, 0.96, 1.92]);
    }

    #[test]
    fn fpe_rejects_nonpositive_factors() {
        assert!(matches!(
            TimestampFactors::new(0.0, 1.0),
            Err(PositionError::BadFactor { modality: Modality::Vision, .. })
        ));
        assert!(matches!(
            TimestampFactors::new(1.0, f64::NAN),
            Err(PositionError::BadFactor { modality: Modality::Audio, .. })
        ));
    }

    #[test]
    fn pe_is_continuous() {
        for p in [0.0, 0.3, 7.25, 123.0] {
            let d = max_abs_diff(&sinusoidal_pe(p, 16), &sinusoidal_pe(p + 1e-6, 16));
            assert!(d <= 1e-6, "jump {d} at {p}");
        }
    }

    proptest! {
        #[test]
        fn per_modality_positions_increase(n_v in 1usize..40, n_a in 0usize..20, fv in 0.01f64..2.0, fa in 0.01f64..2.0) {
            let plan = fpe_plan(n_v, n_a, TimestampFactors::new(fv, fa).unwrap());
            for m in [Modality::Vision, Modality::Audio] {
                let p = plan.of(m);
                prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn naive_fusion_never_collides(n_v in 1usize..40, n_a in 0usize..20, extra in 0usize..10) {
            let plan = naive_fusion_plan(n_v, n_a, n_v + extra).unwrap();
            let v = plan.of(Modality::Vision);
            let a = plan.of(Modality::Audio);
            prop_assert!(v.iter().all(|x| !a.contains(x)));
        }

        #[test]
        fn coinciding_timestamps_get_close_encodings(t in 0.0f64..20.0, gap in 1e-9f64..1e-3) {
            // a vision frame at t and an audio frame at t + gap
            let d = max_abs_diff(&sinusoidal_pe(t, 32), &sinusoidal_pe(t + gap, 32));
            prop_assert!(d <= gap * 1.0000001);
        }
    }
}
