//! Synthetic audio-visual clips whose captions depend on cross-modal timing.
//!
//! Each clip has one vision event frame and one audio event frame. The
//! caption is `"<vision word> before|after <audio word>"`, ordered by the
//! events' timestamps. Clip durations and both frame rates are drawn per
//! clip, so comparing raw frame indices does not reveal the order.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{FeatureSequence, AUDIO_DIM};
use super::manifest::{write_manifest, ClipRecord, ManifestEntry, Splits};
use crate::error::{Error, Result};
use crate::position::Modality;

pub const BEFORE: &str = "before";
pub const AFTER: &str = "after";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGrid {
    pub vision_dim: usize,
    pub duration_s: (f64, f64),
    pub vision_fps: (f64, f64),
    pub audio_fps: (f64, f64),
    /// Minimum time between the two events.
    pub min_gap_s: f64,
    pub noise: f64,
    pub vision_events: Vec<String>,
    pub audio_events: Vec<String>,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthGrid {
    fn default() -> Self {
        Self {
            vision_dim: 8,
            duration_s: (4.0, 8.0),
            vision_fps: (0.5, 8.0),
            audio_fps: (0.25, 2.0),
            min_gap_s: 0.25,
            noise: 0.1,
            vision_events: ["flash", "spark", "glow"].map(String::from).to_vec(),
            audio_events: ["beep", "bang", "hum"].map(String::from).to_vec(),
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl SynthGrid {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !range_ok(self.duration_s) || !range_ok(self.vision_fps) || !range_ok(self.audio_fps) {
            return Err(Error::Config("synthetic ranges must be positive with lo <= hi".into()));
        }
        if self.vision_events.is_empty() || self.audio_events.is_empty() {
            return Err(Error::Config("synthetic event vocabularies must be nonempty".into()));
        }
        if self.vision_dim < self.vision_events.len() + 1 || AUDIO_DIM < self.audio_events.len() + 1 {
            return Err(Error::Config(format!(
                "vision_dim {} cannot encode {} event types",
                self.vision_dim,
                self.vision_events.len()
            )));
        }
        if !(self.min_gap_s >= 0.0 && self.min_gap_s < 0.5 * self.duration_s.0) {
            return Err(Error::Config("min_gap_s must be below half the shortest duration".into()));
        }
        if self.noise < 0.0 || !(0.0..1.0).contains(&(self.val_fraction + self.test_fraction)) {
            return Err(Error::Config("invalid synthetic noise or split fractions".into()));
        }
        Ok(())
    }
}

/// Ground truth of one generated clip, kept for self-checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub record: ClipRecord,
    pub vision_event_frame: usize,
    pub audio_event_frame: usize,
    pub vision_first: bool,
}

impl SynthClip {
    /// Whether comparing frame indices gives a different order than time.
    pub fn index_order_inverted(&self) -> bool {
        (self.vision_event_frame < self.audio_event_frame) != self.vision_first
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn noise_frames(rng: &mut ChaCha8Rng, n: usize, d: usize, sigma: f64) -> Vec<f32> {
    if sigma == 0.0 {
        return vec![0.0; n * d];
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n * d).map(|_| normal.sample(rng) as f32).collect()
}

/// Marks frame `at` as an event of type `kind`: an indicator in the last
/// column and a one-hot type code in the first columns.
fn stamp_event(frames: &mut [f32], d: usize, at: usize, kind: usize) {
    let row = &mut frames[at * d..(at + 1) * d];
    row[d - 1] = 1.0;
    row[kind] += 1.0;
}

pub fn generate(seed: u64, n_clips: usize, grid: &SynthGrid) -> Result<Vec<SynthClip>> {
    grid.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_clips);
    for k in 0..n_clips {
        let duration = uniform(&mut rng, grid.duration_s);
        let n_v = ((duration * uniform(&mut rng, grid.vision_fps)).round() as usize).max(2);
        let n_a = ((duration * uniform(&mut rng, grid.audio_fps)).round() as usize).max(2);
        let (spf_v, spf_a) = (duration / n_v as f64, duration / n_a as f64);
        let vision_first = rng.random_bool(0.5);
        let (i, j) = loop {
            let i = rng.random_range(0..n_v);
            let j = rng.random_range(0..n_a);
            let (tv, ta) = (i as f64 * spf_v, j as f64 * spf_a);
            if (tv - ta).abs() >= grid.min_gap_s && (tv < ta) == vision_first {
                break (i, j);
            }
        };
        let v_kind = rng.random_range(0..grid.vision_events.len());
        let a_kind = rng.random_range(0..grid.audio_events.len());

        let mut vframes = noise_frames(&mut rng, n_v, grid.vision_dim, grid.noise);
        stamp_event(&mut vframes, grid.vision_dim, i, v_kind);
        let mut aframes = noise_frames(&mut rng, n_a, AUDIO_DIM, grid.noise);
        stamp_event(&mut aframes, AUDIO_DIM, j, a_kind);

        let caption = format!(
            "{} {} {}",
            grid.vision_events[v_kind],
            if vision_first { BEFORE } else { AFTER },
            grid.audio_events[a_kind]
        );
        out.push(SynthClip {
            record: ClipRecord {
                video_id: format!("synth{k:05}"),
                vision: FeatureSequence::new(Modality::Vision, vframes, n_v, grid.vision_dim, duration)?,
                audio: FeatureSequence::new(Modality::Audio, aframes, n_a, AUDIO_DIM, duration)?,
                audio_is_dummy: false,
                captions: vec![caption],
            },
            vision_event_frame: i,
            audio_event_frame: j,
            vision_first,
        });
    }
    Ok(out)
}

/// Deterministic split by position: the last clips go to test, the ones
/// before them to validation.
pub fn split(clips: &[SynthClip], grid: &SynthGrid) -> Splits {
    let n = clips.len();
    let n_test = (n as f64 * grid.test_fraction).round() as usize;
    let n_val = (n as f64 * grid.val_fraction).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    let ids: Vec<String> = clips.iter().map(|c| c.record.video_id.clone()).collect();
    Splits {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..(n_train + n_val).min(n)].to_vec(),
        test: ids[(n_train + n_val).min(n)..].to_vec(),
    }
}

/// Writes `features/*.fpef`, `manifest.jsonl` and `splits.json` under `dir`.
pub fn write_dataset(dir: &Path, clips: &[SynthClip], grid: &SynthGrid) -> Result<()> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut entries = Vec::with_capacity(clips.len());
    for clip in clips {
        let r = &clip.record;
        let vision_file = format!("features/{}.vision.fpef", r.video_id);
        let audio_file = format!("features/{}.audio.fpef", r.video_id);
        r.vision.write(&dir.join(&vision_file))?;
        r.audio.write(&dir.join(&audio_file))?;
        entries.push(ManifestEntry {
            video_id: r.video_id.clone(),
            vision_file,
            audio_file: Some(audio_file),
            duration_s: r.vision.duration_s(),
            captions: r.captions.clone(),
            vision_spf: None,
            audio_spf: None,
        });
    }
    write_manifest(&dir.join("manifest.jsonl"), &entries)?;
    split(clips, grid).save(&dir.join("splits.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_clips() {
        let g = SynthGrid::default();
        assert_eq!(generate(5, 20, &g).unwrap(), generate(5, 20, &g).unwrap());
        assert_ne!(generate(5, 20, &g).unwrap(), generate(6, 20, &g).unwrap());
    }

    #[test]
    fn order_is_balanced_and_often_index_inverted() {
        let n = 4000;
        let clips = generate(11, n, &SynthGrid::default()).unwrap();
        let first = clips.iter().filter(|c| c.vision_first).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((first - n as f64 / 2.0).abs() <= 3.0 * sigma, "{first}");
        let inverted = clips.iter().filter(|c| c.index_order_inverted()).count() as f64 / n as f64;
        assert!(inverted >= 0.25, "{inverted}");
    }

    #[test]
    fn captions_match_event_times() {
        for c in generate(3, 200, &SynthGrid::default()).unwrap() {
            let tv = c.vision_event_frame as f64 * c.record.vision.seconds_per_frame();
            let ta = c.audio_event_frame as f64 * c.record.audio.seconds_per_frame();
            let word = c.record.captions[0].split(' ').nth(1).unwrap().to_string();
            assert_eq!(word == BEFORE, tv < ta);
            assert!((tv - ta).abs() >= SynthGrid::default().min_gap_s);
        }
    }
}
