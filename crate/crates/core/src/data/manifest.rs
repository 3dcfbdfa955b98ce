//! JSON-lines clip manifests and train/val/test split files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{FeatureSequence, AUDIO_DIM};
use crate::error::{Error, Result};
use crate::position::Modality;

/// One manifest line. Feature paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub vision_file: String,
    pub audio_file: Option<String>,
    pub duration_s: f64,
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision_spf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_spf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub video_id: String,
    pub vision: FeatureSequence,
    /// Always present after loading; clips without sound carry the zero dummy.
    pub audio: FeatureSequence,
    pub audio_is_dummy: bool,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let splits: Splits =
            serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
        let mut seen = BTreeSet::new();
        for id in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if !seen.insert(id) {
                return Err(Error::data(path.display().to_string(), format!("video_id {id} listed twice")));
            }
        }
        Ok(splits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("splits serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Records of `clips` whose ids are in `ids`, in `ids` order.
    pub fn select<'a>(clips: &'a [ClipRecord], ids: &[String]) -> Result<Vec<&'a ClipRecord>> {
        ids.iter()
            .map(|id| {
                clips
                    .iter()
                    .find(|c| &c.video_id == id)
                    .ok_or_else(|| Error::data("splits", format!("unknown video_id {id}")))
            })
            .collect()
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(line)
            .map_err(|e| Error::data(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads and validates every record of a manifest. `vision_dim`, when given,
/// is the width the model expects for vision frames.
pub fn load_dataset(manifest: &Path, vision_dim: Option<usize>) -> Result<Vec<ClipRecord>> {
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for entry in read_manifest(manifest)? {
        if !seen.insert(entry.video_id.clone()) {
            return Err(Error::data(&entry.video_id, "duplicate video_id"));
        }
        out.push(load_record(&base, entry, vision_dim)?);
    }
    Ok(out)
}

fn load_features(base: &Path, file: &str, entry: &ManifestEntry, modality: Modality) -> Result<(PathBuf, FeatureSequence)> {
    let path = base.join(file);
    let tag = |msg: String| Error::data(format!("{} ({})", entry.video_id, path.display()), msg);
    let f = FeatureSequence::read(&path).map_err(|e| match e {
        Error::Data { message, .. } => tag(message),
        other => other,
    })?;
    if f.modality() != modality {
        return Err(tag(format!("expected {modality} features, file holds {}", f.modality())));
    }
    if (f.duration_s() - entry.duration_s).abs() > 1e-6 * entry.duration_s.max(1.0) {
        return Err(tag(format!(
            "file duration {} disagrees with manifest duration {}",
            f.duration_s(),
            entry.duration_s
        )));
    }
    let spf = match modality {
        Modality::Vision => entry.vision_spf,
        Modality::Audio => entry.audio_spf,
    };
    let f = match spf {
        Some(spf) => FeatureSequence::with_spf(modality, f.frames().to_vec(), f.n_frames(), f.dim(), f.duration_s(), spf)
            .map_err(|e| tag(e.to_string()))?,
        None => f,
    };
    Ok((path, f))
}

fn load_record(base: &Path, entry: ManifestEntry, vision_dim: Option<usize>) -> Result<ClipRecord> {
    if entry.captions.is_empty() {
        return Err(Error::data(&entry.video_id, "record has no captions"));
    }
    if !(entry.duration_s.is_finite() && entry.duration_s > 0.0) {
        return Err(Error::data(&entry.video_id, format!("invalid duration {}", entry.duration_s)));
    }
    let (vpath, vision) = load_features(base, &entry.vision_file, &entry, Modality::Vision)?;
    if let Some(d) = vision_dim {
        if vision.dim() != d {
            return Err(Error::data(
                format!("{} ({})", entry.video_id, vpath.display()),
                format!("vision width {} but the model expects {d}", vision.dim()),
            ));
        }
    }
    let (audio, audio_is_dummy) = match &entry.audio_file {
        Some(file) => {
            let (apath, audio) = load_features(base, file, &entry, Modality::Audio)?;
            if audio.dim() != AUDIO_DIM {
                return Err(Error::data(
                    format!("{} ({})", entry.video_id, apath.display()),
                    format!("audio width {} but audio features are {AUDIO_DIM}-dimensional", audio.dim()),
                ));
            }
            (audio, false)
        }
        None => (FeatureSequence::dummy_audio(entry.duration_s)?, true),
    };
    Ok(ClipRecord {
        video_id: entry.video_id,
        vision,
        audio,
        audio_is_dummy,
        captions: entry.captions,
    })
}
