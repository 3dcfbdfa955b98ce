//! Feature files, clip manifests, split files and the synthetic dataset.

pub mod features;
pub mod manifest;
pub mod synth;

pub use features::{FeatureSequence, AUDIO_DIM};
pub use manifest::{load_dataset, ClipRecord, ManifestEntry, Splits};
