#![allow(dead_code)]

use fpevtt::data::{ClipRecord, FeatureSequence};
use fpevtt::model::{EncoderAttention, ModelConfig, PeMode};
use fpevtt::position::Modality;
use fpevtt::tokenizer::{normalize_words, TokenSequence, Vocabulary};
use fpevtt::train::Example;

pub fn toy_config(vocab_size: usize, d_vision: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 16,
        n_layers_enc: 1,
        n_layers_dec: 1,
        n_heads: 2,
        mem_slots: 0,
        vocab_size,
        max_len: 12,
        pe_mode: PeMode::Default,
        dropout_rate: 0.0,
        d_vision,
        d_audio: 128,
        max_vision_frames: 16,
        encoder_attention: EncoderAttention::Memory,
    }
}

/// Deterministic vision-only clip whose frames depend on `salt`.
pub fn toy_clip(id: &str, salt: f32, n_frames: usize, d: usize, captions: &[&str]) -> ClipRecord {
    let frames: Vec<f32> = (0..n_frames * d)
        .map(|i| ((i as f32 + 1.0) * 0.37 + salt).sin())
        .collect();
    let vision = FeatureSequence::new(Modality::Vision, frames, n_frames, d, n_frames as f64).unwrap();
    ClipRecord {
        video_id: id.to_string(),
        audio: FeatureSequence::dummy_audio(vision.duration_s()).unwrap(),
        vision,
        audio_is_dummy: true,
        captions: captions.iter().map(|c| c.to_string()).collect(),
    }
}

pub fn examples(clips: &[ClipRecord], vocab: &Vocabulary, max_len: usize) -> Vec<Example> {
    clips
        .iter()
        .flat_map(|c| Example::from_clip(c, vocab, max_len, false))
        .collect()
}

pub fn vocab_for(captions: &[&str]) -> Vocabulary {
    Vocabulary::build_default(captions, 1000).unwrap()
}

pub fn words(vocab: &Vocabulary, ids: &TokenSequence) -> Vec<String> {
    normalize_words(&vocab.detokenize(ids))
}

/// A clip whose decoder emits exactly one word. References are
/// `good, good, bad`, so under CIDEr-D "good" earns twice the reward of
/// "bad"; after a short cross-entropy warm-up nearly all probability mass
/// sits on those two captions.
pub struct TwoCaptionToy {
    pub vocab: Vocabulary,
    pub model: fpevtt::model::Transformer,
    pub example: Example,
    pub df: fpevtt::metrics::DocumentFrequency,
}

impl TwoCaptionToy {
    pub fn new(seed: u64) -> Self {
        use fpevtt::train::{caption_loss, Adam};
        let vocab = vocab_for(&["good bad"]);
        let clip = toy_clip("toy", 0.25, 3, 4, &["good", "good", "bad"]);
        let exs = examples(std::slice::from_ref(&clip), &vocab, 2);
        let mut cfg = toy_config(vocab.len(), 4);
        cfg.max_len = 2;
        let model = fpevtt::model::Transformer::new(cfg, seed).unwrap();
        let params = model.params.parameters();
        let mut opt = Adam::new(&params);
        for _ in 0..150 {
            model.params.zero_grad();
            for ex in &exs {
                caption_loss(&model, ex, None).unwrap().scale(1.0 / 3.0).backward().unwrap();
            }
            opt.step(&params, 1e-2);
        }
        let mut docs = vec![exs[0].references.clone()];
        docs.extend(["other", "thing", "words"].map(|w| vec![vec![w.to_string()]]));
        let df = fpevtt::metrics::DocumentFrequency::from_references(&docs);
        let example = exs.into_iter().next().unwrap();
        let toy = Self {
            vocab,
            model,
            example,
            df,
        };
        assert!(toy.prob("good") + toy.prob("bad") > 0.95);
        toy
    }

    /// Probability that the one-word caption is `word`.
    pub fn prob(&self, word: &str) -> f64 {
        let id = self.vocab.id(word).unwrap() as usize;
        let z = self.model.encode(&self.example.vision, None, None).unwrap();
        self.model.decode_step(&[fpevtt::tokenizer::BOS], &z).unwrap()[id]
    }

    pub fn words(&self, ids: &[u32]) -> Vec<String> {
        normalize_words(&self.vocab.detokenize(ids))
    }
}
