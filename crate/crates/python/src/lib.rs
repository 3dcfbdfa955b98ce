//! Python bindings: vocabulary, model construction and decoding,
//! positional plans, caption metrics, synthetic data and training runs.

use std::path::PathBuf;

use fpevtt::cli::{cmd_train, RunConfig};
use fpevtt::data::synth::{generate, write_dataset, SynthGrid};
use fpevtt::data::FeatureSequence;
use fpevtt::metrics::{bleu4_sentence, cider_corpus};
use fpevtt::model::{checkpoint, Transformer};
use fpevtt::position::{naive_fusion_plan, sinusoidal_pe, Modality, TimestampFactors};
use fpevtt::tensor::no_grad;
use fpevtt::tokenizer::{normalize_words, VocabKind, Vocabulary};
use fpevtt::Error;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) | Error::Tensor(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn kind_of(name: &str) -> PyResult<VocabKind> {
    match name {
        "default" => Ok(VocabKind::Default),
        "wordpiece" => Ok(VocabKind::WordPiece),
        _ => Err(PyValueError::new_err(format!("unknown vocabulary kind {name:?}"))),
    }
}

fn features(modality: Modality, rows: Vec<Vec<f32>>, duration_s: f64) -> PyResult<FeatureSequence> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!("{modality} frames have unequal widths")));
    }
    FeatureSequence::new(modality, rows.concat(), n, d, duration_s).map_err(to_py)
}

/// `key=value` overrides from keyword arguments; Python booleans become
/// `true`/`false`.
fn overrides(prefix: &str, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let value = if let Ok(b) = v.extract::<bool>() {
                b.to_string()
            } else {
                v.str()?.to_string()
            };
            out.push((format!("{prefix}{key}"), value));
        }
    }
    Ok(out)
}

#[pyclass(name = "Vocabulary", unsendable)]
struct PyVocabulary {
    inner: Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    /// Most frequent normalized words of `corpus`, capped at `cap` entries
    /// including the four specials.
    #[staticmethod]
    #[pyo3(signature = (corpus, cap = 12000))]
    fn build(corpus: Vec<String>, cap: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Vocabulary::build_default(&corpus, cap).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, kind = "default"))]
    fn load(path: PathBuf, kind: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Vocabulary::load(&path, kind_of(kind)?).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn encode(&self, sentence: &str) -> Vec<u32> {
        self.inner.encode(sentence)
    }

    fn encode_for_training(&self, sentence: &str) -> Vec<u32> {
        self.inner.encode_for_training(sentence)
    }

    fn detokenize(&self, ids: Vec<u32>) -> String {
        self.inner.detokenize(&ids)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn unk_rate(&self, corpus: Vec<String>) -> f64 {
        self.inner.unk_rate(&corpus)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Transformer", unsendable)]
struct PyTransformer {
    inner: Transformer,
}

#[pymethods]
impl PyTransformer {
    /// Fresh model; keyword arguments override model settings, e.g.
    /// `Transformer(seed=0, d_model=16, pe_mode="fpe")`.
    #[new]
    #[pyo3(signature = (seed = 0, **kwargs))]
    fn new(seed: u64, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in overrides("model.", kwargs)? {
            cfg.set(&k, &v).map_err(to_py)?;
        }
        Ok(Self {
            inner: Transformer::new(cfg.model, seed).map_err(to_py)?,
        })
    }

    /// Model and seed stored in a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, u64)> {
        let (inner, seed) = checkpoint::load(&path).map_err(to_py)?;
        Ok((Self { inner }, seed))
    }

    #[pyo3(signature = (path, seed = 0))]
    fn save(&self, path: PathBuf, seed: u64) -> PyResult<()> {
        checkpoint::save(&path, &self.inner, seed).map_err(to_py)
    }

    /// Model settings as a `{name: value}` dict of strings.
    fn config(&self) -> Vec<(String, String)> {
        let mut rc = RunConfig::default();
        rc.model = self.inner.cfg.clone();
        rc.to_text()
            .lines()
            .filter_map(|l| l.strip_prefix("model."))
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Greedy token ids (with `<bos>`, and `<eos>` unless the cap was hit)
    /// for one clip. `vision` and `audio` are lists of frames.
    #[pyo3(signature = (vision, duration_s, audio = None, max_len = 30))]
    fn greedy_decode(
        &self,
        vision: Vec<Vec<f32>>,
        duration_s: f64,
        audio: Option<Vec<Vec<f32>>>,
        max_len: usize,
    ) -> PyResult<Vec<u32>> {
        let v = features(Modality::Vision, vision, duration_s)?;
        let a = audio.map(|a| features(Modality::Audio, a, duration_s)).transpose()?;
        no_grad(|| {
            let z = self.inner.encode(&v, a.as_ref(), None)?;
            self.inner.greedy_decode(&z, max_len)
        })
        .map_err(to_py)
    }

    /// Next-token distribution after `prefix`.
    #[pyo3(signature = (vision, duration_s, prefix, audio = None))]
    fn next_token_probs(
        &self,
        vision: Vec<Vec<f32>>,
        duration_s: f64,
        prefix: Vec<u32>,
        audio: Option<Vec<Vec<f32>>>,
    ) -> PyResult<Vec<f64>> {
        let v = features(Modality::Vision, vision, duration_s)?;
        let a = audio.map(|a| features(Modality::Audio, a, duration_s)).transpose()?;
        no_grad(|| {
            let z = self.inner.encode(&v, a.as_ref(), None)?;
            self.inner.decode_step(&prefix, &z)
        })
        .map_err(to_py)
    }
}

#[pyfunction]
fn positional_encoding(pos: f64, d_model: usize) -> PyResult<Vec<f64>> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(PyValueError::new_err("d_model must be positive and even"));
    }
    Ok(sinusoidal_pe(pos, d_model))
}

/// Time-based positions of vision frames followed by audio frames.
#[pyfunction]
fn fpe_positions(n_v: usize, n_a: usize, vision_spf: f64, audio_spf: f64) -> PyResult<Vec<f64>> {
    let f = TimestampFactors::new(vision_spf, audio_spf).map_err(|e| to_py(e.into()))?;
    Ok(fpevtt::position::fpe_plan(n_v, n_a, f).positions)
}

#[pyfunction]
fn naive_fusion_positions(n_v: usize, n_a: usize, max_vision: usize) -> PyResult<Vec<f64>> {
    Ok(naive_fusion_plan(n_v, n_a, max_vision).map_err(|e| to_py(e.into()))?.positions)
}

#[pyfunction]
fn lr_default(d_model: usize, warmup_steps: u64, it: u64) -> f64 {
    fpevtt::train::lr_default(d_model, warmup_steps, it)
}

/// Sentence BLEU-4 of a caption against its references.
#[pyfunction]
fn bleu4(candidate: &str, references: Vec<String>) -> PyResult<f64> {
    let refs: Vec<Vec<String>> = references.iter().map(|r| normalize_words(r)).collect();
    bleu4_sentence(&normalize_words(candidate), &refs).map_err(to_py)
}

/// Per-item CIDEr-D with document frequencies from all references.
#[pyfunction]
fn cider(candidates: Vec<String>, references: Vec<Vec<String>>) -> PyResult<Vec<f64>> {
    let cands: Vec<Vec<String>> = candidates.iter().map(|c| normalize_words(c)).collect();
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| normalize_words(r)).collect())
        .collect();
    Ok(cider_corpus(&cands, &refs).map_err(to_py)?.scores)
}

/// Writes a synthetic dataset under `out` and returns its captions.
#[pyfunction]
#[pyo3(signature = (out, seed = 0, n_clips = 2000))]
fn synth_dataset(out: PathBuf, seed: u64, n_clips: usize) -> PyResult<Vec<String>> {
    let grid = SynthGrid::default();
    let clips = generate(seed, n_clips, &grid).map_err(to_py)?;
    write_dataset(&out, &clips, &grid).map_err(to_py)?;
    Ok(clips.into_iter().map(|c| c.record.captions[0].clone()).collect())
}

/// Cross-entropy training exactly as `fpevtt train`; `overrides` are
/// `key=value` strings. Returns the best epoch's log row and artifact paths.
#[pyfunction]
#[pyo3(signature = (config = None, overrides = Vec::new()))]
fn train(py: Python<'_>, config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Py<PyDict>> {
    let cfg = RunConfig::resolve(config.as_deref(), &overrides).map_err(to_py)?;
    let art = cmd_train(&cfg).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("dir", art.dir)?;
    d.set_item("checkpoint", art.checkpoint)?;
    d.set_item("metrics", art.metrics)?;
    d.set_item("best_epoch", art.best.epoch)?;
    d.set_item("val_cider", art.best.val_cider)?;
    d.set_item("val_bleu4", art.best.val_bleu4)?;
    d.set_item("train_loss", art.best.train_loss)?;
    Ok(d.unbind())
}

#[pymodule]
fn fpevtt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyTransformer>()?;
    m.add_function(wrap_pyfunction!(positional_encoding, m)?)?;
    m.add_function(wrap_pyfunction!(fpe_positions, m)?)?;
    m.add_function(wrap_pyfunction!(naive_fusion_positions, m)?)?;
    m.add_function(wrap_pyfunction!(lr_default, m)?)?;
    m.add_function(wrap_pyfunction!(bleu4, m)?)?;
    m.add_function(wrap_pyfunction!(cider, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
