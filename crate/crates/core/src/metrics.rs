//! BLEU and CIDEr-D caption scores and the weighted self-critical reward.
//!
//! Inputs are normalized word lists (see [`crate::tokenizer::normalize_words`]).
//! All n-gram tables are ordered maps so sums run in a fixed order and scores
//! are bit-reproducible.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub const MAX_N: usize = 4;
/// Substitute match count for n-gram orders with no clipped matches.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

type Counts = BTreeMap<String, u32>;

fn ngrams(words: &[String], n: usize) -> Counts {
    let mut out = Counts::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w.join(" ")).or_default() += 1;
        }
    }
    out
}

/// Per-order n-gram multisets (orders 1..=4) of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramStats {
    counts: [Counts; MAX_N],
    len: usize,
}

impl NGramStats {
    pub fn new(words: &[String]) -> Self {
        Self {
            counts: std::array::from_fn(|i| ngrams(words, i + 1)),
            len: words.len(),
        }
    }

    pub fn order(&self, n: usize) -> &BTreeMap<String, u32> {
        &self.counts[n - 1]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Weights of the self-critical reward `λ_c·CIDEr + λ_b·BLEU-4`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardSpec {
    pub lambda_cider: f64,
    pub lambda_bleu4: f64,
    pub n_samples: usize,
}

impl RewardSpec {
    pub fn new(lambda_cider: f64, lambda_bleu4: f64, n_samples: usize) -> Result<Self> {
        if !(lambda_cider >= 0.0 && lambda_bleu4 >= 0.0) || lambda_cider + lambda_bleu4 == 0.0 {
            return Err(Error::Config(format!(
                "reward weights must be nonnegative and not both zero (cider={lambda_cider}, bleu4={lambda_bleu4})"
            )));
        }
        if n_samples == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        Ok(Self {
            lambda_cider,
            lambda_bleu4,
            n_samples,
        })
    }
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            lambda_cider: 1.0,
            lambda_bleu4: 1.0,
            n_samples: 5,
        }
    }
}

fn clipped_matches(cand: &Counts, refs: &[NGramStats], n: usize) -> u64 {
    cand.iter()
        .map(|(g, &c)| {
            let max_ref = refs.iter().map(|r| r.order(n).get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            c.min(max_ref) as u64
        })
        .sum()
}

/// Reference length closest to `c`, preferring the shorter one on ties.
fn closest_ref_len(c: usize, refs: &[NGramStats]) -> usize {
    refs.iter()
        .map(NGramStats::len)
        .min_by_key(|&r| ((r as i64 - c as i64).abs(), r))
        .unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        return 0.0;
    }
    (1.0 - r as f64 / c as f64).min(0.0).exp()
}

/// Sentence BLEU over orders `1..=max_n` with `epsilon` substituted for zero
/// match counts. Orders for which the candidate has no n-grams at all are
/// left out of the geometric mean.
pub fn bleu_sentence(candidate: &[String], references: &[Vec<String>], max_n: usize, epsilon: f64) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::data("bleu", "no references"));
    }
    if candidate.is_empty() {
        return Err(Error::data("bleu", "empty candidate"));
    }
    let refs: Vec<NGramStats> = references.iter().map(|r| NGramStats::new(r)).collect();
    let cand = NGramStats::new(candidate);
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=max_n {
        let total = candidate.len().saturating_sub(n - 1);
        if total == 0 {
            continue;
        }
        let m = clipped_matches(cand.order(n), &refs, n);
        let numer = if m == 0 { epsilon } else { m as f64 };
        log_sum += (numer / total as f64).ln();
        orders += 1;
    }
    let bp = brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), &refs));
    Ok(bp * (log_sum / orders as f64).exp())
}

pub fn bleu4_sentence(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    bleu_sentence(candidate, references, MAX_N, BLEU_EPSILON)
}

/// Corpus-level BLEU-1..4: clipped counts and lengths are pooled over all
/// items before taking precisions.
pub fn corpus_bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<[f64; MAX_N]> {
    if candidates.len() != references.len() {
        return Err(Error::data(
            "bleu",
            format!("{} candidates for {} reference sets", candidates.len(), references.len()),
        ));
    }
    let mut matches = [0u64; MAX_N];
    let mut totals = [0u64; MAX_N];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::data("bleu", "item without references"));
        }
        let refs: Vec<NGramStats> = refs.iter().map(|r| NGramStats::new(r)).collect();
        let stats = NGramStats::new(cand);
        for n in 1..=MAX_N {
            matches[n - 1] += clipped_matches(stats.order(n), &refs, n);
            totals[n - 1] += cand.len().saturating_sub(n - 1) as u64;
        }
        c_len += cand.len();
        r_len += closest_ref_len(cand.len(), &refs);
    }
    let bp = brevity_penalty(c_len, r_len);
    let mut out = [0.0; MAX_N];
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..MAX_N {
        if totals[n] > 0 {
            let numer = if matches[n] == 0 { BLEU_EPSILON } else { matches[n] as f64 };
            log_sum += (numer / totals[n] as f64).ln();
            orders += 1;
        }
        out[n] = if orders == 0 { 0.0 } else { bp * (log_sum / orders as f64).exp() };
    }
    Ok(out)
}

/// Document frequencies of n-grams over reference sets; each item counts as
/// one document (the union of its references).
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentFrequency {
    n_docs: usize,
    df: [Counts; MAX_N],
}

impl DocumentFrequency {
    pub fn from_references(references: &[Vec<Vec<String>>]) -> Self {
        let mut df: [Counts; MAX_N] = Default::default();
        for refs in references {
            for n in 1..=MAX_N {
                let mut seen = BTreeSet::new();
                for r in refs {
                    seen.extend(ngrams(r, n).into_keys());
                }
                for g in seen {
                    *df[n - 1].entry(g).or_default() += 1;
                }
            }
        }
        Self {
            n_docs: references.len(),
            df,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn get(&self, ngram: &str, n: usize) -> u32 {
        self.df[n - 1].get(ngram).copied().unwrap_or(0)
    }

    fn idf(&self, ngram: &str, n: usize) -> f64 {
        (self.n_docs.max(1) as f64).ln() - (self.get(ngram, n).max(1) as f64).ln()
    }
}

struct TfIdf {
    vecs: [BTreeMap<String, f64>; MAX_N],
    norms: [f64; MAX_N],
    len: usize,
}

impl TfIdf {
    fn new(words: &[String], df: &DocumentFrequency) -> Self {
        let stats = NGramStats::new(words);
        let mut vecs: [BTreeMap<String, f64>; MAX_N] = Default::default();
        let mut norms = [0.0; MAX_N];
        for n in 1..=MAX_N {
            for (g, &tf) in stats.order(n) {
                let w = tf as f64 * df.idf(g, n);
                norms[n - 1] += w * w;
                vecs[n - 1].insert(g.clone(), w);
            }
            norms[n - 1] = norms[n - 1].sqrt();
        }
        Self {
            vecs,
            norms,
            len: words.len(),
        }
    }

    /// Clipped TF-IDF cosine per order, times the Gaussian length penalty.
    fn similarity(&self, reference: &TfIdf) -> [f64; MAX_N] {
        let delta = self.len as f64 - reference.len as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        std::array::from_fn(|i| {
            let mut val = 0.0;
            for (g, &wc) in &self.vecs[i] {
                if let Some(&wr) = reference.vecs[i].get(g) {
                    val += wc.min(wr) * wr;
                }
            }
            if self.norms[i] != 0.0 && reference.norms[i] != 0.0 {
                val /= self.norms[i] * reference.norms[i];
            }
            val * penalty
        })
    }
}

/// Per-order similarities averaged over references (unscaled).
pub fn cider_per_n(candidate: &[String], references: &[Vec<String>], df: &DocumentFrequency) -> Result<[f64; MAX_N]> {
    if references.is_empty() {
        return Err(Error::data("cider", "no references"));
    }
    let cand = TfIdf::new(candidate, df);
    let mut acc = [0.0; MAX_N];
    for r in references {
        let sim = cand.similarity(&TfIdf::new(r, df));
        acc.iter_mut().zip(sim).for_each(|(a, s)| *a += s);
    }
    Ok(acc.map(|a| a / references.len() as f64))
}

/// CIDEr-D of one candidate against its references.
pub fn cider_d(candidate: &[String], references: &[Vec<String>], df: &DocumentFrequency) -> Result<f64> {
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let per_n = cider_per_n(candidate, references, df)?;
    Ok(per_n.iter().sum::<f64>() / MAX_N as f64 * CIDER_SCALE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusCider {
    pub scores: Vec<f64>,
    /// Items whose candidate was empty (scored 0).
    pub empty_candidates: Vec<usize>,
}

impl CorpusCider {
    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            0.0
        } else {
            self.scores.iter().sum::<f64>() / self.scores.len() as f64
        }
    }
}

/// CIDEr-D for every item, with document frequencies taken from the given
/// reference sets.
pub fn cider_corpus(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<CorpusCider> {
    if candidates.len() != references.len() {
        return Err(Error::data(
            "cider",
            format!("{} candidates for {} reference sets", candidates.len(), references.len()),
        ));
    }
    let df = DocumentFrequency::from_references(references);
    let mut scores = Vec::with_capacity(candidates.len());
    let mut empty_candidates = Vec::new();
    for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::data("cider", format!("item {i} has no references")));
        }
        if cand.is_empty() {
            empty_candidates.push(i);
        }
        scores.push(cider_d(cand, refs, &df)?);
    }
    Ok(CorpusCider {
        scores,
        empty_candidates,
    })
}

/// `λ_c·CIDEr-D + λ_b·BLEU-4`. An empty candidate earns zero reward.
pub fn combined_reward(
    candidate: &[String],
    references: &[Vec<String>],
    spec: &RewardSpec,
    df: &DocumentFrequency,
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::data("reward", "no references"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut r = 0.0;
    if spec.lambda_cider != 0.0 {
        r += spec.lambda_cider * cider_d(candidate, references, df)?;
    }
    if spec.lambda_bleu4 != 0.0 {
        r += spec.lambda_bleu4 * bleu4_sentence(candidate, references)?;
    }
    Ok(r)
}
