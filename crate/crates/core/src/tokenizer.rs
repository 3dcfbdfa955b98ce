//! Vocabularies, the frequency-capped word tokenizer, greedy WordPiece, and
//! pretrained embedding loading.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DiffTensor;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Characters stripped by the default tokenizer and by metric normalization.
pub const FILTERED_CHARS: &str = "!\"#$%&()*+.,-/:;=?@[\\]^_`{|}~";

const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;
const EMBEDDING_MAGIC: &[u8; 4] = b"FPEE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    Default,
    WordPiece,
}

/// Token ids including `<bos>`/`<eos>` when built for training.
pub type TokenSequence = Vec<u32>;

/// Lowercases, removes [`FILTERED_CHARS`] and splits on whitespace.
pub fn normalize_words(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !FILTERED_CHARS.contains(*c))
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
    kind: VocabKind,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list whose first four
    /// entries are the specials.
    pub fn from_tokens(tokens: Vec<String>, kind: VocabKind) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::data("vocabulary", "first four tokens must be <pad> <bos> <eos> <unk>"));
        }
        if kind == VocabKind::Default {
            if let Some(t) = tokens.iter().find(|t| t.starts_with(CONTINUATION)) {
                return Err(Error::data(
                    "vocabulary",
                    format!("default vocabulary contains continuation token {t:?}"),
                ));
            }
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if id_of.insert(t.clone(), i as u32).is_some() {
                return Err(Error::data("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, id_of, kind })
    }

    /// Keeps the `cap − 4` most frequent normalized words, ties broken
    /// lexicographically.
    pub fn build_default<S: AsRef<str>>(corpus: &[S], cap: usize) -> Result<Self> {
        if cap < 5 {
            return Err(Error::Config(format!("vocabulary cap must be at least 5, got {cap}")));
        }
        if corpus.is_empty() {
            return Err(Error::data("vocabulary", "empty corpus"));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for sentence in corpus {
            for w in normalize_words(sentence.as_ref()) {
                if SPECIALS.contains(&w.as_str()) {
                    continue;
                }
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        // stable sort keeps the BTreeMap's lexicographic order among ties
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(cap - 4).map(|(w, _)| w));
        Self::from_tokens(tokens, VocabKind::Default)
    }

    /// Reads one token per line; line index is the id.
    pub fn load(path: &Path, kind: VocabKind) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens = text.lines().map(str::to_owned).collect();
        Self::from_tokens(tokens, kind)
            .map_err(|e| Error::data(path.display().to_string(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokenizes with this vocabulary's own scheme, without specials.
    pub fn encode(&self, sentence: &str) -> TokenSequence {
        match self.kind {
            VocabKind::Default => self.tokenize_default(sentence),
            VocabKind::WordPiece => self.wordpiece_tokenize(sentence),
        }
    }

    /// `<bos> … <eos>` wrapped training target.
    pub fn encode_for_training(&self, sentence: &str) -> TokenSequence {
        let mut ids = vec![BOS];
        ids.extend(self.encode(sentence));
        ids.push(EOS);
        ids
    }

    pub fn tokenize_default(&self, sentence: &str) -> TokenSequence {
        normalize_words(sentence)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Greedy longest-match-first WordPiece over lowercased whitespace words.
    /// A word without a full decomposition becomes a single `<unk>`.
    pub fn wordpiece_tokenize(&self, sentence: &str) -> TokenSequence {
        let lowered = sentence.to_lowercase();
        let mut out = Vec::new();
        for word in lowered.split_whitespace() {
            match self.wordpiece_word(word) {
                Some(pieces) => out.extend(pieces),
                None => out.push(UNK),
            }
        }
        out
    }

    fn wordpiece_word(&self, word: &str) -> Option<Vec<u32>> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            return None;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, CONTINUATION);
                }
                if let Some(id) = self.id(&piece).filter(|&id| id > UNK) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            pieces.push(found?);
            start = end;
        }
        Some(pieces)
    }

    /// Joins tokens with spaces, gluing `##` pieces onto the previous token
    /// and dropping specials.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id <= UNK {
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if self.kind == VocabKind::WordPiece => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        out
    }

    /// Fraction of normalized words that map to `<unk>`.
    pub fn unk_rate<S: AsRef<str>>(&self, corpus: &[S]) -> f64 {
        let (mut total, mut unk) = (0usize, 0usize);
        for s in corpus {
            for id in self.tokenize_default(s.as_ref()) {
                total += 1;
                unk += usize::from(id == UNK);
            }
        }
        if total == 0 {
            0.0
        } else {
            unk as f64 / total as f64
        }
    }
}

/// Reads a `|V|×d` embedding matrix (`FPEE` format). When `freeze` is set
/// the returned tensor does not require gradients.
pub fn load_embedding_matrix(vocab: &Vocabulary, path: &Path, d_model: usize, freeze: bool) -> Result<DiffTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    if bytes.len() < 12 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::data(ctx, "missing FPEE header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rows != vocab.len() || cols != d_model {
        return Err(Error::data(
            ctx,
            format!("expected {}×{d_model} embedding matrix, found {rows}×{cols}", vocab.len()),
        ));
    }
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(Error::data(ctx, format!("expected {} value bytes, found {}", rows * cols * 4, body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(ctx, "non-finite embedding value"));
    }
    let t = DiffTensor::parameter(values, &[rows, cols])?;
    t.set_requires_grad(!freeze);
    Ok(t)
}

/// Writes a matrix in `FPEE` format (values narrowed to `f32`).
pub fn save_embedding_matrix(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + values.len() * 4);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wp_vocab(words: &[&str]) -> Vocabulary {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(tokens, VocabKind::WordPiece).unwrap()
    }

    /// Every split of `word` into vocabulary pieces (first unprefixed, rest `##`).
    fn all_decompositions(v: &Vocabulary, word: &[char], first: bool) -> Vec<Vec<u32>> {
        if word.is_empty() {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for end in 1..=word.len() {
            let mut piece: String = word[..end].iter().collect();
            if !first {
                piece.insert_str(0, "##");
            }
            if let Some(id) = v.id(&piece).filter(|&id| id > UNK) {
                for mut rest in all_decompositions(v, &word[end..], false) {
                    rest.insert(0, id);
                    out.push(rest);
                }
            }
        }
        out
    }

    #[test]
    fn default_vocab_orders_by_frequency() {
        let v = Vocabulary::build_default(&["a b", "a"], 6).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<bos>", "<eos>", "<unk>", "a", "b"]);
        let punct = Vocabulary::build_default(&["a, b.", "a"], 6).unwrap();
        assert_eq!(punct.tokens(), v.tokens());
    }

    #[test]
    fn default_vocab_ties_are_lexicographic() {
        let v = Vocabulary::build_default(&["zeta alpha mid", "mid"], 6).unwrap();
        assert_eq!(&v.tokens()[4..], &["mid", "alpha"]);
    }

    #[test]
    fn default_vocab_errors() {
        assert!(matches!(Vocabulary::build_default(&["a"], 4), Err(Error::Config(_))));
        let empty: [&str; 0] = [];
        assert!(matches!(Vocabulary::build_default(&empty, 10), Err(Error::Data { .. })));
    }

    #[test]
    fn rare_words_map_to_unk_under_a_12000_cap() {
        // 12000 frequent words fill the cap; each rare word appears once
        let mut corpus: Vec<String> = (0..12_000)
            .map(|i| format!("w{i:05} w{i:05} w{i:05}"))
            .collect();
        corpus.push("the USS liberty shipwreck in WWII".to_string());
        let v = Vocabulary::build_default(&corpus, 12_000).unwrap();
        assert_eq!(v.len(), 12_000);
        let ids = v.tokenize_default("USS liberty shipwreck WWII");
        assert_eq!(ids, vec![UNK; 4]);
    }

    #[test]
    fn shipwreck_splits_into_three_pieces() {
        let v = wp_vocab(&["ship", "##wr", "##eck", "##w", "the"]);
        let ids = v.wordpiece_tokenize("shipwreck");
        let pieces: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(pieces, vec!["ship", "##wr", "##eck"]);
        assert_eq!(v.detokenize(&ids), "shipwreck");
        assert_eq!(v.wordpiece_tokenize("the"), vec![v.id("the").unwrap()]);
    }

    #[test]
    fn wordpiece_unknown_character_gives_unk() {
        let toy = [
            "a", "b", "c", "ab", "abc", "ca", "##a", "##b", "##c", "##ab", "##bc", "##ca", "cab", "ba", "##cab",
            "##bb",
        ];
        let v = wp_vocab(&toy);
        assert_eq!(v.len(), 20);
        for word in ["abx", "xab", "cxa", "é"] {
            let chars: Vec<char> = word.chars().collect();
            assert!(all_decompositions(&v, &chars, true).is_empty());
            assert_eq!(v.wordpiece_tokenize(word), vec![UNK]);
        }
    }

    #[test]
    fn detokenize_drops_specials() {
        let v = Vocabulary::build_default(&["a b"], 6).unwrap();
        let ids = vec![BOS, v.id("a").unwrap(), v.id("b").unwrap(), EOS];
        assert_eq!(v.detokenize(&ids), "a b");
        assert_eq!(v.encode_for_training("A b!"), ids);
    }

    #[test]
    fn load_rejects_bad_specials_and_continuations() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        fs::write(&p, "<bos>\n<pad>\n<eos>\n<unk>\nx\n").unwrap();
        assert!(Vocabulary::load(&p, VocabKind::Default).is_err());
        fs::write(&p, "<pad>\n<bos>\n<eos>\n<unk>\nx\n##y\n").unwrap();
        assert!(Vocabulary::load(&p, VocabKind::Default).is_err());
        let v = Vocabulary::load(&p, VocabKind::WordPiece).unwrap();
        assert_eq!(v.id("##y"), Some(5));
        v.save(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "<pad>\n<bos>\n<eos>\n<unk>\nx\n##y\n");
    }

    #[test]
    fn embedding_load_and_freeze() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.fpee");
        let v = Vocabulary::build_default(&["a b"], 6).unwrap();
        let values: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        save_embedding_matrix(&p, 6, 2, &values).unwrap();
        let e = load_embedding_matrix(&v, &p, 2, true).unwrap();
        assert_eq!(e.shape(), &[6, 2]);
        assert_eq!(e.to_vec(), values);
        assert!(!e.requires_grad());
        let trainable = load_embedding_matrix(&v, &p, 2, false).unwrap();
        assert!(trainable.requires_grad());

        let err = load_embedding_matrix(&v, &p, 3, true).unwrap_err();
        assert!(err.to_string().contains("expected 6×3"), "{err}");
    }

    #[test]
    fn default_unk_rate_is_monotone_in_cap() {
        let train = ["a a a b b c d e f", "c c g h", "a b i j k"];
        let held_out = ["a b c d x y", "g h k z"];
        let mut last = f64::INFINITY;
        for cap in 5..16 {
            let v = Vocabulary::build_default(&train, cap).unwrap();
            assert!(v.len() <= cap);
            let rate = v.unk_rate(&held_out);
            assert!(rate <= last);
            last = rate;
        }
    }

    proptest! {
        #[test]
        fn wordpiece_round_trip_on_covered_sentences(idx in proptest::collection::vec(proptest::collection::vec(0usize..6, 1..4), 1..6)) {
            let stems = ["ship", "car", "run", "a", "blue", "go"];
            let conts = ["##wr", "##eck", "##s", "##ing", "##ed", "##y"];
            let mut words: Vec<&str> = stems.to_vec();
            words.extend(conts);
            let v = wp_vocab(&words);
            let sentence: Vec<String> = idx.iter().map(|w| {
                let mut s = stems[w[0]].to_string();
                for &c in &w[1..] { s.push_str(&conts[c][2..]); }
                s
            }).collect();
            let sentence = sentence.join(" ");
            let ids = v.wordpiece_tokenize(&sentence);
            prop_assert!(ids.len() >= idx.len());
            prop_assert!(!ids.contains(&UNK));
            prop_assert_eq!(v.detokenize(&ids), sentence);
        }

        #[test]
        fn wordpiece_output_is_a_valid_decomposition(word in "[abcx]{1,7}") {
            let toy = ["a", "b", "c", "ab", "abc", "ca", "##a", "##b", "##c", "##ab", "##bc", "##ca", "cab", "ba", "##cab", "bb"];
            let v = wp_vocab(&toy);
            let chars: Vec<char> = word.chars().collect();
            let all = all_decompositions(&v, &chars, true);
            let ids = v.wordpiece_tokenize(&word);
            prop_assert!(!ids.is_empty());
            if all.is_empty() {
                prop_assert_eq!(ids, vec![UNK]);
            } else if ids != vec![UNK] {
                prop_assert!(all.contains(&ids));
                // greedy takes the longest admissible first piece
                let longest = all.iter().map(|d| v.token(d[0]).unwrap().len()).max().unwrap();
                let first_len = v.token(ids[0]).unwrap().len();
                prop_assert!(first_len >= longest);
            }
        }

        #[test]
        fn default_tokens_stay_inside_the_cap(cap in 5usize..12, text in "[a-f ]{0,40}") {
            let v = Vocabulary::build_default(&["a b c d e f a b c a b a"], cap).unwrap();
            prop_assert!(v.tokenize_default(&text).iter().all(|&id| (id as usize) < v.len()));
        }
    }
}
