//! Text preprocessing and word n-gram bag-of-words features.
//!
//! The pipeline is `preprocess` (uncase, strip accents, tokenize, drop
//! stopwords) followed by `extract_ngrams` and `vectorize` against a
//! [`Vocabulary`] built from a training corpus by document frequency.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::features::FeatureVector;

/// Longest supported n-gram length.
pub const MAX_NGRAM: usize = 3;

const DEFAULT_STOPWORDS: &str = include_str!("../config/stopwords_pt.txt");

#[derive(Debug, Error)]
pub enum TextError {
    #[error("n-gram length must be in 1..={MAX_NGRAM}, got {0}")]
    NgramRange(usize),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary was built with n_max={vocab}, vectorized with n_max={requested}")]
    NgramMismatch { vocab: usize, requested: usize },
    #[error("malformed vocabulary line {line}: {reason}")]
    MalformedVocabulary { line: usize, reason: String },
}

/// Ordered tokens: lowercase ASCII alphanumerics, never empty.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Keeps only the first `limit` tokens.
    pub fn truncated(&self, limit: usize) -> TokenSeq {
        TokenSeq(self.0.iter().take(limit).cloned().collect())
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl From<Vec<&str>> for TokenSeq {
    fn from(tokens: Vec<&str>) -> Self {
        TokenSeq(tokens.into_iter().map(str::to_owned).collect())
    }
}

/// Stopword set, stored in the same folded form `preprocess` produces.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct StopWords(HashSet<String>);

impl From<Vec<String>> for StopWords {
    fn from(words: Vec<String>) -> Self {
        StopWords(words.into_iter().collect())
    }
}

impl From<StopWords> for Vec<String> {
    fn from(s: StopWords) -> Self {
        s.words()
    }
}

impl StopWords {
    pub fn empty() -> Self {
        StopWords(HashSet::new())
    }

    /// Parses one word per line; blank lines and `#` comments are skipped.
    pub fn from_lines(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .flat_map(fold_tokens)
            .collect();
        StopWords(words)
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        StopWords(words.into_iter().flat_map(fold_tokens).collect())
    }

    /// The bundled Portuguese list. Negations (`nao`, `nem`) are deliberately absent.
    pub fn portuguese() -> Self {
        Self::from_lines(DEFAULT_STOPWORDS)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    /// Sorted word list.
    pub fn words(&self) -> Vec<String> {
        let mut w: Vec<String> = self.0.iter().cloned().collect();
        w.sort();
        w
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn fold_tokens(text: &str) -> Vec<String> {
    let folded: String = text.to_lowercase().nfd().filter(|c| !is_combining_mark(*c)).collect();
    folded
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

/// Uncases, strips combining marks after canonical decomposition, splits on
/// runs of non-alphanumeric characters and removes stopwords.
pub fn preprocess(text: &str, stopwords: &StopWords) -> TokenSeq {
    TokenSeq(fold_tokens(text).into_iter().filter(|t| !stopwords.contains(t)).collect())
}

/// All contiguous word n-grams of length `1..=n_max`, joined with `_`,
/// shorter n-grams first and left to right within each length.
pub fn extract_ngrams(tokens: &TokenSeq, n_max: usize) -> Result<Vec<String>, TextError> {
    check_ngram(n_max)?;
    let toks = tokens.tokens();
    let mut out = Vec::new();
    for n in 1..=n_max {
        if n > toks.len() {
            break;
        }
        out.extend(toks.windows(n).map(|w| w.join("_")));
    }
    Ok(out)
}

fn check_ngram(n_max: usize) -> Result<(), TextError> {
    if (1..=MAX_NGRAM).contains(&n_max) {
        Ok(())
    } else {
        Err(TextError::NgramRange(n_max))
    }
}

/// Bijective n-gram → column map with a size cap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    max_size: usize,
    ngram_max: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyData {
    terms: Vec<String>,
    max_size: usize,
    ngram_max: usize,
}

impl From<VocabularyData> for Vocabulary {
    fn from(d: VocabularyData) -> Self {
        Vocabulary::from_terms(d.terms, d.max_size, d.ngram_max)
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData { terms: v.terms, max_size: v.max_size, ngram_max: v.ngram_max }
    }
}

impl Vocabulary {
    fn from_terms(terms: Vec<String>, max_size: usize, ngram_max: usize) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { terms, index, max_size, ngram_max }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn ngram_max(&self) -> usize {
        self.ngram_max
    }

    pub fn get(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Line-oriented `ngram<TAB>index` form with a `#` header carrying the
    /// n-gram length and cap.
    pub fn to_text(&self) -> String {
        let mut out = format!("# ngram_max={} max_size={}\n", self.ngram_max, self.max_size);
        for (i, t) in self.terms.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let mut ngram_max = None;
        let mut max_size = None;
        let mut rows: BTreeMap<usize, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let bad = |reason: &str| TextError::MalformedVocabulary { line: lineno, reason: reason.into() };
            if let Some(header) = line.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("ngram_max", v)) => ngram_max = Some(v.parse().map_err(|_| bad("bad ngram_max"))?),
                        Some(("max_size", v)) => max_size = Some(v.parse().map_err(|_| bad("bad max_size"))?),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (term, idx) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let idx: usize = idx.parse().map_err(|_| bad("index is not an integer"))?;
            if rows.insert(idx, term.to_owned()).is_some() {
                return Err(bad("duplicate index"));
            }
        }
        if rows.keys().enumerate().any(|(i, k)| i != *k) {
            return Err(TextError::MalformedVocabulary { line: 0, reason: "indices are not dense".into() });
        }
        let terms: Vec<String> = rows.into_values().collect();
        let n = terms.len();
        let ngram_max = ngram_max.unwrap_or(1);
        check_ngram(ngram_max)?;
        let vocab = Vocabulary::from_terms(terms, max_size.unwrap_or(n), ngram_max);
        if vocab.index.len() != n {
            return Err(TextError::MalformedVocabulary { line: 0, reason: "duplicate n-gram".into() });
        }
        Ok(vocab)
    }
}

/// Keeps the `max_size` n-grams with the highest document frequency, ties
/// broken by ascending lexicographic order; column indices follow that rank.
pub fn build_vocabulary(corpus: &[TokenSeq], n_max: usize, max_size: usize) -> Result<Vocabulary, TextError> {
    check_ngram(n_max)?;
    if corpus.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<String> = extract_ngrams(doc, n_max)?.into_iter().collect();
        for g in unique {
            *df.entry(g).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    Ok(Vocabulary::from_terms(ranked.into_iter().map(|(t, _)| t).collect(), max_size, n_max))
}

/// Sparse count vector; indices strictly increasing, counts at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dimension: usize,
    pub pairs: Vec<(usize, u32)>,
}

impl SparseVector {
    pub fn to_features(&self, weighting: Weighting) -> FeatureVector {
        let entries = self
            .pairs
            .iter()
            .map(|&(i, c)| {
                let v = match weighting {
                    Weighting::Counts => f64::from(c),
                    Weighting::Binary => 1.0,
                };
                (i, v)
            })
            .collect();
        FeatureVector::from_sorted(self.dimension, entries)
    }
}

/// How n-gram occurrences become feature values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Counts,
    Binary,
}

/// Counts in-vocabulary n-grams; out-of-vocabulary n-grams are dropped.
pub fn vectorize(tokens: &TokenSeq, vocab: &Vocabulary, n_max: usize) -> Result<SparseVector, TextError> {
    if n_max != vocab.ngram_max {
        return Err(TextError::NgramMismatch { vocab: vocab.ngram_max, requested: n_max });
    }
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for g in extract_ngrams(tokens, n_max)? {
        if let Some(i) = vocab.get(&g) {
            *counts.entry(i).or_default() += 1;
        }
    }
    Ok(SparseVector { dimension: vocab.len(), pairs: counts.into_iter().collect() })
}

/// A fitted text-to-features encoder: preprocessing, optional token
/// truncation and n-gram bag-of-words over a fixed vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BowEncoder {
    pub vocabulary: Vocabulary,
    pub stopwords: StopWords,
    pub weighting: Weighting,
    /// Tokens kept after preprocessing; `None` keeps all.
    pub truncation: Option<usize>,
}

impl BowEncoder {
    pub fn fit<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        stopwords: StopWords,
        ngram_max: usize,
        max_size: usize,
        weighting: Weighting,
        truncation: Option<usize>,
    ) -> Result<Self, TextError> {
        let docs: Vec<TokenSeq> = texts.into_iter().map(|t| truncate(preprocess(t, &stopwords), truncation)).collect();
        let vocabulary = build_vocabulary(&docs, ngram_max, max_size)?;
        Ok(BowEncoder { vocabulary, stopwords, weighting, truncation })
    }

    pub fn dimension(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn tokens(&self, text: &str) -> TokenSeq {
        truncate(preprocess(text, &self.stopwords), self.truncation)
    }

    pub fn encode(&self, text: &str) -> FeatureVector {
        self.encode_tokens(&self.tokens(text))
    }

    pub fn encode_tokens(&self, tokens: &TokenSeq) -> FeatureVector {
        vectorize(tokens, &self.vocabulary, self.vocabulary.ngram_max)
            .expect("vocabulary n-gram length is valid")
            .to_features(self.weighting)
    }
}

fn truncate(tokens: TokenSeq, limit: Option<usize>) -> TokenSeq {
    match limit {
        Some(l) if tokens.len() > l => tokens.truncated(l),
        _ => tokens,
    }
}
