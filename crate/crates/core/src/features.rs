//! Question featurization: TF-IDF over a fitted vocabulary plus a fixed block
//! of lexical and question-type indicators.
//!
//! Column layout of a featurized question is `[0, n_terms)` for TF-IDF terms
//! followed by [`STRUCTURED_LEN`] structured slots in the order given by
//! [`StructuredSlot`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on runs of whitespace. Punctuation stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Term index and document frequencies fitted on training questions only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    term_index: BTreeMap<String, usize>,
    terms: Vec<(String, usize)>,
    n_docs: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyDoc {
    n_docs: usize,
    terms: Vec<TermDoc>,
}

#[derive(Serialize, Deserialize)]
struct TermDoc {
    t: String,
    df: usize,
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabularyDoc {
            n_docs: self.n_docs,
            terms: self
                .terms
                .iter()
                .map(|(t, df)| TermDoc {
                    t: t.clone(),
                    df: *df,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = VocabularyDoc::deserialize(d)?;
        let terms: Vec<(String, usize)> = doc.terms.into_iter().map(|t| (t.t, t.df)).collect();
        Vocabulary::from_parts(terms, doc.n_docs).map_err(serde::de::Error::custom)
    }
}

impl Vocabulary {
    fn from_parts(terms: Vec<(String, usize)>, n_docs: usize) -> Result<Self> {
        let mut term_index = BTreeMap::new();
        for (i, (t, df)) in terms.iter().enumerate() {
            if *df == 0 || *df > n_docs {
                return Err(Error::InvalidConfig(format!(
                    "term {t:?} has document frequency {df} outside [1, {n_docs}]"
                )));
            }
            if term_index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate term {t:?}")));
            }
        }
        Ok(Self {
            term_index,
            terms,
            n_docs,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.term_index.get(term).copied()
    }

    pub fn doc_freq(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.terms[i].1)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.term_index.contains_key(term)
    }

    /// Terms in column order.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|(t, _)| t.as_str())
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        let df = self.terms[index].1 as f64;
        ((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0
    }

    /// Total number of feature columns (terms plus structured slots).
    pub fn n_features(&self) -> usize {
        self.len() + STRUCTURED_LEN
    }
}

/// Fits a vocabulary over every distinct token. Terms are indexed in
/// lexicographic order.
pub fn fit_vocabulary<S: AsRef<str>>(questions: &[S]) -> Result<Vocabulary> {
    fit_vocabulary_capped(questions, None)
}

/// Like [`fit_vocabulary`] but keeps at most `max_terms` terms, preferring
/// higher document frequency and breaking ties lexicographically.
pub fn fit_vocabulary_capped<S: AsRef<str>>(questions: &[S], max_terms: Option<usize>) -> Result<Vocabulary> {
    if questions.is_empty() {
        return Err(Error::EmptyInput("vocabulary needs at least one question"));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for q in questions {
        let distinct: BTreeSet<String> = tokenize(q.as_ref()).into_iter().collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut terms: Vec<(String, usize)> = df.into_iter().collect();
    if let Some(cap) = max_terms {
        if terms.len() > cap {
            terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            terms.truncate(cap);
            terms.sort_by(|a, b| a.0.cmp(&b.0));
        }
    }
    Vocabulary::from_parts(terms, questions.len())
}

/// Structured slot order, appended after the TF-IDF block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuredSlot {
    TokenLength = 0,
    HasNumeric,
    WhWhat,
    WhWhere,
    WhWhen,
    WhWho,
    WhWhy,
    WhHow,
    WhWhich,
    WhNone,
    YesNo,
    Counting,
    Color,
    Spatial,
}

pub const STRUCTURED_LEN: usize = 14;

const WH_WORDS: [&str; 7] = ["what", "where", "when", "who", "why", "how", "which"];
const YES_NO_OPENERS: [&str; 13] = [
    "is", "are", "was", "were", "do", "does", "did", "can", "could", "will", "would", "has", "have",
];
const SPATIAL_WORDS: [&str; 8] = [
    "where", "left", "right", "behind", "front", "above", "below", "under",
];

/// Which WH-word (if any) a question uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhWord {
    What,
    Where,
    When,
    Who,
    Why,
    How,
    Which,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredFeatures {
    pub token_length: usize,
    pub has_numeric: bool,
    pub wh: WhWord,
    pub yes_no: bool,
    pub counting: bool,
    pub color: bool,
    pub spatial: bool,
}

impl StructuredFeatures {
    fn degenerate() -> Self {
        Self {
            token_length: 0,
            has_numeric: false,
            wh: WhWord::None,
            yes_no: false,
            counting: false,
            color: false,
            spatial: false,
        }
    }

    /// Dense slot values in [`StructuredSlot`] order.
    pub fn slots(&self, degenerate: bool) -> [f64; STRUCTURED_LEN] {
        let mut out = [0.0; STRUCTURED_LEN];
        if degenerate {
            return out;
        }
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        out[StructuredSlot::TokenLength as usize] = self.token_length as f64;
        out[StructuredSlot::HasNumeric as usize] = flag(self.has_numeric);
        let wh_slot = StructuredSlot::WhWhat as usize + self.wh as usize;
        out[wh_slot] = 1.0;
        out[StructuredSlot::YesNo as usize] = flag(self.yes_no);
        out[StructuredSlot::Counting as usize] = flag(self.counting);
        out[StructuredSlot::Color as usize] = flag(self.color);
        out[StructuredSlot::Spatial as usize] = flag(self.spatial);
        out
    }
}

/// Featurized question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// `(term index, weight)` with strictly increasing indices.
    pub sparse_tfidf: Vec<(usize, f64)>,
    pub structured: StructuredFeatures,
    /// Set for empty input text; structured slots are then all zero.
    pub degenerate: bool,
    n_terms: usize,
}

impl FeatureVector {
    pub fn n_features(&self) -> usize {
        self.n_terms + STRUCTURED_LEN
    }

    /// All nonzero columns in increasing column order.
    pub fn nonzero_columns(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .sparse_tfidf
            .iter()
            .copied()
            .filter(|&(_, v)| v != 0.0)
            .collect();
        for (i, v) in self.structured.slots(self.degenerate).into_iter().enumerate() {
            if v != 0.0 {
                out.push((self.n_terms + i, v));
            }
        }
        out
    }

    /// Value of column `col`; absent sparse coordinates are exactly 0.0.
    pub fn get(&self, col: usize) -> f64 {
        if col < self.n_terms {
            match self.sparse_tfidf.binary_search_by_key(&col, |&(i, _)| i) {
                Ok(pos) => self.sparse_tfidf[pos].1,
                Err(_) => 0.0,
            }
        } else {
            self.structured
                .slots(self.degenerate)
                .get(col - self.n_terms)
                .copied()
                .unwrap_or(0.0)
        }
    }
}

fn strip_punct(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Keyword rules for the coarse question-type slots.
pub fn structured_features(text: &str) -> StructuredFeatures {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return StructuredFeatures::degenerate();
    }
    let words: Vec<&str> = tokens.iter().map(|t| strip_punct(t)).collect();
    let joined = words.join(" ");
    let wh = words
        .iter()
        .find_map(|w| WH_WORDS.iter().position(|x| x == w))
        .map(|i| match i {
            0 => WhWord::What,
            1 => WhWord::Where,
            2 => WhWord::When,
            3 => WhWord::Who,
            4 => WhWord::Why,
            5 => WhWord::How,
            _ => WhWord::Which,
        })
        .unwrap_or(WhWord::None);
    let padded = format!(" {joined} ");
    StructuredFeatures {
        token_length: tokens.len(),
        has_numeric: tokens.iter().any(|t| t.chars().any(|c| c.is_ascii_digit())),
        wh,
        yes_no: YES_NO_OPENERS.contains(&words[0]),
        counting: padded.contains(" how many ") || padded.contains(" how much "),
        color: words.iter().any(|w| *w == "color" || *w == "colour"),
        spatial: words.iter().any(|w| SPATIAL_WORDS.contains(w)) || padded.contains(" on top "),
    }
}

/// TF-IDF (raw counts, smoothed idf, L2-normalized) plus structured slots.
/// Out-of-vocabulary tokens contribute nothing; the vocabulary is never
/// extended.
pub fn featurize(question: &str, vocab: &Vocabulary) -> FeatureVector {
    let tokens = tokenize(question);
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for t in &tokens {
        if let Some(i) = vocab.index_of(t) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut sparse: Vec<(usize, f64)> = counts
        .into_iter()
        .map(|(i, tf)| (i, tf as f64 * vocab.idf(i)))
        .collect();
    let norm = sparse.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut sparse {
            *v /= norm;
        }
    }
    FeatureVector {
        sparse_tfidf: sparse,
        structured: structured_features(question),
        degenerate: tokens.is_empty(),
        n_terms: vocab.len(),
    }
}
