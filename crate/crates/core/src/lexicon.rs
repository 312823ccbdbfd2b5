//! Vocabulary construction and frequency-stratified keyword sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus_ingest::TokenCounts;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed keyword sidecar {path}: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// The English stop set of Lucene's `StandardAnalyzer`.
const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

/// A named stopword list. The id is recorded with every vocabulary built from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords {
    id: String,
    words: HashSet<String>,
}

impl Stopwords {
    pub fn english() -> Self {
        Stopwords::new("lucene-english", ENGLISH_STOPWORDS.iter().copied())
    }

    pub fn none() -> Self {
        Stopwords::new("none", std::iter::empty::<&str>())
    }

    pub fn new<I, S>(id: impl Into<String>, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Stopwords {
            id: id.into(),
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// Load a one-word-per-line list; `#` starts a comment line.
    pub fn from_file(path: &Path) -> Result<Self, LexiconError> {
        let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let words = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        let id = format!("file:{}", short_hash(text.as_bytes()));
        Ok(Stopwords::new(id, words))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

/// Split on whitespace and punctuation, lowercase, and drop stopwords.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !stopwords.contains(t))
        .collect()
}

/// Which frequency a vocabulary is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyKind {
    /// Number of documents containing the term.
    #[default]
    Document,
    /// Raw number of occurrences.
    Occurrence,
}

impl std::str::FromStr for FrequencyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "document" | "doc" => Ok(FrequencyKind::Document),
            "occurrence" | "raw" => Ok(FrequencyKind::Occurrence),
            other => Err(format!("unknown frequency kind `{other}`")),
        }
    }
}

/// Accumulates both occurrence and document frequencies over tokenized documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermCounter {
    occurrence: TokenCounts,
    document: TokenCounts,
    documents: u64,
}

impl TermCounter {
    pub fn new(source_tag: &str) -> Self {
        TermCounter {
            occurrence: TokenCounts::new(source_tag),
            document: TokenCounts::new(source_tag),
            documents: 0,
        }
    }

    pub fn add_document<S: AsRef<str>>(&mut self, tokens: &[S]) {
        self.documents += 1;
        let mut seen = BTreeSet::new();
        for t in tokens {
            let t = t.as_ref();
            self.occurrence.increment(t);
            if seen.insert(t) {
                self.document.increment(t);
            }
        }
    }

    pub fn documents(&self) -> u64 {
        self.documents
    }

    pub fn counts(&self, kind: FrequencyKind) -> &TokenCounts {
        match kind {
            FrequencyKind::Document => &self.document,
            FrequencyKind::Occurrence => &self.occurrence,
        }
    }

    pub fn merge_from(&mut self, other: &TermCounter) {
        self.occurrence.merge_from(&other.occurrence);
        self.document.merge_from(&other.document);
        self.documents += other.documents;
    }
}

/// Filter thresholds applied when building a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFilters {
    pub min_len: usize,
    pub min_freq: u64,
    pub alphabetic_only: bool,
    pub stopword_list_id: String,
}

impl Default for VocabFilters {
    fn default() -> Self {
        VocabFilters {
            min_len: 3,
            min_freq: 100,
            alphabetic_only: true,
            stopword_list_id: Stopwords::english().id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: BTreeMap<String, u64>,
    filters_applied: VocabFilters,
}

/// "Alphabetic" here means ASCII `a`-`z` after lowercasing.
pub fn is_alphabetic_term(term: &str) -> bool {
    !term.is_empty() && term.chars().all(|c| c.is_ascii_lowercase())
}

/// Keep exactly the terms that pass the length, frequency, alphabet and stopword filters.
pub fn build_vocabulary(
    counts: &TokenCounts,
    min_len: usize,
    min_freq: u64,
    alphabetic_only: bool,
    stopwords: &Stopwords,
) -> Vocabulary {
    let terms = counts
        .iter()
        .filter(|(t, n)| {
            t.chars().count() >= min_len
                && *n >= min_freq
                && (!alphabetic_only || is_alphabetic_term(t))
                && !stopwords.contains(t)
        })
        .map(|(t, n)| (t.to_string(), n))
        .collect();
    Vocabulary {
        terms,
        filters_applied: VocabFilters {
            min_len,
            min_freq,
            alphabetic_only,
            stopword_list_id: stopwords.id().to_string(),
        },
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn frequency(&self, term: &str) -> Option<u64> {
        self.terms.get(term).copied()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.terms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn filters_applied(&self) -> &VocabFilters {
        &self.filters_applied
    }

    pub fn to_counts(&self, source_tag: &str) -> TokenCounts {
        TokenCounts::from_pairs(source_tag, self.terms())
    }

    /// Terms sorted by frequency descending, ties lexicographic.
    pub fn sorted_by_frequency(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<_> = self.terms().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// SHA-256 over `term<TAB>freq\n` lines in term order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (t, n) in self.terms() {
            h.update(t.as_bytes());
            h.update(b"\t");
            h.update(n.to_string().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Sidecar metadata written next to a keyword list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub k: usize,
    pub stride: usize,
    pub offset: usize,
    pub seed: u64,
    pub vocabulary_size: usize,
    pub vocabulary_hash: String,
}

/// Keywords drawn at a fixed stride through the frequency-sorted vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSample {
    pub keywords: Vec<String>,
    /// Positions of the keywords in the frequency-sorted vocabulary.
    pub positions: Vec<usize>,
    pub meta: SampleMeta,
}

impl KeywordSample {
    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn sample_size(&self) -> usize {
        self.meta.k
    }

    pub fn stride(&self) -> usize {
        self.meta.stride
    }

    pub fn vocabulary_size(&self) -> usize {
        self.meta.vocabulary_size
    }

    /// One keyword per line, each line newline-terminated.
    pub fn keywords_text(&self) -> String {
        let mut s = String::new();
        for k in &self.keywords {
            s.push_str(k);
            s.push('\n');
        }
        s
    }

    pub fn sidecar_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.meta).expect("sample metadata serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the keyword file contents.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.keywords_text().as_bytes()))
    }

    /// Write `path` (keywords) and `path` with a `.json` extension (sidecar).
    pub fn write(&self, path: &Path) -> Result<PathBuf, LexiconError> {
        let sidecar = sidecar_path(path);
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |source| LexiconError::Io { path: p, source }
        };
        fs::write(path, self.keywords_text()).map_err(io_err(path))?;
        fs::write(&sidecar, self.sidecar_json()).map_err(io_err(&sidecar))?;
        Ok(sidecar)
    }

    /// Read a keyword list and, if present, its sidecar. Without a sidecar the
    /// metadata describes a plain list (stride 1, unknown vocabulary).
    pub fn read(path: &Path) -> Result<KeywordSample, LexiconError> {
        let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let keywords: Vec<String> = text
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        let sidecar = sidecar_path(path);
        let meta = match fs::read_to_string(&sidecar) {
            Ok(s) => serde_json::from_str(&s).map_err(|source| LexiconError::Sidecar {
                path: sidecar.clone(),
                source,
            })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => SampleMeta {
                k: keywords.len(),
                stride: 1,
                offset: 0,
                seed: 0,
                vocabulary_size: keywords.len(),
                vocabulary_hash: String::new(),
            },
            Err(source) => {
                return Err(LexiconError::Io {
                    path: sidecar,
                    source,
                })
            }
        };
        let positions = (0..keywords.len())
            .map(|i| meta.offset + i * meta.stride)
            .collect();
        Ok(KeywordSample {
            keywords,
            positions,
            meta,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Draw `k` keywords at stride `max(1, |vocab| / k)` starting at `seed mod stride`.
pub fn stratified_sample(vocab: &Vocabulary, k: usize, seed: u64) -> Result<KeywordSample, LexiconError> {
    if k == 0 {
        return Err(LexiconError::Argument("sample size k must be at least 1".into()));
    }
    if vocab.is_empty() {
        return Err(LexiconError::Argument("cannot sample from an empty vocabulary".into()));
    }
    let sorted = vocab.sorted_by_frequency();
    let n = sorted.len();
    let stride = (n / k).max(1);
    let offset = (seed % stride as u64) as usize;
    let take = k.min(n);
    let positions: Vec<usize> = (0..take).map(|i| offset + i * stride).collect();
    let keywords = positions.iter().map(|&p| sorted[p].0.to_string()).collect();
    Ok(KeywordSample {
        keywords,
        positions,
        meta: SampleMeta {
            k,
            stride,
            offset,
            seed,
            vocabulary_size: n,
            vocabulary_hash: vocab.content_hash(),
        },
    })
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}
