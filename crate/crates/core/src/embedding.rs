//! Vocabulary and word vectors.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Token reserved for rare and unseen words.
pub const OOV_TOKEN: &str = "<oov>";

/// Word ↔ index map. Index 0 is the shared out-of-vocabulary slot; the
/// remaining words are ordered by frequency (descending) then
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    min_count: usize,
    oov_index: usize,
    words: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_words(r.words, r.min_count)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            min_count: v.min_count,
            oov_index: v.oov_index(),
            words: v.words,
        }
    }
}

impl Vocabulary {
    /// `words[0]` must be the OOV token.
    fn from_words(words: Vec<String>, min_count: usize) -> Self {
        let index = words
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            words,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn oov_index(&self) -> usize {
        0
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Index of a word, or the OOV index.
    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }
}

/// Counts every token of questions, topics and answers; words seen at least
/// `min_count` times get their own index.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for q in corpus.questions() {
        for w in q.tokens.iter().chain(q.topics.iter().flatten()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    for a in corpus.all_answers() {
        for w in a.sentences.iter().flatten() {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= min_count && w != OOV_TOKEN)
        .collect();
    // BTreeMap order is lexicographic; a stable sort keeps it within ties.
    kept.sort_by(|a, b| b.1.cmp(&a.1));
    let words = std::iter::once(OOV_TOKEN.to_string())
        .chain(kept.into_iter().map(|(w, _)| w.to_string()))
        .collect();
    Ok(Vocabulary::from_words(words, min_count))
}

/// `|V| × K` word vectors, row `i` for vocabulary index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: Matrix,
}

/// Random initialisation range for word vectors.
pub const INIT_RANGE: f64 = 0.1;

fn random_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect()
}

impl EmbeddingTable {
    pub fn from_matrix(vectors: Matrix) -> Result<Self> {
        if vectors.cols() == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if !vectors.is_finite() {
            return Err(Error::InvalidArgument("non-finite embedding entry".into()));
        }
        Ok(EmbeddingTable { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    #[inline]
    pub fn row(&self, index: usize) -> &[f64] {
        self.vectors.row(index)
    }

    #[inline]
    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        self.vectors.row_mut(index)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.vectors
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.vectors
    }
}

/// Uniform `[-0.1, 0.1]` vectors for every row, including the OOV row.
pub fn init_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(vocab.len(), dim);
    for r in 0..vocab.len() {
        m.row_mut(r).copy_from_slice(&random_row(&mut rng, dim));
    }
    EmbeddingTable::from_matrix(m)
}

/// Reads `word v1 .. vK` lines. Vocabulary words found in the file take the
/// file's vector; the rest keep their seeded random initialisation.
pub fn load_embeddings(vocab: &Vocabulary, path: &Path, seed: u64) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut found: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>().map_err(|e| parse_err(i + 1, format!("`{p}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(parse_err(i + 1, format!("no vector for `{word}`")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(i + 1, "non-finite value".into()));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(k) if k != values.len() => {
                return Err(parse_err(
                    i + 1,
                    format!("dimension mismatch: expected {k}, found {}", values.len()),
                ))
            }
            _ => {}
        }
        if vocab.contains(word) {
            found.push((vocab.lookup(word), values));
        }
    }
    let dim = dim.ok_or_else(|| parse_err(0, "no vectors in file".into()))?;
    let mut table = init_embeddings(vocab, dim, seed)?;
    for (idx, v) in found {
        table.row_mut(idx).copy_from_slice(&v);
    }
    Ok(table)
}

/// Looks each token up; unknown tokens get the OOV row.
pub fn embed_sequence(table: &EmbeddingTable, vocab: &Vocabulary, tokens: &[String]) -> Result<Matrix> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("cannot embed an empty sequence".into()));
    }
    let mut m = Matrix::zeros(tokens.len(), table.dim());
    for (i, t) in tokens.iter().enumerate() {
        m.row_mut(i).copy_from_slice(table.row(vocab.lookup(t)));
    }
    Ok(m)
}
