//! Random tiny instances shared by the integration suites.

#![allow(dead_code)]

use earnn::embedding::EmbeddingTable;
use earnn::linalg::Matrix;
use earnn::network::{AnswerInput, ModelParams, ModelShape, QuestionInput};
use rand::Rng;

/// Every parameter uniform in `[-scale, scale]`.
pub fn random_params<R: Rng>(rng: &mut R, k: usize, vocab: usize, scale: f64) -> ModelParams {
    let emb = Matrix::from_vec(vocab, k, (0..vocab * k).map(|_| rng.gen_range(-scale..=scale)).collect());
    let mut p = ModelParams::zeros(ModelShape::square(k), EmbeddingTable::from_matrix(emb).unwrap()).unwrap();
    for t in p.tensors_mut() {
        for v in t {
            *v = rng.gen_range(-scale..=scale);
        }
    }
    p
}

fn tokens<R: Rng>(rng: &mut R, vocab: usize, max_len: usize) -> Vec<usize> {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| rng.gen_range(0..vocab)).collect()
}

/// A question of at most `max_len` words with one to three topic phrases.
pub fn random_question<R: Rng>(rng: &mut R, vocab: usize, max_len: usize) -> QuestionInput {
    let phrases = rng.gen_range(1..=3);
    QuestionInput {
        tokens: tokens(rng, vocab, max_len),
        topics: (0..phrases).map(|_| tokens(rng, vocab, 2)).collect(),
    }
}

/// An answer of at most `max_sentences` sentences of at most `max_len`
/// words, posted up to `spread` seconds after `t0`.
pub fn random_answer<R: Rng>(
    rng: &mut R,
    vocab: usize,
    max_sentences: usize,
    max_len: usize,
    t0: i64,
    spread: i64,
) -> AnswerInput {
    let n = rng.gen_range(1..=max_sentences);
    AnswerInput {
        sentences: (0..n).map(|_| tokens(rng, vocab, max_len)).collect(),
        timestamp: t0 + rng.gen_range(0..=spread),
    }
}
