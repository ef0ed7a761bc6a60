//! Central finite-difference verification of the backward pass.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward, triple_loss, Fault};
use crate::corpus::{synth_corpus, SynthSpec};
use crate::dataset::{Dataset, TripleRef};
use crate::embedding::{build_vocab, init_embeddings};
use crate::error::{Error, Result};
use crate::network::{ModelParams, ModelShape, VariantConfig, TENSOR_NAMES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked fully.
    pub samples_per_tensor: usize,
    pub seed: u64,
    pub fault: Fault,
    pub train_embeddings: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples_per_tensor: 200,
            seed: 0,
            fault: Fault::None,
            train_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateError {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: CoordinateError,
    pub checked: usize,
    /// `(tensor, coordinates checked, max relative error)`
    pub per_tensor: Vec<(&'static str, usize, f64)>,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic hinge gradients against central differences for one
/// violating triple, with dropout off.
pub fn grad_check(
    p: &ModelParams,
    data: &Dataset,
    t: TripleRef,
    variant: VariantConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = triple_loss(p, data, t, variant, None)?;
    if !(base.delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "probe triple is not violated (delta = {})",
            base.delta
        )));
    }
    let grads = backward(p, &base, opts.fault, opts.train_embeddings)?;
    let emb_rows = p.embeddings.len();
    let dim = p.embeddings.dim();
    let mut analytic: Vec<Vec<f64>> = grads.dense().iter().map(|g| g.to_vec()).collect();
    analytic.push(grads.dense_embeddings(emb_rows, dim));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = p.clone();
    let mut per_tensor = Vec::new();
    let mut worst: Option<CoordinateError> = None;
    let mut checked = 0;
    let tensor_count = if opts.train_embeddings { TENSOR_NAMES.len() } else { TENSOR_NAMES.len() - 1 };
    for ti in 0..tensor_count {
        let len = analytic[ti].len();
        let mut coords: BTreeSet<usize> = if len <= opts.samples_per_tensor {
            (0..len).collect()
        } else {
            index::sample(&mut rng, len, opts.samples_per_tensor).into_iter().collect()
        };
        if TENSOR_NAMES[ti] == "embeddings" {
            // Always cover the rows the triple actually touches.
            for &row in grads.embeddings.keys() {
                coords.extend(row * dim..(row + 1) * dim);
            }
        }
        let mut tensor_max = 0.0f64;
        for &c in &coords {
            let orig = work.tensors()[ti][c];
            work.tensors_mut()[ti][c] = orig + opts.epsilon;
            let plus = triple_loss(&work, data, t, variant, None)?.loss;
            work.tensors_mut()[ti][c] = orig - opts.epsilon;
            let minus = triple_loss(&work, data, t, variant, None)?.loss;
            work.tensors_mut()[ti][c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic[ti][c];
            let err = relative_error(a, numeric);
            tensor_max = tensor_max.max(err);
            if worst.as_ref().is_none_or(|w| err > w.rel_error) {
                worst = Some(CoordinateError {
                    tensor: TENSOR_NAMES[ti],
                    index: c,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
        checked += coords.len();
        per_tensor.push((TENSOR_NAMES[ti], coords.len(), tensor_max));
    }
    let worst = worst.expect("at least one coordinate checked");
    Ok(GradCheckReport {
        max_rel_error: worst.rel_error,
        worst,
        checked,
        per_tensor,
    })
}

/// A small random probe: one question, three answers of at most three
/// three-word sentences, `K = H = 4`, and every parameter (embeddings
/// included) uniform in `[-1, 1]`.
///
/// Glorot-scale weights are avoided on purpose: with tiny hidden states the
/// two arms of a triple nearly cancel in the question half of the head, and
/// those coordinates fall below finite-difference resolution. The margin is
/// large enough that the triple always violates it.
pub fn random_instance(seed: u64) -> Result<(ModelParams, Dataset, TripleRef)> {
    let spec = SynthSpec {
        n_questions: 1,
        answers_per_question: 3,
        vocab_size: 24,
        seed,
        question_words: 3,
        sentences_per_answer: 3,
        words_per_sentence: 3,
        topic_phrases: 2,
        max_overlap: 2,
        max_distractors: 1,
        ..SynthSpec::default()
    };
    let synth = synth_corpus(&spec)?;
    let vocab = build_vocab(&synth.corpus, 1)?;
    let data = Dataset::encode(&synth.corpus, &vocab);
    let embeddings = init_embeddings(&vocab, 4, seed)?;
    let mut p = ModelParams::zeros(ModelShape::square(4), embeddings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for tensor in p.tensors_mut() {
        for v in tensor {
            *v = rng.gen_range(-1.0..=1.0);
        }
    }
    p.margin = 1.5;
    Ok((p, data, TripleRef { question: 0, pos: 0, neg: 1 }))
}
