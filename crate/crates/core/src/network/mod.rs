//! Forward pass: serialized LSTM encoder, sentence- or word-level
//! attention, matching head and time-decayed ranking score.

mod attention;
mod lstm;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, Matrix};

pub use attention::{
    combine_sentences, sent_attention, sentence_attention, topic_embed, word_attention, Attended,
};
pub use lstm::{lstm_step, LstmParams, StepCache, GATES};

pub const DEFAULT_DIM: usize = 50;
pub const DEFAULT_DECAY_HORIZON: f64 = 1e6;
pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    SentenceLevel,
    WordLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantConfig {
    pub attention: Attention,
    pub use_time_decay: bool,
    /// Softmax the sentence cosines before weighting. Off in all presets.
    #[serde(default)]
    pub normalize_sentence_weights: bool,
}

impl VariantConfig {
    /// Word-level attention with the time-decayed ranking score.
    pub const EARNN: VariantConfig = VariantConfig {
        attention: Attention::WordLevel,
        use_time_decay: true,
        normalize_sentence_weights: false,
    };
    /// Word-level attention, ranking by the matching score.
    pub const EARNN_W: VariantConfig = VariantConfig {
        attention: Attention::WordLevel,
        use_time_decay: false,
        normalize_sentence_weights: false,
    };
    /// Sentence-level attention only, ranking by the matching score.
    pub const EARNN_S: VariantConfig = VariantConfig {
        attention: Attention::SentenceLevel,
        use_time_decay: false,
        normalize_sentence_weights: false,
    };

    pub fn name(&self) -> &'static str {
        match (self.attention, self.use_time_decay) {
            (Attention::WordLevel, true) => "earnn",
            (Attention::WordLevel, false) => "earnn_w",
            (Attention::SentenceLevel, false) => "earnn_s",
            (Attention::SentenceLevel, true) => "earnn_s_decay",
        }
    }
}

impl fmt::Display for VariantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "earnn" => Ok(Self::EARNN),
            "earnn_w" => Ok(Self::EARNN_W),
            "earnn_s" => Ok(Self::EARNN_S),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

/// Layer sizes. The hidden size must equal the embedding size because
/// word vectors and hidden states share the attention space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            embed_dim: DEFAULT_DIM,
            hidden_dim: DEFAULT_DIM,
            head_dim: DEFAULT_DIM,
        }
    }
}

impl ModelShape {
    pub fn square(dim: usize) -> Self {
        ModelShape {
            embed_dim: dim,
            hidden_dim: dim,
            head_dim: dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.head_dim == 0 {
            return Err(Error::Shape("dimensions must be positive".into()));
        }
        if self.hidden_dim != self.embed_dim {
            return Err(Error::Shape(format!(
                "hidden size {} must equal embedding size {}",
                self.hidden_dim, self.embed_dim
            )));
        }
        Ok(())
    }
}

pub const TENSOR_NAMES: [&str; 10] = [
    "lstm_q.weights",
    "lstm_q.bias",
    "lstm_a.weights",
    "lstm_a.bias",
    "translation",
    "head_w1",
    "head_b1",
    "head_w2",
    "head_b2",
    "embeddings",
];

/// Every trainable tensor plus the two scalar hyperparameters that shape
/// the score and the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lstm_q: LstmParams,
    pub lstm_a: LstmParams,
    /// `K × K`, scores words by `c_fᵀ W h`.
    pub translation: Matrix,
    /// `U × 2K`
    pub head_w1: Matrix,
    pub head_b1: Vec<f64>,
    /// `U`
    pub head_w2: Vec<f64>,
    pub head_b2: f64,
    pub embeddings: EmbeddingTable,
    pub decay_horizon: f64,
    pub margin: f64,
}

impl ModelParams {
    /// All-zero network weights around the given embeddings.
    pub fn zeros(shape: ModelShape, embeddings: EmbeddingTable) -> Result<Self> {
        shape.validate()?;
        if embeddings.dim() != shape.embed_dim {
            return Err(Error::Shape(format!(
                "embedding dim {} != {}",
                embeddings.dim(),
                shape.embed_dim
            )));
        }
        let (k, u) = (shape.embed_dim, shape.head_dim);
        Ok(ModelParams {
            lstm_q: LstmParams::zeros(k, k),
            lstm_a: LstmParams::zeros(k, k),
            translation: Matrix::zeros(k, k),
            head_w1: Matrix::zeros(u, 2 * k),
            head_b1: vec![0.0; u],
            head_w2: vec![0.0; u],
            head_b2: 0.0,
            embeddings,
            decay_horizon: DEFAULT_DECAY_HORIZON,
            margin: DEFAULT_MARGIN,
        })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            embed_dim: self.embeddings.dim(),
            hidden_dim: self.lstm_q.hidden_dim(),
            head_dim: self.head_b1.len(),
        }
    }

    /// Every trainable tensor as a flat slice, in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            self.lstm_q.weights.as_slice(),
            &self.lstm_q.bias,
            self.lstm_a.weights.as_slice(),
            &self.lstm_a.bias,
            self.translation.as_slice(),
            self.head_w1.as_slice(),
            &self.head_b1,
            &self.head_w2,
            std::slice::from_ref(&self.head_b2),
            self.embeddings.matrix().as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.lstm_q.weights.as_mut_slice(),
            &mut self.lstm_q.bias,
            self.lstm_a.weights.as_mut_slice(),
            &mut self.lstm_a.bias,
            self.translation.as_mut_slice(),
            self.head_w1.as_mut_slice(),
            &mut self.head_b1,
            &mut self.head_w2,
            std::slice::from_mut(&mut self.head_b2),
            self.embeddings.matrix_mut().as_mut_slice(),
        ]
    }

    /// Checks every tensor against the shape implied by the embeddings.
    pub fn validate(&self) -> Result<()> {
        let s = self.shape();
        s.validate()?;
        let (k, u) = (s.embed_dim, s.head_dim);
        let ok = [&self.lstm_q, &self.lstm_a]
            .iter()
            .all(|l| l.input_dim() == k && l.hidden_dim() == k)
            && self.translation.rows() == k
            && self.translation.cols() == k
            && self.head_w1.rows() == u
            && self.head_w1.cols() == 2 * k
            && self.head_w2.len() == u;
        if !ok {
            return Err(Error::Shape("inconsistent model tensors".into()));
        }
        if !(self.decay_horizon > 0.0) || !(self.margin > 0.0) {
            return Err(Error::InvalidArgument(
                "decay horizon and margin must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A question as vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionInput {
    pub tokens: Vec<usize>,
    pub topics: Vec<Vec<usize>>,
}

/// An answer as vocabulary indices, one list per sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerInput {
    pub sentences: Vec<Vec<usize>>,
    pub timestamp: i64,
}

/// Inverted dropout on encoder outputs.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn mask(&mut self, len: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..len)
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect()
    }
}

/// Encoder outputs for one pass over the question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionTrace {
    pub tokens: Vec<usize>,
    pub topics: Vec<Vec<usize>>,
    pub steps: Vec<StepCache>,
    /// Per-row dropout multipliers, if dropout was active.
    pub mask: Option<Vec<Vec<f64>>>,
    /// Hidden states as seen by attention (after dropout).
    pub q_r: Matrix,
    pub final_cell: Vec<f64>,
    /// Topic embedding, word-level attention only.
    pub c_f: Option<Vec<f64>>,
}

/// Everything one forward pass computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub variant: VariantConfig,
    pub question: Arc<QuestionTrace>,
    pub sentences: Vec<Vec<usize>>,
    pub answer_steps: Vec<Vec<StepCache>>,
    pub answer_mask: Option<Vec<Vec<Vec<f64>>>>,
    pub a_r: Vec<Matrix>,
    pub attended: Attended,
    pub u: Vec<f64>,
    pub match_score: f64,
    pub decay: f64,
    pub rank_score: f64,
    pub timestamp: i64,
    pub t0: i64,
}

impl ForwardTrace {
    pub fn alpha(&self) -> &[f64] {
        &self.attended.alpha
    }

    pub fn beta_question(&self) -> Option<&[f64]> {
        self.attended.beta_q.as_deref()
    }

    pub fn beta_sentences(&self) -> Option<&[Vec<f64>]> {
        self.attended.beta_a.as_deref()
    }
}

fn states_matrix(steps: &[StepCache], dim: usize) -> Matrix {
    let mut m = Matrix::zeros(steps.len(), dim);
    for (r, s) in steps.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&s.h);
    }
    m
}

fn matrix_rows(m: &Matrix) -> impl Iterator<Item = &[f64]> {
    (0..m.rows()).map(move |r| m.row(r))
}

/// Runs the question LSTM from a zero state; returns all hidden states
/// and the final cell.
pub fn encode_question(p: &ModelParams, q_matrix: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    if q_matrix.rows() == 0 {
        return Err(Error::InvalidArgument("empty question".into()));
    }
    let h = p.lstm_q.hidden_dim();
    let steps = p.lstm_q.run(matrix_rows(q_matrix), &vec![0.0; h], &vec![0.0; h])?;
    let cell = steps.last().unwrap().z.clone();
    Ok((states_matrix(&steps, h), cell))
}

/// Runs the answer LSTM over each sentence independently, each starting
/// from a zero hidden state and the question's final cell.
pub fn encode_answer(p: &ModelParams, sentences: &[Matrix], q_final_cell: &[f64]) -> Result<Vec<Matrix>> {
    if sentences.is_empty() {
        return Err(Error::InvalidArgument("answer has no sentences".into()));
    }
    let h = p.lstm_a.hidden_dim();
    sentences
        .iter()
        .map(|s| {
            if s.rows() == 0 {
                return Err(Error::InvalidArgument("empty sentence".into()));
            }
            let steps = p.lstm_a.run(matrix_rows(s), &vec![0.0; h], q_final_cell)?;
            Ok(states_matrix(&steps, h))
        })
        .collect()
}

/// `V̂ = σ(w2·u + b2)`, `u = tanh(W1 [q_f; a_f] + b1)`.
pub fn match_score(p: &ModelParams, q_f: &[f64], a_f: &[f64]) -> Result<(f64, Vec<f64>)> {
    let k = p.head_w1.cols() / 2;
    if q_f.len() != k || a_f.len() != k {
        return Err(Error::Shape(format!("head expects {k}+{k}, got {}+{}", q_f.len(), a_f.len())));
    }
    let mut joint = Vec::with_capacity(2 * k);
    joint.extend_from_slice(q_f);
    joint.extend_from_slice(a_f);
    let mut u = p.head_b1.clone();
    p.head_w1.matvec_acc(&joint, &mut u);
    u.iter_mut().for_each(|v| *v = v.tanh());
    Ok((sigmoid(dot(&p.head_w2, &u) + p.head_b2), u))
}

/// Decay multiplier `exp(-(t - t0) / H)`.
pub fn decay_factor(t: i64, t0: i64, horizon: f64) -> Result<f64> {
    if t < t0 {
        return Err(Error::InvalidArgument(format!("timestamp {t} precedes first answer {t0}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("decay horizon {horizon} must be positive")));
    }
    Ok((-((t - t0) as f64) / horizon).exp())
}

/// Ranking score: the matching score, damped by answer age when enabled.
pub fn rank_score(match_score: f64, t: i64, t0: i64, horizon: f64, use_decay: bool) -> Result<f64> {
    let d = decay_factor(t, t0, horizon)?;
    Ok(if use_decay { d * match_score } else { match_score })
}

fn apply_mask(states: &mut Matrix, dropout: Option<&mut Dropout>) -> Option<Vec<Vec<f64>>> {
    let d = dropout?;
    let mut masks = Vec::with_capacity(states.rows());
    for r in 0..states.rows() {
        let m = d.mask(states.cols());
        for (v, k) in states.row_mut(r).iter_mut().zip(&m) {
            *v *= k;
        }
        masks.push(m);
    }
    Some(masks)
}

fn check_tokens(tokens: &[usize], p: &ModelParams, what: &str) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument(format!("empty {what}")));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= p.embeddings.len()) {
        return Err(Error::InvalidArgument(format!("{what} token {bad} outside vocabulary")));
    }
    Ok(())
}

/// Encodes the question (and, for word-level attention, its topics).
pub fn trace_question(
    p: &ModelParams,
    variant: VariantConfig,
    q: &QuestionInput,
    dropout: Option<&mut Dropout>,
) -> Result<QuestionTrace> {
    check_tokens(&q.tokens, p, "question")?;
    let h = p.lstm_q.hidden_dim();
    let steps = p
        .lstm_q
        .run(q.tokens.iter().map(|&t| p.embeddings.row(t)), &vec![0.0; h], &vec![0.0; h])?;
    let mut q_r = states_matrix(&steps, h);
    let mask = apply_mask(&mut q_r, dropout);
    let c_f = match variant.attention {
        Attention::SentenceLevel => None,
        Attention::WordLevel => {
            for t in &q.topics {
                check_tokens(t, p, "topic phrase")?;
            }
            let phrases: Vec<Matrix> = q
                .topics
                .iter()
                .map(|ph| Matrix::from_rows(&ph.iter().map(|&t| p.embeddings.row(t).to_vec()).collect::<Vec<_>>()))
                .collect();
            Some(topic_embed(&phrases)?)
        }
    };
    Ok(QuestionTrace {
        tokens: q.tokens.clone(),
        topics: q.topics.clone(),
        final_cell: steps.last().unwrap().z.clone(),
        steps,
        mask,
        q_r,
        c_f,
    })
}

/// Scores one answer against an already encoded question.
pub fn forward_answer(
    p: &ModelParams,
    variant: VariantConfig,
    question: Arc<QuestionTrace>,
    a: &AnswerInput,
    t0: i64,
    mut dropout: Option<&mut Dropout>,
) -> Result<ForwardTrace> {
    if a.sentences.is_empty() {
        return Err(Error::InvalidArgument("answer has no sentences".into()));
    }
    let h = p.lstm_a.hidden_dim();
    let zero = vec![0.0; h];
    let mut answer_steps = Vec::with_capacity(a.sentences.len());
    let mut a_r = Vec::with_capacity(a.sentences.len());
    let mut masks = Vec::new();
    for s in &a.sentences {
        check_tokens(s, p, "sentence")?;
        let steps = p
            .lstm_a
            .run(s.iter().map(|&t| p.embeddings.row(t)), &zero, &question.final_cell)?;
        let mut states = states_matrix(&steps, h);
        if let Some(m) = apply_mask(&mut states, dropout.as_deref_mut()) {
            masks.push(m);
        }
        answer_steps.push(steps);
        a_r.push(states);
    }
    let attended = match (variant.attention, &question.c_f) {
        (Attention::SentenceLevel, _) => {
            sentence_attention(&question.q_r, &a_r, variant.normalize_sentence_weights)
        }
        (Attention::WordLevel, Some(c_f)) => word_attention(
            &p.translation,
            &question.q_r,
            &a_r,
            c_f,
            variant.normalize_sentence_weights,
        )?,
        (Attention::WordLevel, None) => {
            return Err(Error::InvalidArgument("question traced without topics".into()))
        }
    };
    let (v_hat, u) = match_score(p, &attended.q_f, &attended.a_f)?;
    let decay = decay_factor(a.timestamp, t0, p.decay_horizon)?;
    let v_tilde = if variant.use_time_decay { decay * v_hat } else { v_hat };
    Ok(ForwardTrace {
        variant,
        question,
        sentences: a.sentences.clone(),
        answer_steps,
        answer_mask: dropout.map(|_| masks),
        a_r,
        attended,
        u,
        match_score: v_hat,
        decay,
        rank_score: v_tilde,
        timestamp: a.timestamp,
        t0,
    })
}

/// Full forward pass for one question–answer pair. `t0` is the timestamp of
/// the question's first answer.
pub fn forward(
    p: &ModelParams,
    variant: VariantConfig,
    q: &QuestionInput,
    a: &AnswerInput,
    t0: i64,
    mut dropout: Option<&mut Dropout>,
) -> Result<ForwardTrace> {
    let qt = trace_question(p, variant, q, dropout.as_deref_mut())?;
    forward_answer(p, variant, Arc::new(qt), a, t0, dropout)
}

/// Scores every answer of a question, sharing one question encoding.
/// Returns `(match score, rank score)` per answer.
pub fn score_answers(
    p: &ModelParams,
    variant: VariantConfig,
    q: &QuestionInput,
    answers: &[AnswerInput],
    t0: i64,
) -> Result<Vec<(f64, f64)>> {
    let qt = Arc::new(trace_question(p, variant, q, None)?);
    answers
        .iter()
        .map(|a| {
            let tr = forward_answer(p, variant, qt.clone(), a, t0, None)?;
            Ok((tr.match_score, tr.rank_score))
        })
        .collect()
}
