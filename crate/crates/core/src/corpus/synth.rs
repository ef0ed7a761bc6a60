//! Deterministic synthetic corpora with a planted notion of answer value.
//!
//! Each question owns a small set of topic words. An answer's planted value
//! is the number of its tokens that are topic words of its question, damped
//! by `exp(-(t - t0) / decay_horizon)`. Upvotes are the planted value scaled
//! so that each question's best answer gets `top_upvotes`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Answer, Corpus, Question};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_questions: usize,
    pub answers_per_question: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Seconds; `f64::INFINITY` disables the time effect.
    pub decay_horizon: f64,
    /// Answer timestamps are spread uniformly over this many seconds.
    pub time_spread: f64,
    pub question_words: usize,
    pub sentences_per_answer: usize,
    pub words_per_sentence: usize,
    pub topic_phrases: usize,
    /// Largest number of topic-word tokens an answer may carry.
    pub max_overlap: usize,
    /// Off-topic "relevant-looking" tokens per answer, at most.
    pub max_distractors: usize,
    pub top_upvotes: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_questions: 50,
            answers_per_question: 12,
            vocab_size: 200,
            seed: 0,
            decay_horizon: 1e6,
            time_spread: 2e6,
            question_words: 10,
            sentences_per_answer: 2,
            words_per_sentence: 6,
            topic_phrases: 3,
            max_overlap: 4,
            max_distractors: 2,
            top_upvotes: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub corpus: Corpus,
    /// Planted value per answer id.
    pub planted: BTreeMap<String, f64>,
}

/// `overlap * exp(-(t - t0) / horizon)`.
pub fn planted_value(overlap: usize, t: i64, t0: i64, horizon: f64) -> f64 {
    overlap as f64 * (-((t - t0) as f64) / horizon).exp()
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("n_questions", self.n_questions),
            ("answers_per_question", self.answers_per_question),
            ("question_words", self.question_words),
            ("sentences_per_answer", self.sentences_per_answer),
            ("words_per_sentence", self.words_per_sentence),
            ("topic_phrases", self.topic_phrases),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.decay_horizon > 0.0) || !(self.time_spread >= 0.0) || !self.time_spread.is_finite() {
            return Err(Error::InvalidArgument(
                "decay_horizon must be positive and time_spread finite".into(),
            ));
        }
        if self.max_overlap + self.max_distractors > self.sentences_per_answer * self.words_per_sentence {
            return Err(Error::InvalidArgument("answers too short for planted words".into()));
        }
        let (relevant, filler) = self.vocab_split();
        if relevant < 2 * self.topic_phrases + self.max_distractors.max(1) || filler < 1 {
            return Err(Error::InvalidArgument(format!(
                "vocab_size {} too small",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// First quarter of the vocabulary holds topic-capable words.
    fn vocab_split(&self) -> (usize, usize) {
        let relevant = self.vocab_size / 4;
        (relevant, self.vocab_size - relevant)
    }
}

fn word(i: usize) -> String {
    format!("w{i:04}")
}

pub fn synth_corpus(spec: &SynthSpec) -> Result<Synthesized> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n_relevant, n_filler) = spec.vocab_split();
    let filler = |rng: &mut ChaCha8Rng| word(n_relevant + rng.gen_range(0..n_filler));

    let mut questions = Vec::with_capacity(spec.n_questions);
    let mut answers = Vec::new();
    let mut planted = BTreeMap::new();
    let width = spec.n_questions.to_string().len();

    for qi in 0..spec.n_questions {
        let qid = format!("q{qi:0width$}");
        let mut pool: Vec<usize> = (0..n_relevant).collect();
        pool.shuffle(&mut rng);
        let mut phrases: Vec<Vec<usize>> = Vec::new();
        let mut cursor = 0;
        for _ in 0..spec.topic_phrases {
            let len = rng.gen_range(1..=2);
            phrases.push(pool[cursor..cursor + len].to_vec());
            cursor += len;
        }
        let topic_words: Vec<usize> = phrases.iter().flatten().copied().collect();
        let topic_set: BTreeSet<usize> = topic_words.iter().copied().collect();
        let distractors: Vec<usize> = pool[cursor..].to_vec();

        let mut qtokens: Vec<String> = (0..spec.question_words).map(|_| filler(&mut rng)).collect();
        let slot = rng.gen_range(0..qtokens.len());
        qtokens[slot] = word(*topic_words.choose(&mut rng).expect("topics non-empty"));
        let post_time = 1_500_000_000 + qi as i64 * 86_400;
        let topic_text: Vec<String> = phrases
            .iter()
            .map(|p| p.iter().map(|&w| word(w)).collect::<Vec<_>>().join(" "))
            .collect();
        let topic_refs: Vec<&str> = topic_text.iter().map(String::as_str).collect();
        questions.push(Question::new(&qid, &format!("{}?", qtokens.join(" ")), &topic_refs, post_time)?);

        let n_tokens = spec.sentences_per_answer * spec.words_per_sentence;
        let mut drafts = Vec::with_capacity(spec.answers_per_question);
        for ai in 0..spec.answers_per_question {
            let overlap = rng.gen_range(0..=spec.max_overlap);
            let n_distract = rng.gen_range(0..=spec.max_distractors);
            let mut tokens: Vec<usize> = Vec::with_capacity(n_tokens);
            tokens.extend((0..overlap).map(|_| *topic_words.choose(&mut rng).unwrap()));
            tokens.extend((0..n_distract).map(|_| *distractors.choose(&mut rng).unwrap()));
            while tokens.len() < n_tokens {
                tokens.push(n_relevant + rng.gen_range(0..n_filler));
            }
            tokens.shuffle(&mut rng);
            debug_assert_eq!(tokens.iter().filter(|t| topic_set.contains(t)).count(), overlap);
            let offset = if ai == 0 {
                0
            } else {
                rng.gen_range(0.0..=spec.time_spread).round() as i64
            };
            drafts.push((format!("{qid}a{ai:02}"), tokens, overlap, post_time + 60 + offset));
        }
        // Guarantee at least one answer carries value.
        if drafts.iter().all(|d| d.2 == 0) {
            let d = &mut drafts[0];
            d.1[0] = topic_words[0];
            d.2 = 1;
        }

        let t0 = drafts.iter().map(|d| d.3).min().unwrap();
        let values: Vec<f64> = drafts
            .iter()
            .map(|d| planted_value(d.2, d.3, t0, spec.decay_horizon))
            .collect();
        let best = values.iter().cloned().fold(0.0, f64::max);
        for ((id, tokens, _, t), v) in drafts.into_iter().zip(values) {
            let text = tokens
                .chunks(spec.words_per_sentence)
                .map(|s| s.iter().map(|&w| word(w)).collect::<Vec<_>>().join(" ") + ".")
                .collect::<Vec<_>>()
                .join(" ");
            let upvotes = (spec.top_upvotes as f64 * v / best).round() as u64;
            answers.push(Answer::new(&id, &qid, &text, t, upvotes, None)?);
            planted.insert(id, v);
        }
    }
    Ok(Synthesized {
        corpus: Corpus::new(questions, answers)?,
        planted,
    })
}
