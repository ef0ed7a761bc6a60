//! CQA corpus: records, JSONL ingestion, cleaning filters, ground-truth
//! labels, train/test splitting and pairwise training triples.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{planted_value, synth_corpus, SynthSpec, Synthesized};

/// Upvote threshold above which an answer counts as good.
pub const DEFAULT_GOOD_THRESHOLD: u64 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub text: String,
    /// The whole question is a single sentence.
    pub tokens: Vec<String>,
    pub topic_text: Vec<String>,
    pub topics: Vec<Vec<String>>,
    pub post_time: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub id: String,
    pub question_id: String,
    pub text: String,
    pub sentences: Vec<Vec<String>>,
    pub timestamp: i64,
    pub upvotes: u64,
    pub grade: u32,
}

impl Answer {
    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    questions: BTreeMap<String, Question>,
    answers: BTreeMap<String, Vec<Answer>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub question_id: String,
    pub pos_answer_id: String,
    pub neg_answer_id: String,
}

/// Default NDCG grade: `floor(log2(1 + upvotes))`.
pub fn default_grade(upvotes: u64) -> u32 {
    // Exact integer floor(log2(x)) for x >= 1.
    63 - (upvotes.saturating_add(1)).leading_zeros()
}

/// Lowercased word tokens with surrounding punctuation stripped.
pub fn tokenize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_ascii_control()))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Splits text into sentences at `.`, `!` and `?`, dropping empty ones.
pub fn split_sentences(text: &str) -> Vec<Vec<String>> {
    text.split(['.', '!', '?'])
        .map(tokenize_words)
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Question {
        id: String,
        text: String,
        #[serde(default)]
        topics: Vec<String>,
        post_time: i64,
    },
    Answer {
        id: String,
        question_id: String,
        text: String,
        timestamp: i64,
        upvotes: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grade: Option<u32>,
    },
}

impl Question {
    pub fn new(id: &str, text: &str, topics: &[&str], post_time: i64) -> Result<Self> {
        Self::from_parts(
            id.to_string(),
            text.to_string(),
            topics.iter().map(|s| s.to_string()).collect(),
            post_time,
        )
    }

    fn from_parts(id: String, text: String, topic_text: Vec<String>, post_time: i64) -> Result<Self> {
        let tokens = tokenize_words(&text);
        if tokens.is_empty() {
            return Err(Error::InvalidRecord {
                id,
                message: "question text has no words".into(),
            });
        }
        let topics: Vec<Vec<String>> = topic_text.iter().map(|t| tokenize_words(t)).collect();
        if let Some(pos) = topics.iter().position(Vec::is_empty) {
            return Err(Error::InvalidRecord {
                id,
                message: format!("topic phrase {pos} has no words"),
            });
        }
        Ok(Question {
            id,
            text,
            tokens,
            topic_text,
            topics,
            post_time,
        })
    }
}

impl Answer {
    pub fn new(
        id: &str,
        question_id: &str,
        text: &str,
        timestamp: i64,
        upvotes: u64,
        grade: Option<u32>,
    ) -> Result<Self> {
        let sentences = split_sentences(text);
        if sentences.is_empty() {
            return Err(Error::InvalidRecord {
                id: id.to_string(),
                message: "answer text has no words".into(),
            });
        }
        Ok(Answer {
            id: id.to_string(),
            question_id: question_id.to_string(),
            text: text.to_string(),
            sentences,
            timestamp,
            upvotes,
            grade: grade.unwrap_or_else(|| default_grade(upvotes)),
        })
    }
}

impl Corpus {
    /// Assembles a corpus, checking references, ids and timestamps and
    /// sorting each question's answers by timestamp (ties by id).
    pub fn new(questions: Vec<Question>, answers: Vec<Answer>) -> Result<Self> {
        let mut qmap = BTreeMap::new();
        for q in questions {
            if qmap.contains_key(&q.id) {
                return Err(Error::InvalidRecord {
                    id: q.id,
                    message: "duplicate question id".into(),
                });
            }
            qmap.insert(q.id.clone(), q);
        }
        let mut seen = BTreeSet::new();
        let mut amap: BTreeMap<String, Vec<Answer>> = BTreeMap::new();
        for a in answers {
            let Some(q) = qmap.get(&a.question_id) else {
                return Err(Error::InvalidRecord {
                    message: format!("unknown question id `{}`", a.question_id),
                    id: a.id,
                });
            };
            if a.timestamp < q.post_time {
                return Err(Error::InvalidRecord {
                    message: format!(
                        "timestamp {} precedes question post_time {}",
                        a.timestamp, q.post_time
                    ),
                    id: a.id,
                });
            }
            if !seen.insert(a.id.clone()) {
                return Err(Error::InvalidRecord {
                    id: a.id,
                    message: "duplicate answer id".into(),
                });
            }
            amap.entry(a.question_id.clone()).or_default().push(a);
        }
        for list in amap.values_mut() {
            list.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
        }
        Ok(Corpus {
            questions: qmap,
            answers: amap,
        })
    }

    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn num_answers(&self) -> usize {
        self.answers.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.get(id)
    }

    /// Answers of a question, earliest first.
    pub fn answers(&self, question_id: &str) -> &[Answer] {
        self.answers.get(question_id).map_or(&[], Vec::as_slice)
    }

    pub fn answer(&self, question_id: &str, answer_id: &str) -> Option<&Answer> {
        self.answers(question_id).iter().find(|a| a.id == answer_id)
    }

    /// Questions in id order.
    pub fn questions(&self) -> impl Iterator<Item = &Question> {
        self.questions.values()
    }

    /// Timestamp of the first answer to a question.
    pub fn first_answer_time(&self, question_id: &str) -> Option<i64> {
        self.answers(question_id).first().map(|a| a.timestamp)
    }

    pub fn all_answers(&self) -> impl Iterator<Item = &Answer> {
        self.answers.values().flatten()
    }

    fn retain_questions(&self, keep: impl Fn(&str) -> bool) -> Corpus {
        Corpus {
            questions: self
                .questions
                .iter()
                .filter(|(id, _)| keep(id))
                .map(|(id, q)| (id.clone(), q.clone()))
                .collect(),
            answers: self
                .answers
                .iter()
                .filter(|(id, _)| keep(id))
                .map(|(id, a)| (id.clone(), a.clone()))
                .collect(),
        }
    }

    /// Writes the corpus as JSONL, each question followed by its answers.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for q in self.questions.values() {
            let rec = Record::Question {
                id: q.id.clone(),
                text: q.text.clone(),
                topics: q.topic_text.clone(),
                post_time: q.post_time,
            };
            writeln!(out, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io("<output>", e))?;
            for a in self.answers(&q.id) {
                let rec = Record::Answer {
                    id: a.id.clone(),
                    question_id: a.question_id.clone(),
                    text: a.text.clone(),
                    timestamp: a.timestamp,
                    upvotes: a.upvotes,
                    grade: Some(a.grade),
                };
                writeln!(out, "{}", serde_json::to_string(&rec)?)
                    .map_err(|e| Error::io("<output>", e))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a JSONL corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), path)
}

/// Parses JSONL corpus records; `origin` labels error messages.
pub fn parse_corpus<R: BufRead>(reader: R, origin: &Path) -> Result<Corpus> {
    let mut questions = Vec::new();
    let mut answers = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match rec {
            Record::Question {
                id,
                text,
                topics,
                post_time,
            } => questions.push(Question::from_parts(id, text, topics, post_time)?),
            Record::Answer {
                id,
                question_id,
                text,
                timestamp,
                upvotes,
                grade,
            } => answers.push(Answer::new(&id, &question_id, &text, timestamp, upvotes, grade)?),
        }
    }
    Corpus::new(questions, answers)
}

/// Drop records posted too recently for their votes to be stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinAge {
    /// Collection time, epoch seconds.
    pub reference_time: i64,
    pub min_age_secs: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// A question needs strictly more answers than this.
    pub min_answers_exclusive: usize,
    /// The best answer needs strictly more upvotes than this.
    pub min_top_upvotes_exclusive: u64,
    /// Questions and answers with fewer words are dropped.
    pub min_words: usize,
    pub require_topics: bool,
    pub min_age: Option<MinAge>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_answers_exclusive: 10,
            min_top_upvotes_exclusive: 20,
            min_words: 10,
            require_topics: true,
            min_age: None,
        }
    }
}

/// Applies the cleaning rules. Word-count and age rules run before the
/// answer-count rule, so the result is a fixed point of the filter.
/// Topic words are not counted toward a question's length.
pub fn filter_corpus(corpus: &Corpus, cfg: &FilterConfig) -> Corpus {
    let cutoff = cfg.min_age.map(|m| m.reference_time - m.min_age_secs);
    let mut out = Corpus::default();
    for q in corpus.questions.values() {
        if q.tokens.len() < cfg.min_words || (cfg.require_topics && q.topics.is_empty()) {
            continue;
        }
        if cutoff.is_some_and(|c| q.post_time > c) {
            continue;
        }
        let kept: Vec<Answer> = corpus
            .answers(&q.id)
            .iter()
            .filter(|a| a.word_count() >= cfg.min_words)
            .filter(|a| cutoff.is_none_or(|c| a.timestamp <= c))
            .cloned()
            .collect();
        let top = kept.iter().map(|a| a.upvotes).max().unwrap_or(0);
        if kept.len() > cfg.min_answers_exclusive && top > cfg.min_top_upvotes_exclusive {
            out.questions.insert(q.id.clone(), q.clone());
            out.answers.insert(q.id.clone(), kept);
        }
    }
    out
}

/// Binary selection labels keyed by answer id: good iff upvotes > threshold.
pub fn label_selection(corpus: &Corpus, threshold: u64) -> BTreeMap<String, bool> {
    corpus
        .all_answers()
        .map(|a| (a.id.clone(), a.upvotes > threshold))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleStrategy {
    /// Every (good, bad) pair under the selection labels.
    GoodVsBad { threshold: u64 },
    /// Every pair with strictly different upvotes.
    AllOrderedPairs,
    /// Up to `per_question` pairs drawn without replacement from the
    /// question's ordered pairs.
    Sampled { per_question: usize },
}

impl fmt::Display for TripleStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TripleStrategy::GoodVsBad { threshold } => write!(f, "good_vs_bad(>{threshold})"),
            TripleStrategy::AllOrderedPairs => write!(f, "all_ordered_pairs"),
            TripleStrategy::Sampled { per_question } => write!(f, "sampled({per_question})"),
        }
    }
}

fn ordered_pairs(qid: &str, answers: &[Answer]) -> Vec<Triple> {
    let mut out = Vec::new();
    for (i, a) in answers.iter().enumerate() {
        for b in &answers[i + 1..] {
            let (pos, neg) = match a.upvotes.cmp(&b.upvotes) {
                std::cmp::Ordering::Greater => (a, b),
                std::cmp::Ordering::Less => (b, a),
                std::cmp::Ordering::Equal => continue,
            };
            out.push(Triple {
                question_id: qid.to_string(),
                pos_answer_id: pos.id.clone(),
                neg_answer_id: neg.id.clone(),
            });
        }
    }
    out
}

/// Builds training triples question by question, in question id order.
pub fn build_triples(corpus: &Corpus, strategy: TripleStrategy, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (qid, answers) in &corpus.answers {
        match strategy {
            TripleStrategy::GoodVsBad { threshold } => {
                let (good, bad): (Vec<&Answer>, Vec<&Answer>) =
                    answers.iter().partition(|a| a.upvotes > threshold);
                for g in &good {
                    for b in &bad {
                        out.push(Triple {
                            question_id: qid.clone(),
                            pos_answer_id: g.id.clone(),
                            neg_answer_id: b.id.clone(),
                        });
                    }
                }
            }
            TripleStrategy::AllOrderedPairs => out.extend(ordered_pairs(qid, answers)),
            TripleStrategy::Sampled { per_question } => {
                let pairs = ordered_pairs(qid, answers);
                let k = per_question.min(pairs.len());
                let mut picked = index::sample(&mut rng, pairs.len(), k).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|i| pairs[i].clone()));
            }
        }
    }
    out
}

/// Random question-level split: `floor(fraction * n)` questions go to the
/// training side and the remainder to the test side.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let mut ids: Vec<&String> = corpus.questions.keys().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ids.len() as f64).floor() as usize;
    let train: BTreeSet<&str> = ids[..n_train].iter().map(|s| s.as_str()).collect();
    Ok((
        corpus.retain_questions(|id| train.contains(id)),
        corpus.retain_questions(|id| !train.contains(id)),
    ))
}

/// Summary statistics in the layout of the usual dataset table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub questions: usize,
    pub answers: usize,
    pub avg_answers_per_question: f64,
    pub avg_words_per_question: f64,
    pub avg_words_per_answer: f64,
    pub avg_sentences_per_answer: f64,
    pub avg_topics_per_question: f64,
    pub avg_triples_per_question: f64,
}

impl CorpusStats {
    pub fn compute(corpus: &Corpus, strategy: TripleStrategy, seed: u64) -> Self {
        let nq = corpus.num_questions();
        let na = corpus.num_answers();
        let per_q = |total: usize| if nq == 0 { 0.0 } else { total as f64 / nq as f64 };
        let per_a = |total: usize| if na == 0 { 0.0 } else { total as f64 / na as f64 };
        CorpusStats {
            questions: nq,
            answers: na,
            avg_answers_per_question: per_q(na),
            avg_words_per_question: per_q(corpus.questions().map(|q| q.tokens.len()).sum()),
            avg_words_per_answer: per_a(corpus.all_answers().map(Answer::word_count).sum()),
            avg_sentences_per_answer: per_a(corpus.all_answers().map(|a| a.sentences.len()).sum()),
            avg_topics_per_question: per_q(corpus.questions().map(|q| q.topics.len()).sum()),
            avg_triples_per_question: per_q(build_triples(corpus, strategy, seed).len()),
        }
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Total number of questions\t{}", self.questions)?;
        writeln!(f, "Total number of answers\t{}", self.answers)?;
        writeln!(f, "Average number of answers per question\t{:.1}", self.avg_answers_per_question)?;
        writeln!(f, "Average number of words per question\t{:.1}", self.avg_words_per_question)?;
        writeln!(f, "Average number of words per answer\t{:.1}", self.avg_words_per_answer)?;
        writeln!(f, "Average number of sentences per answer\t{:.1}", self.avg_sentences_per_answer)?;
        writeln!(f, "Average number of topics per question\t{:.1}", self.avg_topics_per_question)?;
        write!(f, "Average number of triples per question\t{:.1}", self.avg_triples_per_question)
    }
}
