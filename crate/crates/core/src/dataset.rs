//! A corpus mapped through a vocabulary into model inputs.

use std::collections::HashMap;

use crate::corpus::{Corpus, Triple};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::network::{AnswerInput, QuestionInput};

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedAnswer {
    pub id: String,
    pub input: AnswerInput,
    pub upvotes: u64,
    pub grade: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedQuestion {
    pub id: String,
    pub input: QuestionInput,
    /// Timestamp of the first answer.
    pub t0: i64,
    /// Earliest first.
    pub answers: Vec<EncodedAnswer>,
}

/// Index form of a [`Triple`]: question position and answer positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TripleRef {
    pub question: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    questions: Vec<EncodedQuestion>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Encodes every question that has at least one answer.
    pub fn encode(corpus: &Corpus, vocab: &Vocabulary) -> Self {
        let mut questions = Vec::new();
        for q in corpus.questions() {
            let answers = corpus.answers(&q.id);
            let Some(first) = answers.first() else { continue };
            questions.push(EncodedQuestion {
                id: q.id.clone(),
                input: QuestionInput {
                    tokens: vocab.encode(&q.tokens),
                    topics: q.topics.iter().map(|t| vocab.encode(t)).collect(),
                },
                t0: first.timestamp,
                answers: answers
                    .iter()
                    .map(|a| EncodedAnswer {
                        id: a.id.clone(),
                        input: AnswerInput {
                            sentences: a.sentences.iter().map(|s| vocab.encode(s)).collect(),
                            timestamp: a.timestamp,
                        },
                        upvotes: a.upvotes,
                        grade: a.grade,
                    })
                    .collect(),
            });
        }
        Self::from_questions(questions)
    }

    pub fn from_questions(questions: Vec<EncodedQuestion>) -> Self {
        let by_id = questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id.clone(), i))
            .collect();
        Dataset { questions, by_id }
    }

    pub fn questions(&self) -> &[EncodedQuestion] {
        &self.questions
    }

    pub fn question(&self, id: &str) -> Option<&EncodedQuestion> {
        self.by_id.get(id).map(|&i| &self.questions[i])
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn resolve(&self, t: &Triple) -> Result<TripleRef> {
        let missing = |what: &str, id: &str| Error::InvalidRecord {
            id: id.to_string(),
            message: format!("{what} not found for triple"),
        };
        let qi = *self
            .by_id
            .get(&t.question_id)
            .ok_or_else(|| missing("question", &t.question_id))?;
        let q = &self.questions[qi];
        let find = |id: &str| {
            q.answers
                .iter()
                .position(|a| a.id == id)
                .ok_or_else(|| missing("answer", id))
        };
        Ok(TripleRef {
            question: qi,
            pos: find(&t.pos_answer_id)?,
            neg: find(&t.neg_answer_id)?,
        })
    }

    pub fn resolve_all(&self, triples: &[Triple]) -> Result<Vec<TripleRef>> {
        triples.iter().map(|t| self.resolve(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Answer, Question};
    use crate::embedding::build_vocab;

    #[test]
    fn encodes_and_resolves() {
        let q = Question::new("q", "where is the lake", &["lake"], 0).unwrap();
        let a = Answer::new("late", "q", "the lake. is deep", 30, 2, None).unwrap();
        let b = Answer::new("early", "q", "over there", 10, 9, None).unwrap();
        let c = Corpus::new(vec![q], vec![a, b]).unwrap();
        let v = build_vocab(&c, 1).unwrap();
        let d = Dataset::encode(&c, &v);
        let eq = d.question("q").unwrap();
        assert_eq!(eq.t0, 10);
        assert_eq!(eq.answers[0].id, "early");
        assert_eq!(eq.answers[1].input.sentences.len(), 2);
        assert_eq!(eq.input.topics, vec![vec![v.lookup("lake")]]);
        let t = Triple {
            question_id: "q".into(),
            pos_answer_id: "early".into(),
            neg_answer_id: "late".into(),
        };
        assert_eq!(d.resolve(&t).unwrap(), TripleRef { question: 0, pos: 0, neg: 1 });
        let bad = Triple {
            neg_answer_id: "nope".into(),
            ..t
        };
        assert!(d.resolve(&bad).is_err());
    }
}
