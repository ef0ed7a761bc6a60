//! Ranking metrics for answer selection (P@k, MAP, MRR) and answer ranking
//! (NDCG@k, DOA), evaluated per question and macro-averaged.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_GOOD_THRESHOLD;
use crate::dataset::{Dataset, EncodedQuestion};
use crate::error::{Error, Result};
use crate::network::{score_answers, ModelParams, VariantConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub score: f64,
    /// Binary selection label.
    pub good: bool,
    /// Graded relevance for NDCG.
    pub grade: u32,
    /// Ground-truth value ordering the DOA pairs (upvotes).
    pub truth: f64,
}

/// Items ordered by descending score; equal scores by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    items: Vec<RankedItem>,
}

impl RankedList {
    pub fn new(mut items: Vec<RankedItem>) -> Self {
        items.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.id.cmp(&b.id))
        });
        RankedList { items }
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Fraction of good answers among the top `k`; positions past the end of a
/// short list count as not good.
pub fn precision_at_k(list: &RankedList, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    list.items.iter().take(k).filter(|i| i.good).count() as f64 / k as f64
}

/// Average precision, or `None` when the list has no good answer.
pub fn average_precision(list: &RankedList) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, item) in list.items.iter().enumerate() {
        if item.good {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Reciprocal rank of the first good answer, or `None` without one.
pub fn mrr(list: &RankedList) -> Option<f64> {
    list.items.iter().position(|i| i.good).map(|p| 1.0 / (p + 1) as f64)
}

/// `rel_1 + Σ_{j=2..k} rel_j / log2(j)`
fn dcg(grades: impl Iterator<Item = u32>, k: usize) -> f64 {
    grades
        .take(k)
        .enumerate()
        .map(|(j, g)| if j == 0 { g as f64 } else { g as f64 / ((j + 1) as f64).log2() })
        .sum()
}

/// NDCG@k against the grade-descending ideal order; 0 when every grade is 0.
pub fn ndcg_at_k(list: &RankedList, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    let mut ideal: Vec<u32> = list.items.iter().map(|i| i.grade).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(list.items.iter().map(|i| i.grade), k) / idcg
}

/// Degree of agreement: pairs with `truth_i > truth_j` are correct when
/// `score_i >= score_j`. The denominator is `n(n-1)/2`; with `strict`, it
/// counts only pairs whose truths differ. `None` for fewer than two items
/// (or, in strict mode, no comparable pair).
pub fn doa(list: &RankedList, strict: bool) -> Option<f64> {
    let n = list.items.len();
    if n < 2 {
        return None;
    }
    let mut correct = 0usize;
    let mut comparable = 0usize;
    for (i, a) in list.items.iter().enumerate() {
        for b in &list.items[i + 1..] {
            let (hi, lo) = match a.truth.partial_cmp(&b.truth) {
                Some(Ordering::Greater) => (a, b),
                Some(Ordering::Less) => (b, a),
                _ => continue,
            };
            comparable += 1;
            if hi.score >= lo.score {
                correct += 1;
            }
        }
    }
    let denom = if strict { comparable } else { n * (n - 1) / 2 };
    (denom > 0).then(|| correct as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub question_id: String,
    pub answers: usize,
    pub p_at_5: f64,
    pub p_at_10: f64,
    pub average_precision: Option<f64>,
    pub reciprocal_rank: Option<f64>,
    pub ndcg_at_1: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub doa: Option<f64>,
}

impl QuestionMetrics {
    pub fn compute(question_id: &str, list: &RankedList, strict_doa: bool) -> Self {
        QuestionMetrics {
            question_id: question_id.to_string(),
            answers: list.len(),
            p_at_5: precision_at_k(list, 5),
            p_at_10: precision_at_k(list, 10),
            average_precision: average_precision(list),
            reciprocal_rank: mrr(list),
            ndcg_at_1: ndcg_at_k(list, 1),
            ndcg_at_5: ndcg_at_k(list, 5),
            ndcg_at_10: ndcg_at_k(list, 10),
            doa: doa(list, strict_doa),
        }
    }
}

/// Macro averages over questions. MAP and MRR skip questions without a
/// good answer; DOA skips questions with fewer than two answers. The
/// `*_questions` fields count the questions that entered each average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub questions: usize,
    pub p_at_5: f64,
    pub p_at_10: f64,
    pub map: f64,
    pub mrr: f64,
    pub ndcg_at_1: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub doa: f64,
    pub map_questions: usize,
    pub doa_questions: usize,
    pub per_question: Vec<QuestionMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Selection,
    Ranking,
}

pub const SELECTION_COLUMNS: [&str; 4] = ["P@5", "P@10", "MAP", "MRR"];
pub const RANKING_COLUMNS: [&str; 4] = ["NDCG@1", "NDCG@5", "NDCG@10", "DOA"];

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

impl EvalReport {
    pub fn from_questions(per_question: Vec<QuestionMetrics>) -> Self {
        let avg = |f: fn(&QuestionMetrics) -> Option<f64>| mean(per_question.iter().filter_map(f));
        let (map, map_questions) = avg(|m| m.average_precision);
        let (doa, doa_questions) = avg(|m| m.doa);
        EvalReport {
            questions: per_question.len(),
            p_at_5: avg(|m| Some(m.p_at_5)).0,
            p_at_10: avg(|m| Some(m.p_at_10)).0,
            map,
            mrr: avg(|m| m.reciprocal_rank).0,
            ndcg_at_1: avg(|m| Some(m.ndcg_at_1)).0,
            ndcg_at_5: avg(|m| Some(m.ndcg_at_5)).0,
            ndcg_at_10: avg(|m| Some(m.ndcg_at_10)).0,
            doa,
            map_questions,
            doa_questions,
            per_question,
        }
    }

    /// The four headline metrics of a task, in table order.
    pub fn task_metrics(&self, task: Task) -> [(&'static str, f64); 4] {
        match task {
            Task::Selection => [
                (SELECTION_COLUMNS[0], self.p_at_5),
                (SELECTION_COLUMNS[1], self.p_at_10),
                (SELECTION_COLUMNS[2], self.map),
                (SELECTION_COLUMNS[3], self.mrr),
            ],
            Task::Ranking => [
                (RANKING_COLUMNS[0], self.ndcg_at_1),
                (RANKING_COLUMNS[1], self.ndcg_at_5),
                (RANKING_COLUMNS[2], self.ndcg_at_10),
                (RANKING_COLUMNS[3], self.doa),
            ],
        }
    }

    pub fn csv_header(task: Task) -> String {
        let cols = match task {
            Task::Selection => SELECTION_COLUMNS,
            Task::Ranking => RANKING_COLUMNS,
        };
        cols.join(",")
    }

    pub fn csv_row(&self, task: Task) -> String {
        let mut s = String::new();
        for (i, (_, v)) in self.task_metrics(task).iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v:.6}").unwrap();
        }
        s
    }
}

/// Anything that can score the answers of an encoded question.
pub trait AnswerScorer: Sync {
    fn score(&self, question: &EncodedQuestion) -> Result<Vec<f64>>;
}

/// Scores with a trained model; ranks by `Ṽ` (or `V̂` without decay).
pub struct ModelScorer<'a> {
    pub params: &'a ModelParams,
    pub variant: VariantConfig,
}

impl AnswerScorer for ModelScorer<'_> {
    fn score(&self, q: &EncodedQuestion) -> Result<Vec<f64>> {
        let inputs: Vec<_> = q.answers.iter().map(|a| a.input.clone()).collect();
        Ok(score_answers(self.params, self.variant, &q.input, &inputs, q.t0)?
            .into_iter()
            .map(|(_, rank)| rank)
            .collect())
    }
}

impl<F> AnswerScorer for F
where
    F: Fn(&EncodedQuestion) -> Vec<f64> + Sync,
{
    fn score(&self, q: &EncodedQuestion) -> Result<Vec<f64>> {
        Ok(self(q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub good_threshold: u64,
    pub strict_doa: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            good_threshold: DEFAULT_GOOD_THRESHOLD,
            strict_doa: false,
        }
    }
}

pub fn ranked_list(q: &EncodedQuestion, scores: &[f64], good_threshold: u64) -> RankedList {
    RankedList::new(
        q.answers
            .iter()
            .zip(scores)
            .map(|(a, &score)| RankedItem {
                id: a.id.clone(),
                score,
                good: a.upvotes > good_threshold,
                grade: a.grade,
                truth: a.upvotes as f64,
            })
            .collect(),
    )
}

/// Scores every question (in parallel), ranks, and macro-averages.
pub fn evaluate(scorer: &dyn AnswerScorer, data: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let per_question = data
        .questions()
        .par_iter()
        .map(|q| {
            let scores = scorer.score(q)?;
            let list = ranked_list(q, &scores, opts.good_threshold);
            Ok(QuestionMetrics::compute(&q.id, &list, opts.strict_doa))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_questions(per_question))
}
