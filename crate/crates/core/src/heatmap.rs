//! Static HTML attention reports: word color depth follows the word
//! weights, sentence stripe thickness follows the sentence weights.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::corpus::{Answer, Question};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::network::{forward_answer, trace_question, AnswerInput, Attention, ModelParams, QuestionInput, VariantConfig};

pub const DEFAULT_RATES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceView {
    pub tokens: Vec<String>,
    /// Word weights; absent for sentence-level attention.
    pub beta: Option<Vec<f64>>,
    pub word_rates: Option<Vec<usize>>,
    pub alpha: f64,
    pub alpha_rate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairView {
    pub answer_id: String,
    pub timestamp: i64,
    pub match_score: f64,
    pub rank_score: f64,
    pub question_beta: Option<Vec<f64>>,
    pub question_rates: Option<Vec<usize>>,
    pub sentences: Vec<SentenceView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapReport {
    pub question_id: String,
    pub variant: VariantConfig,
    pub rates: usize,
    pub t0: i64,
    pub question_tokens: Vec<String>,
    pub topics: Vec<Vec<String>>,
    pub notice: Option<String>,
    pub pairs: Vec<PairView>,
}

/// Assigns each score a rate in `0..rates` by its quantile within the
/// sequence: the rate of `s` is `⌊rates · #{x < s} / n⌋`. Equal scores share
/// a rate, so uniform weights all land in rate 0.
pub fn quantile_rates(scores: &[f64], rates: usize) -> Vec<usize> {
    let n = scores.len();
    scores
        .iter()
        .map(|&s| {
            let below = scores.iter().filter(|&&x| x < s).count();
            (rates * below / n).min(rates.saturating_sub(1))
        })
        .collect()
}

const SENTENCE_ONLY_NOTICE: &str =
    "This model uses sentence-level attention only; word weights are not available, so only sentence stripes are shown.";

/// Traces every listed answer against `question` and collects the weights.
/// `t0` is the timestamp of the question's first answer.
pub fn build_report(
    params: &ModelParams,
    vocab: &Vocabulary,
    variant: VariantConfig,
    question: &Question,
    answers: &[&Answer],
    t0: i64,
    rates: usize,
) -> Result<HeatmapReport> {
    if rates == 0 {
        return Err(Error::InvalidArgument("rates must be at least 1".into()));
    }
    if answers.is_empty() {
        return Err(Error::InvalidArgument("no answers to visualize".into()));
    }
    let qin = QuestionInput {
        tokens: vocab.encode(&question.tokens),
        topics: question.topics.iter().map(|t| vocab.encode(t)).collect(),
    };
    let qt = Arc::new(trace_question(params, variant, &qin, None)?);
    let mut pairs = Vec::with_capacity(answers.len());
    for a in answers {
        let ain = AnswerInput {
            sentences: a.sentences.iter().map(|s| vocab.encode(s)).collect(),
            timestamp: a.timestamp,
        };
        let tr = forward_answer(params, variant, qt.clone(), &ain, t0, None)?;
        let alpha_rates = quantile_rates(tr.alpha(), rates);
        let sentences = a
            .sentences
            .iter()
            .enumerate()
            .map(|(j, toks)| {
                let beta = tr.beta_sentences().map(|b| b[j].clone());
                SentenceView {
                    tokens: toks.clone(),
                    word_rates: beta.as_deref().map(|b| quantile_rates(b, rates)),
                    beta,
                    alpha: tr.alpha()[j],
                    alpha_rate: alpha_rates[j],
                }
            })
            .collect();
        let question_beta = tr.beta_question().map(<[f64]>::to_vec);
        pairs.push(PairView {
            answer_id: a.id.clone(),
            timestamp: a.timestamp,
            match_score: tr.match_score,
            rank_score: tr.rank_score,
            question_rates: question_beta.as_deref().map(|b| quantile_rates(b, rates)),
            question_beta,
            sentences,
        });
    }
    Ok(HeatmapReport {
        question_id: question.id.clone(),
        variant,
        rates,
        t0,
        question_tokens: question.tokens.clone(),
        topics: question.topics.clone(),
        notice: (variant.attention == Attention::SentenceLevel).then(|| SENTENCE_ONLY_NOTICE.to_string()),
        pairs,
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn words(out: &mut String, tokens: &[String], rates: Option<&[usize]>, beta: Option<&[f64]>) {
    for (i, t) in tokens.iter().enumerate() {
        match (rates, beta) {
            (Some(r), Some(b)) => {
                let _ = write!(out, r#"<span class="w r{}" title="{:.6}">{}</span> "#, r[i], b[i], escape(t));
            }
            _ => {
                let _ = write!(out, "<span>{}</span> ", escape(t));
            }
        }
    }
}

/// Renders a self-contained page. The report itself is embedded verbatim
/// as JSON in `<script id="attention-data" type="application/json">`.
pub fn render_html(report: &HeatmapReport) -> Result<String> {
    let json = serde_json::to_string(report)?.replace("</", "<\\/");
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(out, "<title>Attention for {}</title>", escape(&report.question_id));
    out.push_str("<style>\n");
    out.push_str("body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.9}\n");
    out.push_str(".w{border-bottom:5px solid transparent;padding:0 1px}\n");
    out.push_str(".sent{display:block;border-left-style:solid;border-left-color:#c0392b;padding-left:.6em;margin:.3em 0}\n");
    out.push_str(".notice{background:#fff4d6;padding:.5em;border:1px solid #e0c060}\n");
    for r in 0..report.rates {
        let depth = (r + 1) as f64 / report.rates as f64;
        let _ = writeln!(out, ".w.r{r}{{border-bottom-color:rgba(31,87,196,{depth:.3})}}");
        let _ = writeln!(out, ".sent.s{r}{{border-left-width:{}px}}", 2 * (r + 1));
    }
    out.push_str("</style>\n</head>\n<body>\n");
    let _ = writeln!(
        out,
        "<h1>Question {}</h1>\n<p>Model: {} &middot; {} rates</p>",
        escape(&report.question_id),
        report.variant,
        report.rates
    );
    if let Some(n) = &report.notice {
        let _ = writeln!(out, "<p class=\"notice\">{}</p>", escape(n));
    }
    for pair in &report.pairs {
        let _ = writeln!(
            out,
            "<section>\n<h2>Answer {}</h2>\n<p>match score {:.6} &middot; ranking score {:.6} &middot; posted {} s after the first answer</p>",
            escape(&pair.answer_id),
            pair.match_score,
            pair.rank_score,
            pair.timestamp - report.t0
        );
        out.push_str("<p class=\"question\">");
        words(&mut out, &report.question_tokens, pair.question_rates.as_deref(), pair.question_beta.as_deref());
        out.push_str("</p>\n<div class=\"answer\">\n");
        for s in &pair.sentences {
            let _ = write!(out, r#"<span class="sent s{}" title="{:.6}">"#, s.alpha_rate, s.alpha);
            words(&mut out, &s.tokens, s.word_rates.as_deref(), s.beta.as_deref());
            out.push_str("</span>\n");
        }
        out.push_str("</div>\n</section>\n");
    }
    let _ = writeln!(
        out,
        "<script id=\"attention-data\" type=\"application/json\">{json}</script>\n</body>\n</html>"
    );
    Ok(out)
}
