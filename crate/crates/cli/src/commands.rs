use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use earnn::corpus::{
    build_triples, filter_corpus, load_corpus, synth_corpus, Corpus, CorpusStats, FilterConfig, MinAge,
    TripleStrategy,
};
use earnn::dataset::Dataset;
use earnn::embedding::{build_vocab, init_embeddings, load_embeddings, Vocabulary};
use earnn::heatmap::{build_report, render_html};
use earnn::metrics::{evaluate, EvalOptions, EvalReport, ModelScorer, QuestionMetrics, Task};
use earnn::model_file::ModelFile;
use earnn::network::{score_answers, VariantConfig};
use earnn::training::{grad_check, init_params, random_instance, train_with, Fault, GradCheckOptions};
use serde::Serialize;

use crate::config::{parse_sweep, resolve_seed, synth_spec, train_settings};
use crate::{
    EvalArgs, Failure, FaultArg, Format, GradcheckArgs, IngestArgs, RankArgs, SynthArgs, TaskArg, TrainArgs,
    VisualizeArgs,
};

type CmdResult = Result<(), Failure>;

fn write_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::io(format!("{}: {e}", path.display()))
}

pub fn ingest(a: IngestArgs) -> CmdResult {
    let raw = load_corpus(&a.input)?;
    let cfg = FilterConfig {
        min_answers_exclusive: a.min_answers,
        min_top_upvotes_exclusive: a.min_top_upvotes,
        min_words: a.min_words,
        require_topics: !a.allow_no_topics,
        min_age: a.reference_time.zip(a.min_age).map(|(reference_time, min_age_secs)| MinAge {
            reference_time,
            min_age_secs,
        }),
    };
    let cleaned = filter_corpus(&raw, &cfg);
    cleaned.save(&a.output)?;
    let seed = resolve_seed(a.seed, None)?;
    let stats = CorpusStats::compute(
        &cleaned,
        TripleStrategy::Sampled {
            per_question: a.sample_triples,
        },
        seed,
    );
    let good = earnn::corpus::label_selection(&cleaned, a.good_threshold)
        .values()
        .filter(|&&g| g)
        .count();
    println!("{stats}");
    println!("Number of good answers (upvotes > {})\t{good}", a.good_threshold);
    eprintln!(
        "kept {} of {} questions, wrote {}",
        cleaned.num_questions(),
        raw.num_questions(),
        a.output.display()
    );
    Ok(())
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let spec = synth_spec(&a)?;
    let s = synth_corpus(&spec)?;
    s.corpus.save(&a.output)?;
    let values: Vec<f64> = s.planted.values().copied().collect();
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let max = values.iter().copied().fold(0.0, f64::max);
    let zero = values.iter().filter(|&&v| v == 0.0).count();
    println!("questions\t{}", s.corpus.num_questions());
    println!("answers\t{}", s.corpus.num_answers());
    println!("seed\t{}", spec.seed);
    println!("decay horizon (s)\t{}", spec.decay_horizon);
    println!("planted value mean\t{mean:.4}");
    println!("planted value max\t{max:.4}");
    println!("answers with zero planted value\t{zero}");
    Ok(())
}

pub fn train(a: TrainArgs) -> CmdResult {
    let settings = train_settings(&a)?;
    let cfg = settings.train;
    let corpus = load_corpus(&a.corpus)?;
    let vocab = build_vocab(&corpus, settings.min_count)?;
    let embeddings = match &a.embeddings {
        Some(p) => load_embeddings(&vocab, p, cfg.seed)?,
        None => init_embeddings(&vocab, settings.shape.embed_dim, cfg.seed)?,
    };
    if embeddings.dim() != settings.shape.embed_dim {
        return Err(Failure::usage(format!(
            "embedding file has dimension {} but --dim is {}",
            embeddings.dim(),
            settings.shape.embed_dim
        )));
    }
    let init_seed = cfg.seed.wrapping_add(1);
    let params = init_params(settings.shape, embeddings, init_seed)?;
    let data = Dataset::encode(&corpus, &vocab);
    let triples = build_triples(&corpus, settings.strategy, cfg.seed);
    if triples.is_empty() {
        return Err(Failure::io(format!(
            "{} yields no training triples under {}",
            a.corpus.display(),
            settings.strategy
        )));
    }
    eprintln!(
        "training {} on {} questions, {} triples ({}), {} epochs",
        cfg.variant,
        data.len(),
        triples.len(),
        settings.strategy,
        cfg.epochs
    );
    let mut log = match &a.log {
        Some(p) => Some((p, BufWriter::new(File::create(p).map_err(|e| write_err(p, e))?))),
        None => None,
    };
    let mut log_error = None;
    let outcome = train_with(params, &data, &triples, &cfg, |entry| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  updated {:>6}  skipped {:>6}{}",
            entry.epoch,
            entry.mean_loss,
            entry.updated,
            entry.skipped,
            entry
                .train_metrics
                .as_ref()
                .map(|m| format!("  MAP {:.4}  DOA {:.4}", m.map, m.doa))
                .unwrap_or_default()
        );
        if let Some((path, w)) = log.as_mut() {
            let line = serde_json::to_string(entry).expect("epoch log serializes");
            if let Err(e) = writeln!(w, "{line}") {
                log_error.get_or_insert_with(|| write_err(path, e));
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| write_err(path, e))?;
    }
    let model = ModelFile {
        vocab,
        variant: cfg.variant,
        params: outcome.params,
        init_seed,
        train: Some(cfg),
    };
    model.save(&a.output)?;
    eprintln!("wrote {}", a.output.display());
    Ok(())
}

fn oov_tokens(corpus: &Corpus, vocab: &Vocabulary) -> (usize, usize) {
    let mut total = 0;
    let mut oov = 0;
    let mut count = |toks: &[String]| {
        total += toks.len();
        oov += toks.iter().filter(|t| !vocab.contains(t)).count();
    };
    for q in corpus.questions() {
        count(&q.tokens);
        q.topics.iter().for_each(|t| count(t));
    }
    for ans in corpus.all_answers() {
        ans.sentences.iter().for_each(|s| count(s));
    }
    (oov, total)
}

#[derive(Serialize)]
struct SelectionMetrics {
    #[serde(rename = "P@5")]
    p_at_5: f64,
    #[serde(rename = "P@10")]
    p_at_10: f64,
    #[serde(rename = "MAP")]
    map: f64,
    #[serde(rename = "MRR")]
    mrr: f64,
}

#[derive(Serialize)]
struct RankingMetrics {
    #[serde(rename = "NDCG@1")]
    ndcg_at_1: f64,
    #[serde(rename = "NDCG@5")]
    ndcg_at_5: f64,
    #[serde(rename = "NDCG@10")]
    ndcg_at_10: f64,
    #[serde(rename = "DOA")]
    doa: f64,
}

#[derive(Serialize)]
#[serde(untagged)]
enum TaskMetrics {
    Selection(SelectionMetrics),
    Ranking(RankingMetrics),
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    task: Task,
    variant: String,
    decay_horizon: f64,
    questions: usize,
    /// Questions with at least one good answer (MAP/MRR denominators).
    map_questions: usize,
    /// Questions with at least two answers (DOA denominator).
    doa_questions: usize,
    metrics: TaskMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_question: Option<&'a [QuestionMetrics]>,
}

fn task_metrics(r: &EvalReport, task: Task) -> TaskMetrics {
    match task {
        Task::Selection => TaskMetrics::Selection(SelectionMetrics {
            p_at_5: r.p_at_5,
            p_at_10: r.p_at_10,
            map: r.map,
            mrr: r.mrr,
        }),
        Task::Ranking => TaskMetrics::Ranking(RankingMetrics {
            ndcg_at_1: r.ndcg_at_1,
            ndcg_at_5: r.ndcg_at_5,
            ndcg_at_10: r.ndcg_at_10,
            doa: r.doa,
        }),
    }
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let mut model = ModelFile::load(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let (oov, total) = oov_tokens(&corpus, &model.vocab);
    if oov > 0 {
        eprintln!("warning: {oov} of {total} corpus tokens are not in the model vocabulary and map to <oov>");
    }
    let data = Dataset::encode(&corpus, &model.vocab);
    let task = match a.task {
        TaskArg::Selection => Task::Selection,
        TaskArg::Ranking => Task::Ranking,
    };
    let opts = EvalOptions {
        good_threshold: a.good_threshold,
        strict_doa: a.strict_doa,
    };
    let horizons = match &a.sweep_h {
        Some(r) => parse_sweep(r)?,
        None => vec![model.params.decay_horizon],
    };
    let mut reports = Vec::with_capacity(horizons.len());
    for &h in &horizons {
        model.params.decay_horizon = h;
        let scorer = ModelScorer {
            params: &model.params,
            variant: model.variant,
        };
        reports.push((h, evaluate(&scorer, &data, &opts)?));
    }
    let sweep = a.sweep_h.is_some();
    match a.format {
        Format::Csv => {
            let header = EvalReport::csv_header(task);
            if sweep {
                println!("H,{header}");
                for (h, r) in &reports {
                    println!("{h:e},{}", r.csv_row(task));
                }
            } else {
                println!("{header}");
                println!("{}", reports[0].1.csv_row(task));
            }
        }
        Format::Json => {
            let outputs: Vec<EvalOutput> = reports
                .iter()
                .map(|(h, r)| EvalOutput {
                    task,
                    variant: model.variant.to_string(),
                    decay_horizon: *h,
                    questions: r.questions,
                    map_questions: r.map_questions,
                    doa_questions: r.doa_questions,
                    metrics: task_metrics(r, task),
                    per_question: a.per_question.then_some(r.per_question.as_slice()),
                })
                .collect();
            let text = if sweep {
                serde_json::to_string_pretty(&outputs)
            } else {
                serde_json::to_string_pretty(&outputs[0])
            }
            .map_err(|e| Failure::io(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RankedAnswer {
    id: String,
    timestamp: i64,
    match_score: f64,
    rank_score: f64,
}

pub fn rank(a: RankArgs) -> CmdResult {
    let model = ModelFile::load(&a.model)?;
    let corpus = load_corpus(&a.input)?;
    if corpus.num_questions() != 1 {
        return Err(Failure::usage(format!(
            "{} must hold exactly one question, found {}",
            a.input.display(),
            corpus.num_questions()
        )));
    }
    let data = Dataset::encode(&corpus, &model.vocab);
    let Some(q) = data.questions().first() else {
        return Err(Failure::usage(format!("{} has no answers to rank", a.input.display())));
    };
    let inputs: Vec<_> = q.answers.iter().map(|x| x.input.clone()).collect();
    let scores = score_answers(&model.params, model.variant, &q.input, &inputs, q.t0)?;
    let mut ranked: Vec<RankedAnswer> = q
        .answers
        .iter()
        .zip(scores)
        .map(|(ans, (v, vt))| RankedAnswer {
            id: ans.id.clone(),
            timestamp: ans.input.timestamp,
            match_score: v,
            rank_score: vt,
        })
        .collect();
    let key = |r: &RankedAnswer| if a.no_decay { r.match_score } else { r.rank_score };
    ranked.sort_by(|x, y| key(y).total_cmp(&key(x)).then_with(|| x.id.cmp(&y.id)));
    if a.json {
        println!("{}", serde_json::to_string_pretty(&ranked).map_err(|e| Failure::io(e.to_string()))?);
    } else {
        for r in &ranked {
            println!("{}\t{:.9}", r.id, key(r));
        }
    }
    Ok(())
}

pub fn visualize(a: VisualizeArgs) -> CmdResult {
    let model = ModelFile::load(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let question = corpus
        .question(&a.question)
        .ok_or_else(|| Failure::usage(format!("no question `{}` in {}", a.question, a.corpus.display())))?;
    let answers: Vec<_> = if a.answers.is_empty() {
        corpus.answers(&question.id).iter().collect()
    } else {
        a.answers
            .iter()
            .map(|id| {
                corpus
                    .answer(&question.id, id)
                    .ok_or_else(|| Failure::usage(format!("question `{}` has no answer `{id}`", question.id)))
            })
            .collect::<Result<_, _>>()?
    };
    let t0 = corpus
        .first_answer_time(&question.id)
        .ok_or_else(|| Failure::usage(format!("question `{}` has no answers", question.id)))?;
    let rates = usize::try_from(a.rates).map_err(|_| Failure::usage("--rates is too large"))?;
    let report = build_report(&model.params, &model.vocab, model.variant, question, &answers, t0, rates)?;
    if let Some(n) = &report.notice {
        eprintln!("note: {n}");
    }
    let html = render_html(&report)?;
    fs::write(&a.output, html).map_err(|e| write_err(&a.output, e))?;
    eprintln!("wrote {}", a.output.display());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let seed = resolve_seed(a.seed, None)?;
    let variants = match a.variant {
        Some(v) => vec![v],
        None => vec![VariantConfig::EARNN, VariantConfig::EARNN_W, VariantConfig::EARNN_S],
    };
    let opts = GradCheckOptions {
        epsilon: a.epsilon,
        samples_per_tensor: a.samples,
        seed,
        fault: match a.inject_fault {
            Some(FaultArg::TanhDeriv) => Fault::TanhDerivative,
            None => Fault::None,
        },
        train_embeddings: true,
    };
    let (params, data, triple) = random_instance(seed)?;
    let mut failed = Vec::new();
    for v in variants {
        let r = grad_check(&params, &data, triple, v, &opts)?;
        let ok = r.max_rel_error <= a.tolerance;
        println!(
            "{:<8} max relative error {:.3e} over {} coordinates: {}",
            v.to_string(),
            r.max_rel_error,
            r.checked,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            let w = &r.worst;
            println!(
                "         worst coordinate {}[{}]: analytic {:.9e}, numeric {:.9e}",
                w.tensor, w.index, w.analytic, w.numeric
            );
            failed.push(v.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::verify(format!(
            "gradient check failed for {} (tolerance {:e})",
            failed.join(", "),
            a.tolerance
        )))
    }
}
