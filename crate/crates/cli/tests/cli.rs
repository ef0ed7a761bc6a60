use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use earnn::corpus::load_corpus;
use earnn::embedding::{build_vocab, init_embeddings};
use earnn::model_file::ModelFile;
use earnn::network::{ModelShape, VariantConfig};
use earnn::training::init_params;
use tempfile::TempDir;

fn earnn() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_earnn"));
    c.env_remove("EARNN_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    earnn().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small planted corpus and a briefly trained model on it.
fn small_model(dir: &TempDir, variant: &str) -> (PathBuf, PathBuf) {
    let corpus = p(dir, "corpus.jsonl");
    let model = p(dir, &format!("{variant}.bin"));
    ok(run(&[
        "synth", "--output", s(&corpus), "--questions", "6", "--answers-per-question", "5", "--seed", "4",
    ]));
    ok(run(&[
        "train", "--corpus", s(&corpus), "--output", s(&model), "--variant", variant, "--epochs", "1", "--dim", "6",
        "--seed", "3", "--no-metrics",
    ]));
    (corpus, model)
}

#[test]
fn synth_is_deterministic_and_passes_the_filter_unchanged() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (p(&dir, "a.jsonl"), p(&dir, "b.jsonl"), p(&dir, "c.jsonl"));
    let summary = ok(run(&["synth", "--output", s(&a), "--seed", "7"]));
    assert!(summary.contains("decay horizon (s)\t1000000"));
    ok(run(&["synth", "--output", s(&b), "--seed", "7"]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let stats = ok(run(&["ingest", "--input", s(&a), "--output", s(&c)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert!(stats.contains("Average number of answers per question\t12.0"));
    assert!(stats.contains("Total number of questions\t50"));
}

#[test]
fn seed_comes_from_flag_then_environment() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (p(&dir, "a.jsonl"), p(&dir, "b.jsonl"), p(&dir, "c.jsonl"));
    ok(run(&["synth", "--output", s(&a), "--seed", "7", "--questions", "3"]));
    ok(earnn()
        .env("EARNN_SEED", "7")
        .args(["synth", "--output", s(&b), "--questions", "3"])
        .output()
        .unwrap());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    ok(earnn()
        .env("EARNN_SEED", "7")
        .args(["synth", "--output", s(&c), "--questions", "3", "--seed", "8"])
        .output()
        .unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let bad = earnn()
        .env("EARNN_SEED", "seven")
        .args(["synth", "--output", s(&c)])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ingest_is_idempotent_and_reports_empty_results() {
    let dir = TempDir::new().unwrap();
    let (raw, once, twice) = (p(&dir, "raw.jsonl"), p(&dir, "once.jsonl"), p(&dir, "twice.jsonl"));
    ok(run(&["synth", "--output", s(&raw), "--questions", "8", "--seed", "2"]));
    // A stricter word rule removes some answers and then some questions.
    ok(run(&["ingest", "--input", s(&raw), "--output", s(&once), "--min-words", "12", "--min-answers", "3"]));
    ok(run(&["ingest", "--input", s(&once), "--output", s(&twice), "--min-words", "12", "--min-answers", "3"]));
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());

    let stats = ok(run(&["ingest", "--input", s(&raw), "--output", s(&once), "--min-answers", "1000"]));
    assert!(stats.contains("Total number of questions\t0"));
    assert!(fs::read_to_string(&once).unwrap().is_empty());
}

#[test]
fn training_is_byte_deterministic_and_zero_epochs_is_initialisation() {
    let dir = TempDir::new().unwrap();
    let corpus = p(&dir, "c.jsonl");
    ok(run(&["synth", "--output", s(&corpus), "--questions", "4", "--answers-per-question", "4", "--seed", "1"]));
    let train = |out: &Path, epochs: &str, variant: &str| {
        ok(run(&[
            "train", "--corpus", s(&corpus), "--output", s(out), "--epochs", epochs, "--dim", "5", "--seed", "9",
            "--variant", variant, "--no-metrics",
        ]))
    };
    let (m1, m2, m0) = (p(&dir, "m1.bin"), p(&dir, "m2.bin"), p(&dir, "m0.bin"));
    train(&m1, "2", "earnn");
    train(&m2, "2", "earnn");
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());

    train(&m0, "0", "earnn_s");
    let model = ModelFile::load(&m0).unwrap();
    assert_eq!(model.variant, VariantConfig::EARNN_S);
    assert!(!model.variant.use_time_decay);
    let c = load_corpus(&corpus).unwrap();
    let vocab = build_vocab(&c, 1).unwrap();
    let init = init_params(ModelShape::square(5), init_embeddings(&vocab, 5, 9).unwrap(), 10).unwrap();
    assert_eq!(model.params.tensors(), init.tensors());
    assert_ne!(ModelFile::load(&m1).unwrap().params.tensors(), init.tensors());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let corpus = p(&dir, "c.jsonl");
    let cfg = p(&dir, "train.json");
    ok(run(&["synth", "--output", s(&corpus), "--questions", "3", "--answers-per-question", "4"]));
    fs::write(&cfg, r#"{"variant": "earnn_w", "epochs": 1, "dim": 4, "margin": 0.3, "track_metrics": false}"#).unwrap();
    let (a, b) = (p(&dir, "a.bin"), p(&dir, "b.bin"));
    ok(run(&["train", "--corpus", s(&corpus), "--output", s(&a), "--config", s(&cfg)]));
    let m = ModelFile::load(&a).unwrap();
    assert_eq!(m.variant, VariantConfig::EARNN_W);
    assert_eq!(m.params.margin, 0.3);
    assert_eq!(m.train.unwrap().epochs, 1);
    ok(run(&["train", "--corpus", s(&corpus), "--output", s(&b), "--config", s(&cfg), "--margin", "0.2"]));
    assert_eq!(ModelFile::load(&b).unwrap().params.margin, 0.2);

    fs::write(&cfg, r#"{"epocs": 1}"#).unwrap();
    let bad = run(&["train", "--corpus", s(&corpus), "--output", s(&b), "--config", s(&cfg)]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn training_log_has_one_line_per_epoch() {
    let dir = TempDir::new().unwrap();
    let corpus = p(&dir, "c.jsonl");
    let (model, log) = (p(&dir, "m.bin"), p(&dir, "log.jsonl"));
    ok(run(&["synth", "--output", s(&corpus), "--questions", "3", "--answers-per-question", "4"]));
    ok(run(&[
        "train", "--corpus", s(&corpus), "--output", s(&model), "--log", s(&log), "--epochs", "3", "--dim", "4",
    ]));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        assert!(l["mean_loss"].as_f64().unwrap() >= 0.0);
        assert!(l["skipped"].is_u64());
        assert!(l["train_metrics"]["map"].is_f64());
    }
}

#[test]
fn eval_reports_exactly_the_task_metrics() {
    let dir = TempDir::new().unwrap();
    let (corpus, model) = small_model(&dir, "earnn");
    let sel = ok(run(&["eval", "--model", s(&model), "--corpus", s(&corpus), "--task", "selection"]));
    let v: serde_json::Value = serde_json::from_str(&sel).unwrap();
    let keys: Vec<&str> = v["metrics"].as_object().unwrap().keys().map(String::as_str).collect();
    let mut expected = vec!["P@5", "P@10", "MAP", "MRR"];
    expected.sort();
    assert_eq!(keys, expected);
    assert_eq!(v["questions"], 6);

    let rank = ok(run(&["eval", "--model", s(&model), "--corpus", s(&corpus), "--task", "ranking"]));
    let v: serde_json::Value = serde_json::from_str(&rank).unwrap();
    let mut keys: Vec<&str> = v["metrics"].as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, vec!["DOA", "NDCG@1", "NDCG@10", "NDCG@5"]);
    for (_, x) in v["metrics"].as_object().unwrap() {
        let x = x.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x));
    }

    let csv = ok(run(&["eval", "--model", s(&model), "--corpus", s(&corpus), "--task", "ranking", "--format", "csv"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("NDCG@1,NDCG@5,NDCG@10,DOA"));
    assert_eq!(lines.next().unwrap().split(',').count(), 4);

    let sweep = ok(run(&[
        "eval", "--model", s(&model), "--corpus", s(&corpus), "--format", "csv", "--sweep-H", "1e5..1e9",
    ]));
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "H,P@5,P@10,MAP,MRR");
    assert_eq!(rows.len(), 6);
    assert!(rows[1].starts_with("1e5,"));

    let again = ok(run(&["eval", "--model", s(&model), "--corpus", s(&corpus), "--task", "selection"]));
    assert_eq!(sel, again);
}

fn write_lines(path: &Path, lines: &[&str]) {
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn rank_prefers_the_earlier_of_identical_answers() {
    let dir = TempDir::new().unwrap();
    let (_, model) = small_model(&dir, "earnn");
    let input = p(&dir, "q.jsonl");
    write_lines(
        &input,
        &[
            r#"{"kind":"question","id":"q","text":"w0001 w0002 w0003","topics":["w0002"],"post_time":0}"#,
            r#"{"kind":"answer","id":"b_late","question_id":"q","text":"w0002 w0009. w0011","timestamp":1000100,"upvotes":0}"#,
            r#"{"kind":"answer","id":"a_early","question_id":"q","text":"w0002 w0009. w0011","timestamp":100,"upvotes":0}"#,
        ],
    );
    let out = ok(run(&["rank", "--model", s(&model), "--input", s(&input)]));
    let ids: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, vec!["a_early", "b_late"]);
    let scores: Vec<f64> = out.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(scores[0] > scores[1]);
    let json = ok(run(&["rank", "--model", s(&model), "--input", s(&input), "--json"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let ratio = v[1]["rank_score"].as_f64().unwrap() / v[0]["rank_score"].as_f64().unwrap();
    assert!((ratio - (-1.0f64).exp()).abs() < 1e-9);

    write_lines(
        &input,
        &[
            r#"{"kind":"question","id":"q","text":"w0001 w0002 w0003","topics":["w0002"],"post_time":0}"#,
            r#"{"kind":"answer","id":"only","question_id":"q","text":"unknownword w0002","timestamp":10,"upvotes":0}"#,
        ],
    );
    let out = ok(run(&["rank", "--model", s(&model), "--input", s(&input)]));
    assert_eq!(out.lines().count(), 1);
}

#[test]
fn no_decay_keeps_order_when_timestamps_are_equal() {
    let dir = TempDir::new().unwrap();
    let (_, model) = small_model(&dir, "earnn");
    let input = p(&dir, "q.jsonl");
    write_lines(
        &input,
        &[
            r#"{"kind":"question","id":"q","text":"w0001 w0002 w0003","topics":["w0002"],"post_time":0}"#,
            r#"{"kind":"answer","id":"x","question_id":"q","text":"w0002 w0009. w0011","timestamp":50,"upvotes":0}"#,
            r#"{"kind":"answer","id":"y","question_id":"q","text":"w0150 w0120 w0002","timestamp":50,"upvotes":0}"#,
            r#"{"kind":"answer","id":"z","question_id":"q","text":"w0003. w0004 w0005 w0006","timestamp":50,"upvotes":0}"#,
        ],
    );
    let ids = |out: String| out.lines().map(|l| l.split('\t').next().unwrap().to_string()).collect::<Vec<_>>();
    let with = ids(ok(run(&["rank", "--model", s(&model), "--input", s(&input)])));
    let without = ids(ok(run(&["rank", "--model", s(&model), "--input", s(&input), "--no-decay"])));
    assert_eq!(with, without);
    assert_eq!(with.len(), 3);
}

fn embedded_json(html: &str) -> serde_json::Value {
    let start = html.find(r#"type="application/json">"#).unwrap() + r#"type="application/json">"#.len();
    let end = start + html[start..].find("</script>").unwrap();
    serde_json::from_str(&html[start..end]).unwrap()
}

#[test]
fn visualize_embeds_weights_and_rates() {
    let dir = TempDir::new().unwrap();
    let (corpus, model) = small_model(&dir, "earnn_w");
    let out = p(&dir, "v.html");
    ok(run(&[
        "visualize", "--model", s(&model), "--corpus", s(&corpus), "--question", "q0", "--output", s(&out), "--rates",
        "5",
    ]));
    let html = fs::read_to_string(&out).unwrap();
    let levels: std::collections::BTreeSet<&str> = html
        .lines()
        .filter(|l| l.starts_with(".w.r"))
        .map(|l| l.split('{').next().unwrap())
        .collect();
    assert_eq!(levels.len(), 5);
    let data = embedded_json(&html);
    assert_eq!(data["rates"], 5);
    let pairs = data["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 5);
    for pair in pairs {
        let qsum: f64 = pair["question_beta"].as_array().unwrap().iter().map(|b| b.as_f64().unwrap()).sum();
        assert!((qsum - 1.0).abs() < 1e-9);
        for sent in pair["sentences"].as_array().unwrap() {
            let sum: f64 = sent["beta"].as_array().unwrap().iter().map(|b| b.as_f64().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    ok(run(&[
        "visualize", "--model", s(&model), "--corpus", s(&corpus), "--question", "q0", "--answers", "q0a01,q0a03",
        "--output", s(&out),
    ]));
    assert_eq!(embedded_json(&fs::read_to_string(&out).unwrap())["pairs"].as_array().unwrap().len(), 2);

    let missing = run(&[
        "visualize", "--model", s(&model), "--corpus", s(&corpus), "--question", "nope", "--output", s(&out),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn zero_translation_gives_uniform_word_rates() {
    let dir = TempDir::new().unwrap();
    let (corpus, model_path) = small_model(&dir, "earnn_w");
    let mut model = ModelFile::load(&model_path).unwrap();
    model.params.translation.as_mut_slice().fill(0.0);
    model.save(&model_path).unwrap();
    let out = p(&dir, "v.html");
    ok(run(&["visualize", "--model", s(&model_path), "--corpus", s(&corpus), "--question", "q1", "--output", s(&out)]));
    let data = embedded_json(&fs::read_to_string(&out).unwrap());
    for pair in data["pairs"].as_array().unwrap() {
        for sent in pair["sentences"].as_array().unwrap() {
            let rates = sent["word_rates"].as_array().unwrap();
            assert!(rates.iter().all(|r| r == &rates[0]));
        }
    }
}

#[test]
fn sentence_level_models_get_a_notice() {
    let dir = TempDir::new().unwrap();
    let (corpus, model) = small_model(&dir, "earnn_s");
    let out = p(&dir, "v.html");
    let o = run(&["visualize", "--model", s(&model), "--corpus", s(&corpus), "--question", "q2", "--output", s(&out)]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sentence-level attention only"));
    ok(o);
    let html = fs::read_to_string(&out).unwrap();
    assert!(html.contains(r#"class="notice""#));
    let data = embedded_json(&html);
    assert!(data["pairs"][0]["question_beta"].is_null());
    assert!(data["pairs"][0]["sentences"][0]["alpha"].is_f64());
}

#[test]
fn gradcheck_passes_and_catches_the_injected_fault() {
    let out = ok(run(&["gradcheck"]));
    assert_eq!(out.matches("PASS").count(), 3);
    let decay = ok(run(&["gradcheck", "--variant", "earnn", "--seed", "3"]));
    assert!(decay.contains("PASS"));
    let bad = run(&["gradcheck", "--inject-fault", "tanh-deriv"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("worst coordinate"));
}

#[test]
fn exit_codes_distinguish_usage_and_io_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["gradcheck", "--variant", "lstm"]).status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    let missing = run(&["eval", "--model", s(&p(&dir, "none.bin")), "--corpus", s(&p(&dir, "none.jsonl"))]);
    assert_eq!(missing.status.code(), Some(3));
    let garbage = p(&dir, "bad.jsonl");
    fs::write(&garbage, "{\"kind\":\"question\"\n").unwrap();
    let o = run(&["ingest", "--input", s(&garbage), "--output", s(&p(&dir, "o.jsonl"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":1:"));
    let notmodel = run(&["eval", "--model", s(&garbage), "--corpus", s(&garbage)]);
    assert_eq!(notmodel.status.code(), Some(3));
}

#[test]
fn empty_triple_sets_abort_training() {
    let dir = TempDir::new().unwrap();
    let corpus = p(&dir, "c.jsonl");
    write_lines(
        &corpus,
        &[
            r#"{"kind":"question","id":"q","text":"a b c","topics":["b"],"post_time":0}"#,
            r#"{"kind":"answer","id":"x","question_id":"q","text":"a b","timestamp":5,"upvotes":3}"#,
            r#"{"kind":"answer","id":"y","question_id":"q","text":"b c","timestamp":6,"upvotes":3}"#,
        ],
    );
    let o = run(&["train", "--corpus", s(&corpus), "--output", s(&p(&dir, "m.bin")), "--dim", "4"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no training triples"));
}

/// Checks the output against the published schema's top-level and metric
/// key sets and the unit-interval bound.
fn conforms(report: &serde_json::Value, schema: &serde_json::Value) {
    let obj = report.as_object().unwrap();
    let props = schema["properties"].as_object().unwrap();
    for key in schema["required"].as_array().unwrap() {
        assert!(obj.contains_key(key.as_str().unwrap()), "missing {key}");
    }
    for key in obj.keys() {
        assert!(props.contains_key(key), "unexpected {key}");
    }
    assert!(props["task"]["enum"].as_array().unwrap().contains(&report["task"]));
    assert!(props["variant"]["enum"].as_array().unwrap().contains(&report["variant"]));
    let metrics = obj["metrics"].as_object().unwrap();
    let mut keys: Vec<&String> = metrics.keys().collect();
    keys.sort();
    let matching = props["metrics"]["oneOf"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|alt| {
            let mut req: Vec<&str> = alt["required"].as_array().unwrap().iter().map(|k| k.as_str().unwrap()).collect();
            req.sort();
            req == keys.iter().map(|k| k.as_str()).collect::<Vec<_>>()
        })
        .count();
    assert_eq!(matching, 1);
    assert!(metrics.values().all(|v| (0.0..=1.0).contains(&v.as_f64().unwrap())));
    if let Some(per) = obj.get("per_question") {
        let req = props["per_question"]["items"]["required"].as_array().unwrap();
        for q in per.as_array().unwrap() {
            for key in req {
                assert!(q.get(key.as_str().unwrap()).is_some(), "per-question entry missing {key}");
            }
        }
    }
}

#[test]
fn eval_json_follows_the_published_schema() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schema/eval-report.schema.json")).unwrap();
    let dir = TempDir::new().unwrap();
    let (corpus, model) = small_model(&dir, "earnn_w");
    for task in ["selection", "ranking"] {
        let out = ok(run(&["eval", "--model", s(&model), "--corpus", s(&corpus), "--task", task, "--per-question"]));
        conforms(&serde_json::from_str(&out).unwrap(), &schema);
    }
    let sweep = ok(run(&["eval", "--model", s(&model), "--corpus", s(&corpus), "--sweep-H", "1e6..1e8"]));
    let arr: serde_json::Value = serde_json::from_str(&sweep).unwrap();
    assert_eq!(arr.as_array().unwrap().len(), 3);
    for r in arr.as_array().unwrap() {
        conforms(r, &schema);
    }
}
