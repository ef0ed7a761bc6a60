//! Settings resolution: flags, then a JSON config file, then the
//! `EARNN_SEED` environment variable (seed only), then built-in defaults.

use std::fs;
use std::path::Path;

use earnn::corpus::{SynthSpec, TripleStrategy, DEFAULT_GOOD_THRESHOLD};
use earnn::network::{ModelShape, VariantConfig, DEFAULT_DIM};
use earnn::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::{Failure, SynthArgs, TaskArg, TrainArgs, TripleArg};

pub const SEED_ENV: &str = "EARNN_SEED";

/// Triples per question for the sampled strategy when none is given.
const DEFAULT_PER_QUESTION: usize = 191;

pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// `flag`, else `file`, else the environment, else 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, Failure> {
    Ok(match flag.or(file) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// Training settings as they may appear in a config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    variant: Option<String>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    margin: Option<f64>,
    decay_horizon: Option<f64>,
    dropout: Option<f64>,
    dim: Option<usize>,
    head_dim: Option<usize>,
    min_count: Option<usize>,
    freeze_embeddings: Option<bool>,
    normalize_sentence_weights: Option<bool>,
    shuffle: Option<bool>,
    triples: Option<TripleArg>,
    per_question: Option<usize>,
    good_threshold: Option<u64>,
    track_metrics: Option<bool>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub shape: ModelShape,
    pub min_count: usize,
    pub strategy: TripleStrategy,
}

pub fn train_settings(a: &TrainArgs) -> Result<TrainSettings, Failure> {
    let file: TrainFile = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    let mut variant = match (a.variant, &file.variant) {
        (Some(v), _) => v,
        (None, Some(s)) => s.parse().map_err(|e: earnn::Error| Failure::usage(e.to_string()))?,
        (None, None) => VariantConfig::EARNN,
    };
    variant.normalize_sentence_weights =
        a.normalize_sentence_weights || file.normalize_sentence_weights.unwrap_or(false);
    let defaults = TrainConfig::default();
    let good_threshold = a.good_threshold.or(file.good_threshold).unwrap_or(DEFAULT_GOOD_THRESHOLD);
    let train = TrainConfig {
        learning_rate: a.lr.or(file.learning_rate).unwrap_or(defaults.learning_rate),
        epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        margin: a.margin.or(file.margin).unwrap_or(defaults.margin),
        decay_horizon: a.decay_horizon.or(file.decay_horizon).unwrap_or(defaults.decay_horizon),
        dropout: a.dropout.or(file.dropout).unwrap_or(defaults.dropout),
        seed: resolve_seed(a.seed, file.seed)?,
        variant,
        shuffle: file.shuffle.unwrap_or(defaults.shuffle),
        freeze_embeddings: a.freeze_embeddings || file.freeze_embeddings.unwrap_or(false),
        track_metrics: !a.no_metrics && file.track_metrics.unwrap_or(true),
        good_threshold,
    };
    train.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let dim = a.dim.or(file.dim).unwrap_or(DEFAULT_DIM);
    let shape = ModelShape {
        embed_dim: dim,
        hidden_dim: dim,
        head_dim: a.head_dim.or(file.head_dim).unwrap_or(dim),
    };
    shape.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let triples = a.triples.or(file.triples).unwrap_or(match a.task {
        Some(TaskArg::Selection) => TripleArg::GoodVsBad,
        Some(TaskArg::Ranking) | None => TripleArg::AllPairs,
    });
    let strategy = match triples {
        TripleArg::GoodVsBad => TripleStrategy::GoodVsBad {
            threshold: good_threshold,
        },
        TripleArg::AllPairs => TripleStrategy::AllOrderedPairs,
        TripleArg::Sampled => TripleStrategy::Sampled {
            per_question: a.per_question.or(file.per_question).unwrap_or(DEFAULT_PER_QUESTION),
        },
    };
    Ok(TrainSettings {
        train,
        shape,
        min_count: a.min_count.or(file.min_count).unwrap_or(1),
        strategy,
    })
}

pub fn synth_spec(a: &SynthArgs) -> Result<SynthSpec, Failure> {
    let (mut spec, file_seed) = match &a.config {
        Some(p) => {
            let raw: serde_json::Value = read_json(p)?;
            let file_seed = raw.get("seed").and_then(serde_json::Value::as_u64);
            let spec: SynthSpec =
                serde_json::from_value(raw).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
            (spec, file_seed)
        }
        None => (SynthSpec::default(), None),
    };
    if let Some(v) = a.questions {
        spec.n_questions = v;
    }
    if let Some(v) = a.answers_per_question {
        spec.answers_per_question = v;
    }
    if let Some(v) = a.vocab_size {
        spec.vocab_size = v;
    }
    if let Some(v) = a.decay_horizon {
        spec.decay_horizon = v;
    }
    if let Some(v) = a.time_spread {
        spec.time_spread = v;
    }
    spec.seed = resolve_seed(a.seed, file_seed)?;
    Ok(spec)
}

/// Parses `FROM..TO` with both ends powers of ten into every decade in
/// between, inclusive.
pub fn parse_sweep(range: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::usage(format!("--sweep-H expects FROM..TO with powers of ten, got `{range}`"));
    let (from, to) = range.split_once("..").ok_or_else(bad)?;
    let from: f64 = from.trim().parse().map_err(|_| bad())?;
    let to: f64 = to.trim().parse().map_err(|_| bad())?;
    if !(from > 0.0) || !(to >= from) || !to.is_finite() {
        return Err(bad());
    }
    let (lo, hi) = (from.log10(), to.log10());
    if (lo - lo.round()).abs() > 1e-9 || (hi - hi.round()).abs() > 1e-9 {
        return Err(bad());
    }
    Ok((lo.round() as i32..=hi.round() as i32).map(|e| 10f64.powi(e)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_covers_each_decade() {
        assert_eq!(parse_sweep("1e5..1e9").unwrap(), vec![1e5, 1e6, 1e7, 1e8, 1e9]);
        assert_eq!(parse_sweep("1e6..1e6").unwrap(), vec![1e6]);
        assert!(parse_sweep("3e5..1e9").is_err());
        assert!(parse_sweep("1e9..1e5").is_err());
        assert!(parse_sweep("1e5").is_err());
    }

    #[test]
    fn flag_seed_beats_file_seed() {
        assert_eq!(resolve_seed(Some(3), Some(4)).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(4)).unwrap(), 4);
    }
}
