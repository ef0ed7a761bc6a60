//! Pairwise hinge training with per-triple SGD and the skip rule.

mod backward;
mod gradcheck;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Triple, DEFAULT_GOOD_THRESHOLD};
use crate::dataset::{Dataset, TripleRef};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::metrics::{evaluate, EvalOptions, EvalReport, ModelScorer};
use crate::network::{
    forward, Dropout, ForwardTrace, LstmParams, ModelParams, ModelShape, VariantConfig, DEFAULT_DECAY_HORIZON,
    DEFAULT_MARGIN,
};

pub use backward::{Fault, Gradients};
pub use gradcheck::{grad_check, random_instance, relative_error, CoordinateError, GradCheckOptions, GradCheckReport};

use backward::Backprop;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub margin: f64,
    pub decay_horizon: f64,
    pub dropout: f64,
    pub seed: u64,
    pub variant: VariantConfig,
    pub shuffle: bool,
    pub freeze_embeddings: bool,
    /// Evaluate on the training set after every epoch.
    pub track_metrics: bool,
    pub good_threshold: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 50,
            margin: DEFAULT_MARGIN,
            decay_horizon: DEFAULT_DECAY_HORIZON,
            dropout: 0.2,
            seed: 0,
            variant: VariantConfig::EARNN,
            shuffle: true,
            freeze_embeddings: false,
            track_metrics: true,
            good_threshold: DEFAULT_GOOD_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        if !(self.margin > 0.0) || !(self.decay_horizon > 0.0) {
            return Err(Error::InvalidArgument("margin and decay horizon must be positive".into()));
        }
        Ok(())
    }
}

fn glorot_fill<R: Rng>(m: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    let bound = glorot_bound(fan_in, fan_out);
    for v in m {
        *v = rng.gen_range(-bound..=bound);
    }
}

/// `sqrt(6 / (fan_in + fan_out))`
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights (each matrix with its own fan-in/fan-out), zero
/// biases, default margin and decay horizon.
pub fn init_params(shape: ModelShape, embeddings: EmbeddingTable, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(shape, embeddings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, u) = (shape.embed_dim, shape.head_dim);
    p.lstm_q = LstmParams::glorot(k, k, &mut rng);
    p.lstm_a = LstmParams::glorot(k, k, &mut rng);
    glorot_fill(p.translation.as_mut_slice(), k, k, &mut rng);
    glorot_fill(p.head_w1.as_mut_slice(), 2 * k, u, &mut rng);
    glorot_fill(&mut p.head_w2, u, 1, &mut rng);
    Ok(p)
}

/// The two forward passes of one triple and their hinge.
#[derive(Debug, Clone)]
pub struct TripleOutcome {
    /// `m + S(q, a⁻) − S(q, a⁺)`
    pub delta: f64,
    pub loss: f64,
    pub pos: ForwardTrace,
    pub neg: ForwardTrace,
}

/// Runs both arms of a triple; each arm encodes the question itself and
/// draws its own dropout masks.
pub fn triple_loss(
    p: &ModelParams,
    data: &Dataset,
    t: TripleRef,
    variant: VariantConfig,
    mut dropout: Option<&mut Dropout>,
) -> Result<TripleOutcome> {
    let q = &data.questions()[t.question];
    let pos = forward(p, variant, &q.input, &q.answers[t.pos].input, q.t0, dropout.as_deref_mut())?;
    let neg = forward(p, variant, &q.input, &q.answers[t.neg].input, q.t0, dropout)?;
    let delta = p.margin + neg.rank_score - pos.rank_score;
    Ok(TripleOutcome {
        delta,
        loss: delta.max(0.0),
        pos,
        neg,
    })
}

/// Gradient of the hinge for a violating triple (`delta > 0`).
pub fn backward(p: &ModelParams, outcome: &TripleOutcome, fault: Fault, train_embeddings: bool) -> Result<Gradients> {
    if !(outcome.delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "backward called on a satisfied triple (delta = {})",
            outcome.delta
        )));
    }
    let mut grads = Gradients::zeros_like(p);
    let mut bp = Backprop {
        params: p,
        grads: &mut grads,
        fault,
        train_embeddings,
    };
    bp.trace(&outcome.pos, -1.0);
    bp.trace(&outcome.neg, 1.0);
    Ok(grads)
}

/// `θ ← θ − lr · g` for every tensor.
pub fn sgd_step(p: &mut ModelParams, g: &Gradients, lr: f64) {
    let dense = g.dense();
    for (t, gt) in p.tensors_mut().into_iter().zip(dense) {
        axpy(-lr, gt, t);
    }
    for (&row, gr) in &g.embeddings {
        axpy(-lr, gr, p.embeddings.row_mut(row));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub triples: usize,
    pub skipped: usize,
    pub updated: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_metrics: Option<EpochMetrics>,
}

/// Headline training-set metrics (per-question detail dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub p_at_5: f64,
    pub p_at_10: f64,
    pub map: f64,
    pub mrr: f64,
    pub ndcg_at_1: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub doa: f64,
}

impl From<&EvalReport> for EpochMetrics {
    fn from(r: &EvalReport) -> Self {
        EpochMetrics {
            p_at_5: r.p_at_5,
            p_at_10: r.p_at_10,
            map: r.map,
            mrr: r.mrr,
            ndcg_at_1: r.ndcg_at_1,
            ndcg_at_5: r.ndcg_at_5,
            ndcg_at_10: r.ndcg_at_10,
            doa: r.doa,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Trains from `initial`; the config's margin and decay horizon overwrite
/// the ones stored in the parameters.
pub fn train(initial: ModelParams, data: &Dataset, triples: &[Triple], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(initial, data, triples, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut params: ModelParams,
    data: &Dataset,
    triples: &[Triple],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.margin = cfg.margin;
    params.decay_horizon = cfg.decay_horizon;
    params.validate()?;
    let refs = data.resolve_all(triples)?;
    if refs.is_empty() {
        return Err(Error::InvalidArgument("no training triples".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout = if cfg.dropout > 0.0 {
        Some(Dropout::new(cfg.dropout, cfg.seed.wrapping_add(0x5eed_d00d))?)
    } else {
        None
    };
    let mut order: Vec<usize> = (0..refs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut order_rng);
        }
        let (mut total, mut skipped) = (0.0, 0usize);
        for (i, &ti) in order.iter().enumerate() {
            let out = triple_loss(&params, data, refs[ti], cfg.variant, dropout.as_mut())?;
            if !out.delta.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, triple: i });
            }
            total += out.loss;
            if out.delta <= 0.0 {
                skipped += 1;
                continue;
            }
            let g = backward(&params, &out, Fault::None, !cfg.freeze_embeddings)?;
            sgd_step(&mut params, &g, cfg.learning_rate);
        }
        let train_metrics = if cfg.track_metrics {
            let scorer = ModelScorer {
                params: &params,
                variant: cfg.variant,
            };
            let opts = EvalOptions {
                good_threshold: cfg.good_threshold,
                strict_doa: false,
            };
            Some(EpochMetrics::from(&evaluate(&scorer, data, &opts)?))
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            mean_loss: total / refs.len() as f64,
            triples: refs.len(),
            skipped,
            updated: refs.len() - skipped,
            train_metrics,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthSpec};
    use crate::corpus::{build_triples, TripleStrategy};
    use crate::embedding::{build_vocab, init_embeddings};

    fn tiny() -> (Dataset, Vec<Triple>, EmbeddingTable) {
        let spec = SynthSpec {
            n_questions: 3,
            answers_per_question: 4,
            vocab_size: 40,
            seed: 3,
            ..SynthSpec::default()
        };
        let s = synth_corpus(&spec).unwrap();
        let vocab = build_vocab(&s.corpus, 1).unwrap();
        let triples = build_triples(&s.corpus, TripleStrategy::AllOrderedPairs, 0);
        let data = Dataset::encode(&s.corpus, &vocab);
        let emb = init_embeddings(&vocab, 4, 1).unwrap();
        (data, triples, emb)
    }

    #[test]
    fn glorot_bounds_follow_fan_sizes() {
        let (_, _, emb) = tiny();
        let p = init_params(ModelShape { embed_dim: 4, hidden_dim: 4, head_dim: 6 }, emb, 0).unwrap();
        let max = |s: &[f64]| s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max(p.lstm_q.weights.as_slice()) <= glorot_bound(8, 4));
        assert!(max(p.translation.as_slice()) <= glorot_bound(4, 4));
        assert!(max(p.head_w1.as_slice()) <= glorot_bound(8, 6));
        assert!(max(&p.head_w2) <= glorot_bound(6, 1));
        assert!(p.lstm_q.bias.iter().chain(&p.head_b1).all(|&b| b == 0.0));
        assert_eq!(p.head_b2, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences_for_every_variant() {
        for seed in 0..3 {
            let (p, data, t) = random_instance(seed).unwrap();
            for variant in [VariantConfig::EARNN, VariantConfig::EARNN_W, VariantConfig::EARNN_S] {
                let r = grad_check(&p, &data, t, variant, &GradCheckOptions::default()).unwrap();
                assert!(r.max_rel_error <= 1e-4, "seed {seed} {variant}: {:?}", r.worst);
                assert!(r.per_tensor.iter().all(|&(_, n, _)| n > 0));
            }
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        let (p, data, t) = random_instance(0).unwrap();
        let opts = GradCheckOptions {
            fault: Fault::TanhDerivative,
            ..GradCheckOptions::default()
        };
        for variant in [VariantConfig::EARNN, VariantConfig::EARNN_W, VariantConfig::EARNN_S] {
            let r = grad_check(&p, &data, t, variant, &opts).unwrap();
            assert!(r.max_rel_error >= 1e-1, "{variant}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn relative_error_guards_zero() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }

    #[test]
    fn small_step_decreases_violated_loss() {
        let (mut p, data, t) = random_instance(4).unwrap();
        let before = triple_loss(&p, &data, t, VariantConfig::EARNN, None).unwrap();
        let g = backward(&p, &before, Fault::None, true).unwrap();
        sgd_step(&mut p, &g, 1e-4);
        let after = triple_loss(&p, &data, t, VariantConfig::EARNN, None).unwrap();
        assert!(after.loss < before.loss);
    }

    #[test]
    fn satisfied_triples_are_skipped() {
        let (data, triples, emb) = tiny();
        let mut p = init_params(ModelShape::square(4), emb, 0).unwrap();
        p.margin = 1e-12;
        let t = data.resolve(&triples[0]).unwrap();
        let mut out = triple_loss(&p, &data, t, VariantConfig::EARNN, None).unwrap();
        out.delta = -0.5;
        assert!(backward(&p, &out, Fault::None, true).is_err());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (data, triples, emb) = tiny();
        let p = init_params(ModelShape::square(4), emb, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 6,
            learning_rate: 0.1,
            margin: 0.5,
            track_metrics: false,
            ..TrainConfig::default()
        };
        let a = train(p.clone(), &data, &triples, &cfg).unwrap();
        let b = train(p, &data, &triples, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params.tensors(), b.params.tensors());
        assert!(a.log.last().unwrap().mean_loss < a.log[0].mean_loss);
    }

    #[test]
    fn frozen_embeddings_stay_put() {
        let (data, triples, emb) = tiny();
        let p = init_params(ModelShape::square(4), emb, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            freeze_embeddings: true,
            track_metrics: false,
            ..TrainConfig::default()
        };
        let out = train(p.clone(), &data, &triples, &cfg).unwrap();
        assert_eq!(out.params.embeddings, p.embeddings);
        assert_ne!(out.params.lstm_q, p.lstm_q);
    }
}
