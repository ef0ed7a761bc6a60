//! Exact gradients of the pairwise hinge through both forward traces.

use std::collections::BTreeMap;

use crate::linalg::{axpy, dot, norm, Matrix};
use crate::network::{Attention, ForwardTrace, LstmParams, ModelParams, StepCache};

/// Deliberate backward-pass faults, used as negative controls for the
/// gradient check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Uses `1 + tanh²` where `1 - tanh²` belongs.
    TanhDerivative,
}

/// One gradient tensor per model tensor. Embedding gradients are kept per
/// touched row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub lstm_q: LstmParams,
    pub lstm_a: LstmParams,
    pub translation: Matrix,
    pub head_w1: Matrix,
    pub head_b1: Vec<f64>,
    pub head_w2: Vec<f64>,
    pub head_b2: f64,
    pub embeddings: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let k = p.embeddings.dim();
        Gradients {
            lstm_q: LstmParams::zeros(k, p.lstm_q.hidden_dim()),
            lstm_a: LstmParams::zeros(k, p.lstm_a.hidden_dim()),
            translation: Matrix::zeros(p.translation.rows(), p.translation.cols()),
            head_w1: Matrix::zeros(p.head_w1.rows(), p.head_w1.cols()),
            head_b1: vec![0.0; p.head_b1.len()],
            head_w2: vec![0.0; p.head_w2.len()],
            head_b2: 0.0,
            embeddings: BTreeMap::new(),
        }
    }

    /// The dense tensors, in the same order as the first nine entries of
    /// [`ModelParams::tensors`].
    pub fn dense(&self) -> [&[f64]; 9] {
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
        ]
    }

    /// Embedding gradient expanded to a full `rows × dim` buffer.
    pub fn dense_embeddings(&self, rows: usize, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * dim];
        for (&r, g) in &self.embeddings {
            out[r * dim..(r + 1) * dim].copy_from_slice(g);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.dense().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.embeddings.values().flatten().all(|v| v.is_finite())
    }
}

pub(crate) struct Backprop<'a> {
    pub params: &'a ModelParams,
    pub grads: &'a mut Gradients,
    pub fault: Fault,
    pub train_embeddings: bool,
}

fn tanh_grad(fault: Fault, t: f64) -> f64 {
    match fault {
        Fault::None => 1.0 - t * t,
        Fault::TanhDerivative => 1.0 + t * t,
    }
}

/// Backward through `steps`. `dh_out` holds the gradient on each step's
/// output, `dz_last` the gradient on the final cell. Returns the gradient
/// on the initial cell.
fn lstm_backward(
    params: &LstmParams,
    grads: &mut LstmParams,
    steps: &[StepCache],
    dh_out: &Matrix,
    dz_last: Vec<f64>,
    fault: Fault,
    mut on_input: impl FnMut(usize, &[f64]),
) -> Vec<f64> {
    let hd = params.hidden_dim();
    let kd = params.input_dim();
    let mut dh_next = vec![0.0; hd];
    let mut dz = dz_last;
    let mut da = vec![0.0; 4 * hd];
    for (t, s) in steps.iter().enumerate().rev() {
        let mut dz_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, o, g) = (s.gates[k], s.gates[hd + k], s.gates[2 * hd + k], s.gates[3 * hd + k]);
            let dh = dh_out.get(t, k) + dh_next[k];
            let dzk = dz[k] + dh * o * tanh_grad(fault, s.tanh_z[k]);
            da[k] = dzk * g * i * (1.0 - i);
            da[hd + k] = dzk * s.z_prev[k] * f * (1.0 - f);
            da[2 * hd + k] = dh * s.tanh_z[k] * o * (1.0 - o);
            da[3 * hd + k] = dzk * i * tanh_grad(fault, g);
            dz_prev[k] = dzk * f;
        }
        grads.weights.add_outer(1.0, &da, &s.input);
        axpy(1.0, &da, &mut grads.bias);
        let dinput = params.weights.tmatvec(&da);
        on_input(t, &dinput[..kd]);
        dh_next.copy_from_slice(&dinput[kd..]);
        dz = dz_prev;
    }
    dz
}

/// Backward through softmax-weighted pooling of the rows of `seq` scored
/// against `key`. Accumulates into `dseq` and `dkey`.
fn word_pool_backward(key: &[f64], seq: &Matrix, beta: &[f64], dpooled: &[f64], dseq: &mut Matrix, dkey: &mut [f64]) {
    let dbeta: Vec<f64> = (0..seq.rows()).map(|i| dot(seq.row(i), dpooled)).collect();
    let expect: f64 = beta.iter().zip(&dbeta).map(|(b, d)| b * d).sum();
    for i in 0..seq.rows() {
        let dscore = beta[i] * (dbeta[i] - expect);
        let row = dseq.row_mut(i);
        axpy(beta[i], dpooled, row);
        axpy(dscore, key, row);
        axpy(dscore, seq.row(i), dkey);
    }
}

fn mean_pool_backward(dpooled: &[f64], dseq: &mut Matrix) {
    let inv = 1.0 / dseq.rows() as f64;
    for r in 0..dseq.rows() {
        axpy(inv, dpooled, dseq.row_mut(r));
    }
}

fn apply_mask(d: &mut Matrix, mask: &[Vec<f64>]) {
    for (r, m) in mask.iter().enumerate() {
        for (v, k) in d.row_mut(r).iter_mut().zip(m) {
            *v *= k;
        }
    }
}

impl Backprop<'_> {
    fn embed(&mut self, token: usize, scale: f64, d: &[f64]) {
        if !self.train_embeddings {
            return;
        }
        let row = self
            .grads
            .embeddings
            .entry(token)
            .or_insert_with(|| vec![0.0; d.len()]);
        axpy(scale, d, row);
    }

    /// Accumulates `d_rank · ∂Ṽ/∂θ` for one traced pass.
    pub fn trace(&mut self, tr: &ForwardTrace, d_rank: f64) {
        let p = self.params;
        let fault = self.fault;
        let q = &*tr.question;
        let at = &tr.attended;
        let k = p.embeddings.dim();

        // Ranking score and matching head. The decay factor is data, so it
        // only scales the upstream gradient.
        let d_match = d_rank * if tr.variant.use_time_decay { tr.decay } else { 1.0 };
        let v = tr.match_score;
        let dlogit = d_match * v * (1.0 - v);
        self.grads.head_b2 += dlogit;
        axpy(dlogit, &tr.u, &mut self.grads.head_w2);
        let dpre: Vec<f64> = tr
            .u
            .iter()
            .zip(&p.head_w2)
            .map(|(&u, &w)| dlogit * w * tanh_grad(fault, u))
            .collect();
        let joint: Vec<f64> = at.q_f.iter().chain(&at.a_f).copied().collect();
        self.grads.head_w1.add_outer(1.0, &dpre, &joint);
        axpy(1.0, &dpre, &mut self.grads.head_b1);
        let djoint = p.head_w1.tmatvec(&dpre);
        let mut dq_f = djoint[..k].to_vec();
        let da_f = &djoint[k..];

        // a_f = Σ α_j s_j with α_j = cos(q_f, s_j), optionally softmaxed.
        let mut ds: Vec<Vec<f64>> = at.alpha.iter().map(|&a| da_f.iter().map(|d| a * d).collect()).collect();
        let dalpha: Vec<f64> = at.sentences.iter().map(|s| dot(s, da_f)).collect();
        let dcos: Vec<f64> = if tr.variant.normalize_sentence_weights {
            let expect: f64 = at.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            at.alpha.iter().zip(&dalpha).map(|(a, d)| a * (d - expect)).collect()
        } else {
            dalpha
        };
        let nq = norm(&at.q_f);
        for (j, s) in at.sentences.iter().enumerate() {
            let ns = norm(s);
            if nq == 0.0 || ns == 0.0 || dcos[j] == 0.0 {
                continue;
            }
            let c = at.cosines[j];
            let inv = 1.0 / (nq * ns);
            for d in 0..k {
                dq_f[d] += dcos[j] * (s[d] * inv - c * at.q_f[d] / (nq * nq));
                ds[j][d] += dcos[j] * (at.q_f[d] * inv - c * s[d] / (ns * ns));
            }
        }

        // Pooling back onto encoder outputs.
        let mut dq_r = Matrix::zeros(q.q_r.rows(), k);
        let mut da_r: Vec<Matrix> = tr.a_r.iter().map(|m| Matrix::zeros(m.rows(), k)).collect();
        match tr.variant.attention {
            Attention::SentenceLevel => {
                mean_pool_backward(&dq_f, &mut dq_r);
                for (dj, dm) in ds.iter().zip(da_r.iter_mut()) {
                    mean_pool_backward(dj, dm);
                }
            }
            Attention::WordLevel => {
                let c_f = q.c_f.as_ref().expect("word-level trace has a topic vector");
                let key = p.translation.tmatvec(c_f);
                let mut dkey = vec![0.0; k];
                let beta_q = at.beta_q.as_ref().expect("word-level trace has question weights");
                word_pool_backward(&key, &q.q_r, beta_q, &dq_f, &mut dq_r, &mut dkey);
                let beta_a = at.beta_a.as_ref().expect("word-level trace has answer weights");
                for j in 0..tr.a_r.len() {
                    word_pool_backward(&key, &tr.a_r[j], &beta_a[j], &ds[j], &mut da_r[j], &mut dkey);
                }
                // key = Wᵀ c_f
                self.grads.translation.add_outer(1.0, c_f, &dkey);
                let dc = p.translation.matvec(&dkey);
                let n_phrases = q.topics.len() as f64;
                for phrase in &q.topics {
                    let scale = 1.0 / (n_phrases * phrase.len() as f64);
                    for &t in phrase {
                        self.embed(t, scale, &dc);
                    }
                }
            }
        }

        if let Some(mask) = &q.mask {
            apply_mask(&mut dq_r, mask);
        }
        if let Some(masks) = &tr.answer_mask {
            for (dm, m) in da_r.iter_mut().zip(masks) {
                apply_mask(dm, m);
            }
        }

        // Answer LSTM, one sentence at a time; each sentence's initial cell
        // is the question's final cell.
        let mut dcell = vec![0.0; k];
        let mut emb: Vec<(usize, Vec<f64>)> = Vec::new();
        for ((steps, dm), tokens) in tr.answer_steps.iter().zip(&da_r).zip(&tr.sentences) {
            let dz0 = lstm_backward(&p.lstm_a, &mut self.grads.lstm_a, steps, dm, vec![0.0; k], fault, |t, dx| {
                emb.push((tokens[t], dx.to_vec()))
            });
            axpy(1.0, &dz0, &mut dcell);
        }
        lstm_backward(&p.lstm_q, &mut self.grads.lstm_q, &q.steps, &dq_r, dcell, fault, |t, dx| {
            emb.push((q.tokens[t], dx.to_vec()))
        });
        for (t, dx) in emb {
            self.embed(t, 1.0, &dx);
        }
    }
}
