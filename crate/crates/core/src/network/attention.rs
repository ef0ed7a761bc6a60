//! Sentence-level (mean pooling + cosine) and topic-driven word-level
//! (bilinear softmax) attention.

use crate::error::{Error, Result};
use crate::linalg::{axpy, cosine, dot, mean_rows, softmax, Matrix};

/// Pooled representations and the attention scores that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub q_f: Vec<f64>,
    pub a_f: Vec<f64>,
    /// One vector per answer sentence.
    pub sentences: Vec<Vec<f64>>,
    /// Raw cosine of each sentence against `q_f`.
    pub cosines: Vec<f64>,
    /// Sentence weights actually applied (the cosines, or their softmax).
    pub alpha: Vec<f64>,
    /// Word weights over the question, word-level attention only.
    pub beta_q: Option<Vec<f64>>,
    /// Word weights per answer sentence, word-level attention only.
    pub beta_a: Option<Vec<Vec<f64>>>,
}

fn rows(m: &Matrix) -> impl ExactSizeIterator<Item = &[f64]> {
    (0..m.rows()).map(move |r| m.row(r))
}

/// `a_f = Σ α_j s_j` with `α_j = cos(q_f, s_j)`; with `normalize` the
/// cosines pass through a softmax first.
pub fn combine_sentences(q_f: &[f64], sentences: &[Vec<f64>], normalize: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cosines: Vec<f64> = sentences.iter().map(|s| cosine(q_f, s)).collect();
    let alpha = if normalize { softmax(&cosines) } else { cosines.clone() };
    let mut a_f = vec![0.0; q_f.len()];
    for (s, &w) in sentences.iter().zip(&alpha) {
        axpy(w, s, &mut a_f);
    }
    (cosines, alpha, a_f)
}

/// Mean-pooled question and sentences, cosine-weighted answer.
pub fn sentence_attention(q_r: &Matrix, a_r: &[Matrix], normalize: bool) -> Attended {
    let dim = q_r.cols();
    let q_f = mean_rows(rows(q_r), dim);
    let sentences: Vec<Vec<f64>> = a_r.iter().map(|s| mean_rows(rows(s), dim)).collect();
    let (cosines, alpha, a_f) = combine_sentences(&q_f, &sentences, normalize);
    Attended {
        q_f,
        a_f,
        sentences,
        cosines,
        alpha,
        beta_q: None,
        beta_a: None,
    }
}

/// Sentence-level attention with raw cosine weights.
pub fn sent_attention(q_r: &Matrix, a_r: &[Matrix]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let at = sentence_attention(q_r, a_r, false);
    (at.q_f, at.a_f, at.alpha)
}

/// Mean over phrases of each phrase's mean word vector.
pub fn topic_embed(phrases: &[Matrix]) -> Result<Vec<f64>> {
    let Some(first) = phrases.first() else {
        return Err(Error::InvalidArgument("question has no topics".into()));
    };
    let dim = first.cols();
    let mut out = vec![0.0; dim];
    for p in phrases {
        if p.rows() == 0 || p.cols() != dim {
            return Err(Error::Shape("empty or mis-sized topic phrase".into()));
        }
        axpy(1.0, &mean_rows(rows(p), dim), &mut out);
    }
    let inv = 1.0 / phrases.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Softmax weights of `c_fᵀ W h_i` over the rows of `seq` and the
/// weighted sum of those rows. `key` is `Wᵀ c_f`.
pub(crate) fn attend_words(key: &[f64], seq: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = rows(seq).map(|h| dot(key, h)).collect();
    let beta = softmax(&scores);
    let mut pooled = vec![0.0; seq.cols()];
    for (h, &b) in rows(seq).zip(&beta) {
        axpy(b, h, &mut pooled);
    }
    (beta, pooled)
}

/// Topic-conditioned word attention over the question and every answer
/// sentence, followed by cosine sentence weighting.
pub fn word_attention(
    translation: &Matrix,
    q_r: &Matrix,
    a_r: &[Matrix],
    c_f: &[f64],
    normalize: bool,
) -> Result<Attended> {
    let dim = q_r.cols();
    if translation.rows() != c_f.len() || translation.cols() != dim {
        return Err(Error::Shape(format!(
            "translation {}x{} vs topic {} / hidden {dim}",
            translation.rows(),
            translation.cols(),
            c_f.len()
        )));
    }
    let key = translation.tmatvec(c_f);
    let (beta_q, q_f) = attend_words(&key, q_r);
    let (beta_a, sentences): (Vec<_>, Vec<_>) = a_r.iter().map(|s| attend_words(&key, s)).unzip();
    let (cosines, alpha, a_f) = combine_sentences(&q_f, &sentences, normalize);
    Ok(Attended {
        q_f,
        a_f,
        sentences,
        cosines,
        alpha,
        beta_q: Some(beta_q),
        beta_a: Some(beta_a),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn question_summary_is_row_mean() {
        let (q_f, _, _) = sent_attention(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), &[m(&[&[1.0, 1.0]])]);
        assert_eq!(q_f, vec![0.5, 0.5]);
    }

    #[test]
    fn self_similar_sentence_gets_weight_one() {
        let q = m(&[&[0.2, 0.4]]);
        let (q_f, a_f, alpha) = sent_attention(&q, &[q.clone()]);
        assert!((alpha[0] - 1.0).abs() < 1e-15);
        assert!(a_f.iter().zip(&q_f).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn orthogonal_sentence_gets_zero() {
        let q = m(&[&[1.0, 0.0]]);
        let (_, a_f, alpha) = sent_attention(&q, &[m(&[&[0.0, 3.0]]), m(&[&[1.0, 0.0]])]);
        assert_eq!(alpha, vec![0.0, 1.0]);
        assert_eq!(a_f, vec![1.0, 0.0]);
    }

    #[test]
    fn negative_weights_are_kept() {
        let q = m(&[&[1.0, 0.0]]);
        let (_, a_f, alpha) = sent_attention(&q, &[m(&[&[-2.0, 0.0]])]);
        assert_eq!(alpha, vec![-1.0]);
        assert_eq!(a_f, vec![2.0, 0.0]);
    }

    #[test]
    fn zero_sentence_gets_zero_weight() {
        let q = m(&[&[1.0, 0.0]]);
        let (_, _, alpha) = sent_attention(&q, &[m(&[&[0.0, 0.0]])]);
        assert_eq!(alpha, vec![0.0]);
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let q = m(&[&[1.0, 0.0]]);
        let at = sentence_attention(&q, &[m(&[&[1.0, 1.0]]), m(&[&[-1.0, 0.2]])], true);
        assert!((at.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(at.alpha[0] > at.alpha[1]);
    }

    #[test]
    fn topic_embedding_nested_mean() {
        let a = [1.0, 2.0];
        let b = [3.0, -4.0];
        assert_eq!(topic_embed(&[m(&[&a])]).unwrap(), a.to_vec());
        assert_eq!(topic_embed(&[m(&[&a]), m(&[&b])]).unwrap(), vec![2.0, -1.0]);
        // phrases [a, b] and [c]: ((a+b)/2 + c)/2, not (a+b+c)/3
        let c = [0.0, 6.0];
        let got = topic_embed(&[m(&[&a, &b]), m(&[&c])]).unwrap();
        assert_eq!(got, vec![(2.0 + 0.0) / 2.0, (-1.0 + 6.0) / 2.0]);
        assert_ne!(got, vec![4.0 / 3.0, 4.0 / 3.0]);
        assert!(topic_embed(&[]).is_err());
    }

    #[test]
    fn zero_translation_gives_uniform_words() {
        let w = Matrix::zeros(2, 2);
        let q = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let at = word_attention(&w, &q, &[m(&[&[2.0, 2.0]])], &[0.3, 0.1], false).unwrap();
        for b in at.beta_q.as_ref().unwrap() {
            assert!((b - 1.0 / 3.0).abs() < 1e-15);
        }
        let mean = sent_attention(&q, &[]).0;
        assert!(at.q_f.iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn single_word_gets_full_weight() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let q = m(&[&[0.5, -0.5]]);
        let at = word_attention(&w, &q, &[q.clone()], &[1.0, 1.0], false).unwrap();
        assert_eq!(at.beta_q.unwrap(), vec![1.0]);
        assert_eq!(at.q_f, vec![0.5, -0.5]);
    }

    #[test]
    fn bilinear_scores_ln2_and_zero() {
        // c = e1, W = I  →  scores are the first coordinates of the rows.
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let q = m(&[&[2f64.ln(), 0.0], &[0.0, 5.0]]);
        let at = word_attention(&w, &q, &[q.clone()], &[1.0, 0.0], false).unwrap();
        let b = at.beta_q.unwrap();
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-15 && (b[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn translation_shape_checked() {
        let q = m(&[&[1.0, 0.0]]);
        assert!(word_attention(&Matrix::zeros(3, 2), &q, &[], &[1.0, 0.0], false).is_err());
    }
}
