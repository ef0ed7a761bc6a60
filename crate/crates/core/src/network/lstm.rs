//! LSTM cell without peephole connections.
//!
//! Gate pre-activations are one stacked affine map of `[x; h_prev]`, with
//! row blocks in the order input, forget, output, candidate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Matrix};

pub const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    input_dim: usize,
    hidden_dim: usize,
    /// `4H × (K + H)`
    pub weights: Matrix,
    /// `4H`
    pub bias: Vec<f64>,
}

/// Everything one step needs for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    /// `[x; h_prev]`
    pub input: Vec<f64>,
    pub z_prev: Vec<f64>,
    /// Activated gates `[i; f; o; g]`.
    pub gates: Vec<f64>,
    pub z: Vec<f64>,
    pub tanh_z: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            weights: Matrix::zeros(GATES * hidden_dim, input_dim + hidden_dim),
            bias: vec![0.0; GATES * hidden_dim],
        }
    }

    pub fn from_parts(input_dim: usize, hidden_dim: usize, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != GATES * hidden_dim
            || weights.cols() != input_dim + hidden_dim
            || bias.len() != GATES * hidden_dim
        {
            return Err(Error::Shape(format!(
                "lstm weights {}x{} / bias {} for K={input_dim}, H={hidden_dim}",
                weights.rows(),
                weights.cols(),
                bias.len()
            )));
        }
        Ok(LstmParams {
            input_dim,
            hidden_dim,
            weights,
            bias,
        })
    }

    /// Each gate block is drawn uniform in `±sqrt(6 / (fan_in + fan_out))`
    /// with fan_in = K + H and fan_out = H; biases are zero.
    pub fn glorot<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let bound = (6.0 / (input_dim + 2 * hidden_dim) as f64).sqrt();
        for v in p.weights.as_mut_slice() {
            *v = rng.gen_range(-bound..=bound);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub(crate) fn step_cached(&self, h_prev: &[f64], z_prev: &[f64], x: &[f64]) -> Result<StepCache> {
        let hd = self.hidden_dim;
        if x.len() != self.input_dim || h_prev.len() != hd || z_prev.len() != hd {
            return Err(Error::Shape(format!(
                "lstm step: x {} h {} z {} for K={}, H={hd}",
                x.len(),
                h_prev.len(),
                z_prev.len(),
                self.input_dim
            )));
        }
        let mut input = Vec::with_capacity(self.input_dim + hd);
        input.extend_from_slice(x);
        input.extend_from_slice(h_prev);
        let mut gates = self.bias.clone();
        self.weights.matvec_acc(&input, &mut gates);
        for v in &mut gates[..3 * hd] {
            *v = sigmoid(*v);
        }
        for v in &mut gates[3 * hd..] {
            *v = v.tanh();
        }
        let mut z = vec![0.0; hd];
        let mut tanh_z = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, o, g) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            z[k] = f * z_prev[k] + i * g;
            tanh_z[k] = z[k].tanh();
            h[k] = o * tanh_z[k];
        }
        Ok(StepCache {
            input,
            z_prev: z_prev.to_vec(),
            gates,
            z,
            tanh_z,
            h,
        })
    }

    /// Runs the cell over `xs` from the given initial state.
    pub(crate) fn run<'a>(
        &self,
        xs: impl Iterator<Item = &'a [f64]>,
        h0: &[f64],
        z0: &[f64],
    ) -> Result<Vec<StepCache>> {
        let mut steps: Vec<StepCache> = Vec::new();
        for x in xs {
            let step = match steps.last() {
                Some(prev) => self.step_cached(&prev.h, &prev.z, x)?,
                None => self.step_cached(h0, z0, x)?,
            };
            steps.push(step);
        }
        Ok(steps)
    }
}

/// One LSTM update: returns the new hidden state and cell.
pub fn lstm_step(p: &LstmParams, h_prev: &[f64], z_prev: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = p.step_cached(h_prev, z_prev, x)?;
    Ok((s.h, s.z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let p = LstmParams::zeros(3, 2);
        let (h, z) = lstm_step(&p, &[0.0; 2], &[0.0; 2], &[0.4, -1.0, 2.0]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(z, vec![0.0; 2]);
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let p = LstmParams::zeros(2, 3);
        let v = [0.8, -2.0, 0.1];
        let (h, z) = lstm_step(&p, &[0.3, 0.3, 0.3], &v, &[1.0, 1.0]).unwrap();
        for k in 0..3 {
            assert!((z[k] - 0.5 * v[k]).abs() < 1e-15);
            assert!((h[k] - 0.5 * (0.5 * v[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_cell_matches_hand_oracle() {
        // K = H = 1; weights rows: i, f, o, g over [x, h].
        let w = Matrix::from_rows(&[vec![0.5, -0.3], vec![0.2, 0.7], vec![-0.4, 0.1], vec![0.9, 0.6]]);
        let b = vec![0.1, -0.2, 0.05, 0.0];
        let p = LstmParams::from_parts(1, 1, w, b).unwrap();
        let (mut h, mut z) = (0.25, -0.5);
        let (mut hv, mut zv) = (vec![h], vec![z]);
        for x in [1.0, -0.5, 2.0] {
            let i = sig(0.5 * x - 0.3 * h + 0.1);
            let f = sig(0.2 * x + 0.7 * h - 0.2);
            let o = sig(-0.4 * x + 0.1 * h + 0.05);
            let g = (0.9 * x + 0.6 * h).tanh();
            z = f * z + i * g;
            h = o * z.tanh();
            let out = lstm_step(&p, &hv, &zv, &[x]).unwrap();
            hv = out.0;
            zv = out.1;
            assert!((hv[0] - h).abs() < 1e-15 && (zv[0] - z).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let p = LstmParams::zeros(2, 2);
        assert!(lstm_step(&p, &[0.0; 2], &[0.0; 2], &[0.0; 3]).is_err());
        assert!(lstm_step(&p, &[0.0; 1], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(LstmParams::from_parts(2, 2, Matrix::zeros(8, 3), vec![0.0; 8]).is_err());
    }
}
