//! Fully connected ELU network evaluated on column batches, with exact
//! reverse-mode parameter gradients.
//!
//! Parameters are one flat vector. Layer `l` maps `widths[l]` to
//! `widths[l + 1]` and owns a weight block (stored column-major,
//! `out × in`) followed by its bias. Hidden layers apply ELU; the last layer
//! is affine.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
#[allow(unused_imports)] // inherent on f64 whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[inline]
pub fn elu(u: f64) -> f64 {
    if u >= 0.0 {
        u
    } else {
        u.exp_m1()
    }
}

/// ELU derivative written in terms of the activation value `a = elu(u)`.
#[inline]
fn elu_grad_from_output(a: f64) -> f64 {
    if a >= 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass: `acts[0]` is the input batch,
/// `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub acts: Vec<DMatrix<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("tape holds at least the input")
    }
}

pub fn param_count_for(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Zero-initialized network with the given layer widths (input first).
    pub fn zeros(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidParameter(
                "network needs at least input and output layers of positive width".into(),
            ));
        }
        let params = vec![0.0; param_count_for(&widths)];
        Ok(Self { widths, params })
    }

    pub fn from_params(widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        if params.len() != m.params.len() {
            return Err(Error::DimensionMismatch {
                context: "network parameter vector",
                expected: m.params.len(),
                found: params.len(),
            });
        }
        m.params = params;
        Ok(m)
    }

    /// Weights uniform in `±1/√fan_in`, zero biases.
    pub fn seeded(widths: Vec<usize>, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for l in 0..m.widths.len() - 1 {
            let (fan_in, fan_out) = (m.widths[l], m.widths[l + 1]);
            let s = 1.0 / (fan_in as f64).sqrt();
            for w in &mut m.params[offset..offset + fan_in * fan_out] {
                *w = rng.gen_range(-s..s);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(m)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.widths[k] * self.widths[k + 1] + self.widths[k + 1];
        }
        (off, off + self.widths[l] * self.widths[l + 1])
    }

    fn weight(&self, l: usize) -> DMatrixView<'_, f64> {
        let (w0, _) = self.layer_offsets(l);
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        DMatrixView::from_slice(&self.params[w0..w0 + fi * fo], fo, fi)
    }

    fn bias(&self, l: usize) -> &[f64] {
        let (_, b0) = self.layer_offsets(l);
        &self.params[b0..b0 + self.widths[l + 1]]
    }

    /// Forward pass over the columns of `x`, keeping every activation.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<MlpTape> {
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: x.nrows(),
            });
        }
        let layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.clone());
        for l in 0..layers {
            let w = self.weight(l);
            let b = self.bias(l);
            let mut z = DMatrix::zeros(w.nrows(), x.ncols());
            z.gemm(1.0, &w, &acts[l], 0.0);
            let hidden = l + 1 < layers;
            for mut col in z.column_iter_mut() {
                for (v, bi) in col.iter_mut().zip(b) {
                    *v += bi;
                    if hidden {
                        *v = elu(*v);
                    }
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            acts.push(z);
        }
        Ok(MlpTape { acts })
    }

    pub fn eval(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut tape = self.forward(x)?;
        Ok(tape.acts.pop().expect("non-empty tape"))
    }

    /// Adds the gradient of `⟨cotangent, output⟩` with respect to the
    /// parameters into `grad` (length `param_count`).
    pub fn backward_into(&self, tape: &MlpTape, cotangent: &DMatrix<f64>, grad: &mut [f64]) {
        let layers = self.widths.len() - 1;
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = cotangent.clone();
        for l in (0..layers).rev() {
            let (w0, b0) = self.layer_offsets(l);
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            {
                let mut gw = DMatrixViewMut::from_slice(&mut grad[w0..w0 + fi * fo], fo, fi);
                gw.gemm(1.0, &delta, &tape.acts[l].transpose(), 1.0);
            }
            for (i, g) in grad[b0..b0 + fo].iter_mut().enumerate() {
                *g += delta.row(i).sum();
            }
            if l > 0 {
                let mut prev = DMatrix::zeros(fi, delta.ncols());
                prev.gemm_tr(1.0, &self.weight(l), &delta, 0.0);
                let prev_act = &tape.acts[l];
                for (p, a) in prev.iter_mut().zip(prev_act.iter()) {
                    *p *= elu_grad_from_output(*a);
                }
                delta = prev;
            }
        }
    }

    pub fn backward(&self, tape: &MlpTape, cotangent: &DMatrix<f64>) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        self.backward_into(tape, cotangent, &mut g);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_arithmetic() {
        assert_eq!(param_count_for(&[2, 4, 3]), 27);
        let m = Mlp::seeded(vec![2, 4, 3], 0).unwrap();
        assert_eq!(m.param_count(), 27);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(vec![3, 5, 5, 2]).unwrap();
        let x = DMatrix::from_fn(3, 4, |i, j| (i + j) as f64 - 2.0);
        assert!(m.eval(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elu_is_continuous_and_c1_at_zero() {
        for e in [1e-3, 1e-6, 1e-9] {
            assert!((elu(e) - elu(-e)).abs() < 3.0 * e);
        }
        let h = 1e-6;
        let left = (elu(0.0) - elu(-h)) / h;
        let right = (elu(h) - elu(0.0)) / h;
        assert!((left - right).abs() < 1e-5);
    }

    #[test]
    fn seeded_init_is_deterministic_and_bounded() {
        let a = Mlp::seeded(vec![4, 6, 2], 42).unwrap();
        let b = Mlp::seeded(vec![4, 6, 2], 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Mlp::seeded(vec![4, 6, 2], 43).unwrap());
        assert!(a.params()[..24].iter().all(|w| w.abs() <= 0.5));
    }

    #[test]
    fn nonfinite_reports_layer() {
        let mut m = Mlp::zeros(vec![1, 1, 1]).unwrap();
        m.params_mut()[0] = 1e200;
        m.params_mut()[2] = 1e200;
        let x = DMatrix::from_element(1, 1, 1e200);
        assert_eq!(m.eval(&x).unwrap_err(), Error::NonFiniteActivation { layer: 0 });
    }
}
