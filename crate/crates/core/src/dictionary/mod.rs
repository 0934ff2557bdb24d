//! Observable dictionaries `ψ(x)`.
//!
//! A dictionary maps an `n`-vector to an `n_L`-vector. Leaves are the
//! identity, monomials and ELU networks; composites stack leaves,
//! precompose them with an affine map, or append the constant observable.
//! Batched evaluation works on column matrices (one state per column).
//!
//! The flat parameter vector of a dictionary is the concatenation of the
//! parameters of its network leaves in depth-first order.

pub mod mlp;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // inherent on f64 whenever std is linked
use num_traits::Float;

pub use mlp::{elu, Mlp, MlpTape};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Dictionary {
    Identity {
        n: usize,
    },
    /// Each row of `exponents` defines `∏ x_i^{e_i}`.
    Monomial {
        n: usize,
        exponents: Vec<Vec<u32>>,
    },
    Neural(Mlp),
    /// Vertical concatenation of dictionaries sharing the input dimension.
    Concat(Vec<Dictionary>),
    /// `inner(A x + shift)`.
    Precompose {
        inner: Box<Dictionary>,
        matrix: DMatrix<f64>,
        shift: DVector<f64>,
    },
    /// `[inner(x); 1]`.
    WithConstant(Box<Dictionary>),
}

/// Forward-pass record mirroring the dictionary tree.
#[derive(Debug, Clone)]
pub enum DictTape {
    Leaf,
    Neural(MlpTape),
    Concat(Vec<DictTape>),
    Wrapped(Box<DictTape>),
}

impl Dictionary {
    pub fn identity(n: usize) -> Self {
        Dictionary::Identity { n }
    }

    /// `[x; inner(x)]`.
    pub fn state_inclusive(n: usize, inner: Dictionary) -> Result<Self> {
        if inner.input_dim() != n {
            return Err(Error::DimensionMismatch {
                context: "state-inclusive wrapper input",
                expected: n,
                found: inner.input_dim(),
            });
        }
        Ok(Dictionary::Concat(vec![Dictionary::Identity { n }, inner]))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Dictionary::Identity { n } | Dictionary::Monomial { n, .. } => *n,
            Dictionary::Neural(m) => m.input_dim(),
            Dictionary::Concat(parts) => parts.first().map_or(0, |p| p.input_dim()),
            Dictionary::Precompose { matrix, .. } => matrix.ncols(),
            Dictionary::WithConstant(inner) => inner.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Dictionary::Identity { n } => *n,
            Dictionary::Monomial { exponents, .. } => exponents.len(),
            Dictionary::Neural(m) => m.output_dim(),
            Dictionary::Concat(parts) => parts.iter().map(|p| p.output_dim()).sum(),
            Dictionary::Precompose { inner, .. } => inner.output_dim(),
            Dictionary::WithConstant(inner) => inner.output_dim() + 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Dictionary::Identity { .. } => "identity",
            Dictionary::Monomial { .. } => "monomial",
            Dictionary::Neural(_) => "neural",
            _ => "composite",
        }
    }

    /// Whether the first `n` outputs are the state itself.
    pub fn is_state_inclusive(&self) -> bool {
        match self {
            Dictionary::Identity { .. } => true,
            Dictionary::Monomial { n, exponents } => {
                exponents.len() >= *n
                    && (0..*n).all(|r| {
                        exponents[r]
                            .iter()
                            .enumerate()
                            .all(|(i, &e)| e == u32::from(i == r))
                    })
            }
            Dictionary::Neural(_) | Dictionary::Precompose { .. } => false,
            Dictionary::Concat(parts) => parts
                .first()
                .is_some_and(|p| p.is_state_inclusive()),
            Dictionary::WithConstant(inner) => inner.is_state_inclusive(),
        }
    }

    /// Whether the last output is the constant observable 1.
    pub fn has_constant(&self) -> bool {
        match self {
            Dictionary::WithConstant(_) => true,
            Dictionary::Monomial { exponents, .. } => exponents
                .last()
                .is_some_and(|e| e.iter().all(|&v| v == 0)),
            Dictionary::Concat(parts) => parts.last().is_some_and(|p| p.has_constant()),
            Dictionary::Precompose { inner, .. } => inner.has_constant(),
            _ => false,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Dictionary::Neural(m) => m.param_count(),
            Dictionary::Concat(parts) => parts.iter().map(|p| p.param_count()).sum(),
            Dictionary::Precompose { inner, .. } | Dictionary::WithConstant(inner) => {
                inner.param_count()
            }
            _ => 0,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut Vec<f64>) {
        match self {
            Dictionary::Neural(m) => out.extend_from_slice(m.params()),
            Dictionary::Concat(parts) => parts.iter().for_each(|p| p.collect_params(out)),
            Dictionary::Precompose { inner, .. } | Dictionary::WithConstant(inner) => {
                inner.collect_params(out)
            }
            _ => {}
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "dictionary parameter vector",
                expected: self.param_count(),
                found: params.len(),
            });
        }
        self.assign_params(params);
        Ok(())
    }

    fn assign_params(&mut self, params: &[f64]) -> usize {
        match self {
            Dictionary::Neural(m) => {
                let k = m.param_count();
                m.params_mut().copy_from_slice(&params[..k]);
                k
            }
            Dictionary::Concat(parts) => {
                let mut used = 0;
                for p in parts {
                    used += p.assign_params(&params[used..]);
                }
                used
            }
            Dictionary::Precompose { inner, .. } | Dictionary::WithConstant(inner) => {
                inner.assign_params(params)
            }
            _ => 0,
        }
    }

    /// Evaluates on a single state.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.eval_batch(&m)?.as_slice().to_vec())
    }

    /// Evaluates on every column of `x` (n × N), returning n_L × N.
    pub fn eval_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Forward pass keeping what `backward` needs.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DictTape)> {
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "dictionary input",
                expected: self.input_dim(),
                found: x.nrows(),
            });
        }
        match self {
            Dictionary::Identity { .. } => Ok((x.clone(), DictTape::Leaf)),
            Dictionary::Monomial { exponents, .. } => {
                let mut out = DMatrix::zeros(exponents.len(), x.ncols());
                for (j, col) in x.column_iter().enumerate() {
                    for (r, e) in exponents.iter().enumerate() {
                        out[(r, j)] = e
                            .iter()
                            .zip(col.iter())
                            .map(|(&p, &v)| v.powi(p as i32))
                            .product();
                    }
                }
                Ok((out, DictTape::Leaf))
            }
            Dictionary::Neural(m) => {
                let tape = m.forward(x)?;
                Ok((tape.output().clone(), DictTape::Neural(tape)))
            }
            Dictionary::Concat(parts) => {
                let mut blocks = Vec::with_capacity(parts.len());
                let mut tapes = Vec::with_capacity(parts.len());
                for p in parts {
                    let (o, t) = p.forward(x)?;
                    blocks.push(o);
                    tapes.push(t);
                }
                let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
                let mut out = DMatrix::zeros(rows, x.ncols());
                let mut r0 = 0;
                for b in &blocks {
                    out.rows_mut(r0, b.nrows()).copy_from(b);
                    r0 += b.nrows();
                }
                Ok((out, DictTape::Concat(tapes)))
            }
            Dictionary::Precompose {
                inner,
                matrix,
                shift,
            } => {
                let mut z = matrix * x;
                for mut col in z.column_iter_mut() {
                    col += shift;
                }
                let (o, t) = inner.forward(&z)?;
                Ok((o, DictTape::Wrapped(Box::new(t))))
            }
            Dictionary::WithConstant(inner) => {
                let (o, t) = inner.forward(x)?;
                let out = o.insert_row(rows_before_const(inner), 1.0);
                Ok((out, DictTape::Wrapped(Box::new(t))))
            }
        }
    }

    /// Gradient of `⟨cotangent, ψ(X)⟩` with respect to the flat parameters,
    /// given the tape of the forward pass on `X`.
    pub fn backward(&self, tape: &DictTape, cotangent: &DMatrix<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.param_count()];
        self.backward_into(tape, cotangent, &mut grad);
        grad
    }

    fn backward_into(&self, tape: &DictTape, cot: &DMatrix<f64>, grad: &mut [f64]) {
        match (self, tape) {
            (Dictionary::Neural(m), DictTape::Neural(t)) => m.backward_into(t, cot, grad),
            (Dictionary::Concat(parts), DictTape::Concat(tapes)) => {
                let mut r0 = 0;
                let mut g0 = 0;
                for (p, t) in parts.iter().zip(tapes) {
                    let rows = p.output_dim();
                    let k = p.param_count();
                    if k > 0 {
                        let sub = cot.rows(r0, rows).into_owned();
                        p.backward_into(t, &sub, &mut grad[g0..g0 + k]);
                    }
                    r0 += rows;
                    g0 += k;
                }
            }
            (Dictionary::Precompose { inner, .. }, DictTape::Wrapped(t)) => {
                inner.backward_into(t, cot, grad)
            }
            (Dictionary::WithConstant(inner), DictTape::Wrapped(t)) => {
                let rows = inner.output_dim();
                if inner.param_count() > 0 {
                    let sub = cot.rows(0, rows).into_owned();
                    inner.backward_into(t, &sub, grad);
                }
            }
            _ => {}
        }
    }

    /// Exact reverse-mode gradient of the batch evaluation with respect to
    /// the parameters, contracted with `cotangent` (n_L × N).
    pub fn param_gradient(&self, x: &DMatrix<f64>, cotangent: &DMatrix<f64>) -> Result<Vec<f64>> {
        let (out, tape) = self.forward(x)?;
        if out.shape() != cotangent.shape() {
            return Err(Error::DimensionMismatch {
                context: "cotangent rows",
                expected: out.nrows(),
                found: cotangent.nrows(),
            });
        }
        Ok(self.backward(&tape, cotangent))
    }

    /// For a state-inclusive dictionary `[x; φ(x); (1)]`, returns `φ` (or
    /// `None` when there are no nonlinear observables) and whether the
    /// constant is present.
    pub fn split_state_inclusive(&self) -> Result<(Option<Dictionary>, bool)> {
        if !self.is_state_inclusive() {
            return Err(Error::NotStateInclusive);
        }
        let (body, constant) = match self {
            Dictionary::WithConstant(inner) => (inner.as_ref(), true),
            other => (other, false),
        };
        let n = body.input_dim();
        let rest = match body {
            Dictionary::Identity { .. } => None,
            Dictionary::Monomial { exponents, .. } => {
                let mut tail: Vec<Vec<u32>> = exponents[n..].to_vec();
                let constant_tail = tail.last().is_some_and(|e| e.iter().all(|&v| v == 0));
                if constant_tail && !constant {
                    tail.pop();
                    let phi = (!tail.is_empty()).then_some(Dictionary::Monomial { n, exponents: tail });
                    return Ok((phi, true));
                }
                (!tail.is_empty()).then_some(Dictionary::Monomial { n, exponents: tail })
            }
            Dictionary::Concat(parts) => {
                let (head, others) = parts.split_first().expect("non-empty concat");
                let (head_rest, head_const) = head.split_state_inclusive()?;
                if head_const {
                    return Err(Error::InvalidParameter(
                        "constant observable must be the last entry".into(),
                    ));
                }
                let mut pieces: Vec<Dictionary> = head_rest.into_iter().collect();
                pieces.extend(others.iter().cloned());
                let mut trailing_const = false;
                if let Some(Dictionary::WithConstant(last)) = pieces.last().cloned() {
                    pieces.pop();
                    pieces.push(*last);
                    trailing_const = true;
                }
                pieces.retain(|p| p.output_dim() > 0);
                let phi = match pieces.len() {
                    0 => None,
                    1 => pieces.pop(),
                    _ => Some(Dictionary::Concat(pieces)),
                };
                return Ok((phi, constant || trailing_const));
            }
            _ => return Err(Error::NotStateInclusive),
        };
        Ok((rest, constant))
    }
}

fn rows_before_const(inner: &Dictionary) -> usize {
    inner.output_dim()
}

/// Monomial dictionary; state-inclusive when the first `n` rows are the unit
/// exponents.
pub fn make_monomial(n: usize, exponents: Vec<Vec<u32>>) -> Result<Dictionary> {
    if let Some(bad) = exponents.iter().find(|e| e.len() != n) {
        return Err(Error::DimensionMismatch {
            context: "monomial exponent length",
            expected: n,
            found: bad.len(),
        });
    }
    Ok(Dictionary::Monomial { n, exponents })
}

/// Unit exponents for `x_1 … x_n` followed by `extra`.
pub fn state_monomials_plus(n: usize, extra: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let mut e: Vec<Vec<u32>> = (0..n)
        .map(|r| (0..n).map(|i| u32::from(i == r)).collect())
        .collect();
    e.extend(extra.iter().cloned());
    e
}

/// `φ: Rⁿ → R^{n_outputs}` with `hidden_layers` ELU layers of `width` nodes.
pub fn make_neural(
    n: usize,
    hidden_layers: usize,
    width: usize,
    n_outputs: usize,
    seed: u64,
) -> Result<Dictionary> {
    if n == 0 || hidden_layers == 0 || width == 0 || n_outputs == 0 {
        return Err(Error::InvalidParameter(
            "network sizes must all be at least 1".into(),
        ));
    }
    let mut widths = vec![n];
    widths.extend(core::iter::repeat_n(width, hidden_layers));
    widths.push(n_outputs);
    Ok(Dictionary::Neural(Mlp::seeded(widths, seed)?))
}

/// Appends the constant observable.
pub fn append_constant(dict: Dictionary) -> Result<Dictionary> {
    if dict.has_constant() {
        return Err(Error::ConstantAlreadyPresent);
    }
    Ok(Dictionary::WithConstant(Box::new(dict)))
}
