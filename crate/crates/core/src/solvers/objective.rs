//! Least-squares lifting objective shared by the direct and sequential
//! solvers.
//!
//! The lifted coordinates are `ψ = [F; G_θ; (1)]`, with `F` frozen features
//! (the state and any earlier-stage observables), `G_θ` the trainable block
//! and an optional trailing constant. The loss is
//!
//! ```text
//! L(θ, A) = (1/N) ‖ T − A ψ(X_P) ‖²_F,   T = [ψ(X_F)[rows]; Y_P]
//! ```
//!
//! where `rows` is a contiguous range of lifted coordinates to propagate and
//! `Y_P` is included only when the stage fits outputs. The parameter vector
//! is `[θ; vec(A)]` with `A` stored column-major.

use alloc::vec::Vec;
use core::ops::Range;
use nalgebra::DMatrix;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg;

/// Inputs of one data split, prepared for a stage.
#[derive(Debug, Clone)]
pub struct StageData {
    pub xp: DMatrix<f64>,
    pub xf: DMatrix<f64>,
    /// Frozen lifted rows on `xp` and `xf`.
    pub fixed_p: DMatrix<f64>,
    pub fixed_f: DMatrix<f64>,
    pub yp: Option<DMatrix<f64>>,
}

impl StageData {
    pub fn len(&self) -> usize {
        self.xp.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, cols: &[usize]) -> StageData {
        StageData {
            xp: self.xp.select_columns(cols),
            xf: self.xf.select_columns(cols),
            fixed_p: self.fixed_p.select_columns(cols),
            fixed_f: self.fixed_f.select_columns(cols),
            yp: self.yp.as_ref().map(|y| y.select_columns(cols)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageObjective {
    /// Trainable block; `None` when it has no outputs.
    pub net: Option<Dictionary>,
    pub n_fixed: usize,
    pub constant: bool,
    /// Lifted coordinates of `ψ(X_F)` used as targets.
    pub target_rows: Range<usize>,
    pub fit_outputs: bool,
    pub n_outputs: usize,
}

impl StageObjective {
    pub fn n_trainable(&self) -> usize {
        self.net.as_ref().map_or(0, |d| d.output_dim())
    }

    pub fn lifted_dim(&self) -> usize {
        self.n_fixed + self.n_trainable() + usize::from(self.constant)
    }

    pub fn n_targets(&self) -> usize {
        self.target_rows.len() + if self.fit_outputs { self.n_outputs } else { 0 }
    }

    pub fn net_param_count(&self) -> usize {
        self.net.as_ref().map_or(0, |d| d.param_count())
    }

    pub fn param_count(&self) -> usize {
        self.net_param_count() + self.n_targets() * self.lifted_dim()
    }

    /// Packs network parameters and the operator into one vector.
    pub fn pack(&self, a: &DMatrix<f64>) -> Vec<f64> {
        let mut p = self.net.as_ref().map_or_else(Vec::new, |d| d.params());
        p.extend_from_slice(a.as_slice());
        p
    }

    /// Splits a parameter vector into a network with those parameters and
    /// the operator.
    pub fn unpack(&self, params: &[f64]) -> Result<(Option<Dictionary>, DMatrix<f64>)> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "stage parameter vector",
                expected: self.param_count(),
                found: params.len(),
            });
        }
        let k = self.net_param_count();
        let net = match &self.net {
            Some(d) => {
                let mut d = d.clone();
                d.set_params(&params[..k])?;
                Some(d)
            }
            None => None,
        };
        let a = DMatrix::from_column_slice(self.n_targets(), self.lifted_dim(), &params[k..]);
        Ok((net, a))
    }

    fn assemble(&self, fixed: &DMatrix<f64>, g: Option<DMatrix<f64>>) -> DMatrix<f64> {
        let n = fixed.ncols();
        let mut psi = DMatrix::zeros(self.lifted_dim(), n);
        psi.rows_mut(0, self.n_fixed).copy_from(fixed);
        if let Some(g) = g {
            psi.rows_mut(self.n_fixed, g.nrows()).copy_from(&g);
        }
        if self.constant {
            psi.row_mut(self.lifted_dim() - 1).fill(1.0);
        }
        psi
    }

    /// Lifted snapshots `(ψ(X_P), ψ(X_F))` for the given network.
    pub fn lift(&self, net: Option<&Dictionary>, data: &StageData) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (gp, gf) = match net {
            Some(d) => (Some(d.eval_batch(&data.xp)?), Some(d.eval_batch(&data.xf)?)),
            None => (None, None),
        };
        Ok((self.assemble(&data.fixed_p, gp), self.assemble(&data.fixed_f, gf)))
    }

    pub fn targets(&self, psi_f: &DMatrix<f64>, data: &StageData) -> Result<DMatrix<f64>> {
        let n = psi_f.ncols();
        let mut t = DMatrix::zeros(self.n_targets(), n);
        let r = self.target_rows.len();
        t.rows_mut(0, r).copy_from(&psi_f.rows(self.target_rows.start, r));
        if self.fit_outputs {
            let y = data
                .yp
                .as_ref()
                .ok_or_else(|| Error::InsufficientData("stage needs outputs".into()))?;
            t.rows_mut(r, self.n_outputs).copy_from(y);
        }
        Ok(t)
    }

    /// Closed-form operator for the current network (minimum-norm least
    /// squares).
    pub fn solve_operator(&self, net: Option<&Dictionary>, data: &StageData, rcond: f64) -> Result<DMatrix<f64>> {
        let (psi_p, psi_f) = self.lift(net, data)?;
        let t = self.targets(&psi_f, data)?;
        linalg::right_divide(&t, &psi_p, rcond)
    }

    /// `T Ψᵀ (Ψ Ψᵀ + ridge·N·I)⁻¹`; plain least squares when `ridge = 0`.
    pub fn solve_operator_ridge(&self, net: Option<&Dictionary>, data: &StageData, ridge: f64) -> Result<DMatrix<f64>> {
        if ridge == 0.0 {
            return self.solve_operator(net, data, linalg::DEFAULT_RCOND);
        }
        let (psi_p, psi_f) = self.lift(net, data)?;
        let t = self.targets(&psi_f, data)?;
        let m = psi_p.nrows();
        let g = &psi_p * psi_p.transpose() + DMatrix::identity(m, m) * (ridge * psi_p.ncols() as f64);
        Ok(t * psi_p.transpose() * linalg::inverse(&g)?)
    }

    pub fn loss(&self, params: &[f64], data: &StageData) -> Result<f64> {
        let (net, a) = self.unpack(params)?;
        let (psi_p, psi_f) = self.lift(net.as_ref(), data)?;
        let r = self.targets(&psi_f, data)? - &a * &psi_p;
        Ok(r.norm_squared() / data.len() as f64)
    }

    /// Loss and gradient, optionally on a column subset.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        data: &StageData,
        cols: Option<&[usize]>,
    ) -> Result<(f64, Vec<f64>)> {
        let owned;
        let data = match cols {
            Some(c) => {
                owned = data.select(c);
                &owned
            }
            None => data,
        };
        let n = data.len();
        let scale = 2.0 / n as f64;
        let (net, a) = self.unpack(params)?;

        let (gp, gf, tape) = match &net {
            Some(d) => {
                let mut x = DMatrix::zeros(d.input_dim(), 2 * n);
                x.columns_mut(0, n).copy_from(&data.xp);
                x.columns_mut(n, n).copy_from(&data.xf);
                let (g, tape) = d.forward(&x)?;
                (
                    Some(g.columns(0, n).into_owned()),
                    Some(g.columns(n, n).into_owned()),
                    Some(tape),
                )
            }
            None => (None, None, None),
        };
        let psi_p = self.assemble(&data.fixed_p, gp);
        let psi_f = self.assemble(&data.fixed_f, gf);
        let r = self.targets(&psi_f, data)? - &a * &psi_p;
        let loss = r.norm_squared() / n as f64;

        let grad_a = &r * psi_p.transpose() * (-scale);
        let mut grad = Vec::with_capacity(self.param_count());
        if let (Some(d), Some(tape)) = (&net, tape) {
            let g = self.n_trainable();
            let g0 = self.n_fixed;
            let mut cot = DMatrix::zeros(g, 2 * n);
            // through ψ(X_P)
            let a_g = a.columns(g0, g);
            cot.columns_mut(0, n).gemm_tr(-scale, &a_g, &r, 0.0);
            // through the propagated targets ψ(X_F)[rows]
            let lo = self.target_rows.start.max(g0);
            let hi = self.target_rows.end.min(g0 + g);
            if lo < hi {
                let rr = r.rows(lo - self.target_rows.start, hi - lo);
                let mut c = cot.view_mut((lo - g0, n), (hi - lo, n));
                c += rr * scale;
            }
            grad.extend(d.backward(&tape, &cot));
        }
        grad.extend_from_slice(grad_a.as_slice());
        Ok((loss, grad))
    }
}
