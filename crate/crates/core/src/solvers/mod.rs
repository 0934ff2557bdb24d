//! Closed-form DMD/E-DMD, gradient-trained output-constrained Koopman
//! models (direct and sequential), and the nonlinear state-space baseline.

pub mod adagrad;
pub mod objective;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

pub use adagrad::{LogRow, StageReport, TrainConfig};
use objective::{StageData, StageObjective};

use crate::datasets::{AffineTransform, SnapshotSet};
use crate::dictionary::{make_neural, Dictionary, Mlp};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Dense,
    SequentialBlocks,
}

impl Structure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Structure::Dense => "dense",
            Structure::SequentialBlocks => "sequential-blocks",
        }
    }
}

/// Block sizes of a sequential model, excluding the constant observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub n: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub n_xy: usize,
}

impl BlockDims {
    pub fn lifted(&self) -> usize {
        self.n + self.n_x + self.n_y + self.n_xy
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub stages: Vec<StageReport>,
}

impl FitReport {
    pub fn epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs_run).sum()
    }
}

/// Output-constrained Koopman model `ψ(x⁺) ≈ K ψ(x)`, `y ≈ W_h ψ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub k: DMatrix<f64>,
    pub w_h: DMatrix<f64>,
    pub dictionary: Dictionary,
    /// Coordinates the model operates in: `x̃ = P x + b`, `ỹ = Q y + c`.
    pub transform: Option<AffineTransform>,
    pub structure: Structure,
    pub block_dims: Option<BlockDims>,
    /// Delay-embedding depth of the state the dictionary consumes.
    pub delay: usize,
    pub fit_report: Option<FitReport>,
}

impl KoopmanModel {
    pub fn new(k: DMatrix<f64>, w_h: DMatrix<f64>, dictionary: Dictionary) -> Result<Self> {
        let m = Self {
            k,
            w_h,
            dictionary,
            transform: None,
            structure: Structure::Dense,
            block_dims: None,
            delay: 1,
            fit_report: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn sequential(
        k: DMatrix<f64>,
        w_h: DMatrix<f64>,
        dictionary: Dictionary,
        dims: BlockDims,
    ) -> Result<Self> {
        let m = Self {
            structure: Structure::SequentialBlocks,
            block_dims: Some(dims),
            ..Self::new(k, w_h, dictionary)?
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_transform(mut self, t: AffineTransform) -> Result<Self> {
        if t.state_dim() != self.state_dim() || t.output_dim() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "model transform state dimension",
                expected: self.state_dim(),
                found: t.state_dim(),
            });
        }
        self.transform = Some(t);
        Ok(self)
    }

    pub fn lifted_dim(&self) -> usize {
        self.k.nrows()
    }

    /// Lifted dimension without the constant observable.
    pub fn lifted_dim_without_constant(&self) -> usize {
        self.lifted_dim() - usize::from(self.has_constant())
    }

    pub fn state_dim(&self) -> usize {
        self.dictionary.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn has_constant(&self) -> bool {
        self.dictionary.has_constant()
    }

    pub fn param_count(&self) -> usize {
        self.dictionary.param_count() + self.k.len() + self.w_h.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nl = self.dictionary.output_dim();
        if self.k.nrows() != nl || self.k.ncols() != nl {
            return Err(Error::DimensionMismatch {
                context: "K side vs dictionary output",
                expected: nl,
                found: self.k.nrows(),
            });
        }
        if self.w_h.ncols() != nl {
            return Err(Error::DimensionMismatch {
                context: "W_h columns vs dictionary output",
                expected: nl,
                found: self.w_h.ncols(),
            });
        }
        if self.k.iter().chain(self.w_h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model contains non-finite entries".into()));
        }
        if self.structure == Structure::SequentialBlocks {
            self.verify_blocks()?;
        }
        Ok(())
    }

    /// Exact zero-pattern check of the sequential block form. The column of
    /// the constant observable, when present, is unconstrained.
    pub fn verify_blocks(&self) -> Result<()> {
        let d = self.block_dims.ok_or_else(|| {
            Error::StructureViolation("model has no sequential block dimensions".into())
        })?;
        let c = usize::from(self.has_constant());
        if d.lifted() + c != self.lifted_dim() {
            return Err(Error::StructureViolation(format!(
                "block dimensions sum to {} but the lifted dimension is {}",
                d.lifted() + c,
                self.lifted_dim()
            )));
        }
        let s = d.n + d.n_x;
        let end = d.lifted();
        for i in 0..s {
            for j in s..end {
                if self.k[(i, j)] != 0.0 {
                    return Err(Error::StructureViolation(format!(
                        "K[{i},{j}] = {} must be zero",
                        self.k[(i, j)]
                    )));
                }
            }
        }
        for i in 0..self.output_dim() {
            for j in s + d.n_y..end {
                if self.w_h[(i, j)] != 0.0 {
                    return Err(Error::StructureViolation(format!(
                        "W_h[{i},{j}] = {} must be zero",
                        self.w_h[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Lifts the columns of `x` (in model coordinates).
    pub fn lift(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.dictionary.eval_batch(x)
    }

    /// `‖[ψ(X_F); Y_P] − [K; W_h] ψ(X_P)‖²_F / N` on snapshots in model
    /// coordinates.
    pub fn direct_loss(&self, s: &SnapshotSet) -> Result<f64> {
        let (state, output) = self.residuals(s)?;
        Ok((state.norm_squared() + output.norm_squared()) / s.len() as f64)
    }

    fn residuals(&self, s: &SnapshotSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let pp = self.lift(&s.xp)?;
        let pf = self.lift(&s.xf)?;
        Ok((pf - &self.k * &pp, &s.yp - &self.w_h * &pp))
    }
}

/// `K = X_F pinv(X_P)`.
pub fn dmd(xp: &DMatrix<f64>, xf: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    if xp.ncols() != xf.ncols() {
        return Err(Error::DimensionMismatch {
            context: "X_F columns vs X_P columns",
            expected: xp.ncols(),
            found: xf.ncols(),
        });
    }
    linalg::right_divide(xf, xp, rcond)
}

/// `K = ψ(X_F) pinv(ψ(X_P))`.
pub fn edmd(s: &SnapshotSet, dict: &Dictionary, rcond: f64) -> Result<DMatrix<f64>> {
    check_input(dict, s)?;
    dmd(&dict.eval_batch(&s.xp)?, &dict.eval_batch(&s.xf)?, rcond)
}

/// E-DMD operator together with the least-squares output map
/// `W_h = Y_P pinv(ψ(X_P))`.
pub fn fit_edmd(s: &SnapshotSet, dict: &Dictionary, rcond: f64) -> Result<KoopmanModel> {
    check_input(dict, s)?;
    let pp = dict.eval_batch(&s.xp)?;
    let pf = dict.eval_batch(&s.xf)?;
    let pinv = linalg::pinv(&pp, rcond)?;
    KoopmanModel::new(pf * &pinv, &s.yp * &pinv, dict.clone())
}

fn check_input(dict: &Dictionary, s: &SnapshotSet) -> Result<()> {
    if dict.input_dim() != s.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "dictionary input vs state dimension",
            expected: s.state_dim(),
            found: dict.input_dim(),
        });
    }
    if s.is_empty() {
        return Err(Error::InsufficientData("no snapshot pairs".into()));
    }
    Ok(())
}

/// Network sizes of the direct solver: `n_x` observables from `n_xl` hidden
/// layers of `n_xn` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectHyper {
    pub n_x: usize,
    pub n_xl: usize,
    pub n_xn: usize,
}

/// Network sizes of the three sequential stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequentialHyper {
    pub n_x: usize,
    pub n_xl: usize,
    pub n_xn: usize,
    pub n_y: usize,
    pub n_yl: usize,
    pub n_yn: usize,
    pub n_xy: usize,
    pub n_xyl: usize,
    pub n_xyn: usize,
}

/// Hidden layers and nodes of the state-space baseline network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineHyper {
    pub n_xl: usize,
    pub n_xn: usize,
}

fn stage_seed(seed: u64, stage: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn optional_net(n: usize, outputs: usize, layers: usize, nodes: usize, seed: u64) -> Result<Option<Dictionary>> {
    if outputs == 0 {
        Ok(None)
    } else {
        make_neural(n, layers, nodes, outputs, seed).map(Some)
    }
}

fn stage_data(
    s: &SnapshotSet,
    fixed: &[&Dictionary],
    with_outputs: bool,
) -> Result<StageData> {
    let lift = |x: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let blocks = fixed
            .iter()
            .map(|d| d.eval_batch(x))
            .collect::<Result<Vec<_>>>()?;
        let rows = blocks.iter().map(|b| b.nrows()).sum();
        let mut out = DMatrix::zeros(rows, x.ncols());
        let mut r = 0;
        for b in blocks {
            out.rows_mut(r, b.nrows()).copy_from(&b);
            r += b.nrows();
        }
        Ok(out)
    };
    Ok(StageData {
        fixed_p: lift(&s.xp)?,
        fixed_f: lift(&s.xf)?,
        xp: s.xp.clone(),
        xf: s.xf.clone(),
        yp: with_outputs.then(|| s.yp.clone()),
    })
}

/// Trains one stage and returns the fitted network and operator.
fn run_stage(
    name: &'static str,
    obj: StageObjective,
    train: &StageData,
    val: &StageData,
    cfg: &TrainConfig,
) -> Result<(Option<Dictionary>, DMatrix<f64>, StageReport)> {
    let a0 = if cfg.warm_start {
        obj.solve_operator_ridge(obj.net.as_ref(), train, cfg.warm_start_ridge)?
    } else {
        DMatrix::zeros(obj.n_targets(), obj.lifted_dim())
    };
    let params = obj.pack(&a0);
    let (best, report) = adagrad::train(
        name,
        params,
        train.len(),
        cfg,
        |p, cols| obj.loss_and_grad(p, train, cols),
        |p| obj.loss(p, val),
    )?;
    let (net, a) = obj.unpack(&best)?;
    Ok((net, a, report))
}

fn check_pair(train: &SnapshotSet, val: &SnapshotSet) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InsufficientData("training and validation sets must be non-empty".into()));
    }
    if train.state_dim() != val.state_dim() || train.output_dim() != val.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "validation vs training state dimension",
            expected: train.state_dim(),
            found: val.state_dim(),
        });
    }
    Ok(())
}

fn build_dictionary(n: usize, parts: Vec<Option<Dictionary>>, constant: bool) -> Dictionary {
    let mut all = vec![Dictionary::identity(n)];
    all.extend(parts.into_iter().flatten());
    let body = if all.len() == 1 {
        all.pop().unwrap()
    } else {
        Dictionary::Concat(all)
    };
    if constant {
        Dictionary::WithConstant(Box::new(body))
    } else {
        body
    }
}

/// Jointly trains `ψ(x) = [x; φ(x); (1)]`, `K` and `W_h` on the stacked
/// objective by Adagrad. The row of `K` belonging to the constant is fixed
/// to `e_lastᵀ`.
pub fn fit_direct_ocdmd(
    train: &SnapshotSet,
    val: &SnapshotSet,
    h: &DirectHyper,
    cfg: &TrainConfig,
) -> Result<KoopmanModel> {
    check_pair(train, val)?;
    cfg.validate()?;
    let n = train.state_dim();
    let p = train.output_dim();
    let c = cfg.constant_observable;
    let id = Dictionary::identity(n);
    let obj = StageObjective {
        net: optional_net(n, h.n_x, h.n_xl, h.n_xn, stage_seed(cfg.seed, 0))?,
        n_fixed: n,
        constant: c,
        target_rows: 0..n + h.n_x,
        fit_outputs: true,
        n_outputs: p,
    };
    let tr = stage_data(train, &[&id], true)?;
    let va = stage_data(val, &[&id], true)?;
    let (net, a, report) = run_stage("direct", obj, &tr, &va, cfg)?;

    let nl = n + h.n_x + usize::from(c);
    let mut k = DMatrix::zeros(nl, nl);
    k.rows_mut(0, n + h.n_x).copy_from(&a.rows(0, n + h.n_x));
    if c {
        k[(nl - 1, nl - 1)] = 1.0;
    }
    let w = a.rows(n + h.n_x, p).into_owned();
    let mut model = KoopmanModel::new(k, w, build_dictionary(n, vec![net], c))?;
    model.fit_report = Some(FitReport { stages: vec![report] });
    Ok(model)
}

/// Three-stage fit: state dynamics on `[x; φ_x; (1)]`, then the output map
/// on `[x; φ_x; φ_y; (1)]`, then closure of `[φ_y; φ_xy]`. Earlier stages
/// are frozen. The assembled operator has exact zero blocks.
pub fn fit_sequential_ocdmd(
    train: &SnapshotSet,
    val: &SnapshotSet,
    h: &SequentialHyper,
    cfg: &TrainConfig,
) -> Result<KoopmanModel> {
    check_pair(train, val)?;
    cfg.validate()?;
    let n = train.state_dim();
    let p = train.output_dim();
    let c = cfg.constant_observable;
    let cu = usize::from(c);
    let id = Dictionary::identity(n);
    let mut reports = Vec::new();

    // (a) state dynamics
    let obj = StageObjective {
        net: optional_net(n, h.n_x, h.n_xl, h.n_xn, stage_seed(cfg.seed, 1))?,
        n_fixed: n,
        constant: c,
        target_rows: 0..n + h.n_x,
        fit_outputs: false,
        n_outputs: p,
    };
    let (phi_x, k1, r) = run_stage(
        "state",
        obj,
        &stage_data(train, &[&id], false)?,
        &stage_data(val, &[&id], false)?,
        cfg,
    )?;
    reports.push(r);

    // (b) output map
    let mut fixed: Vec<&Dictionary> = vec![&id];
    fixed.extend(phi_x.as_ref());
    let s = n + h.n_x;
    let obj = StageObjective {
        net: optional_net(n, h.n_y, h.n_yl, h.n_yn, stage_seed(cfg.seed, 2))?,
        n_fixed: s,
        constant: c,
        target_rows: s..s,
        fit_outputs: true,
        n_outputs: p,
    };
    let (phi_y, w1, r) = run_stage(
        "output",
        obj,
        &stage_data(train, &fixed, true)?,
        &stage_data(val, &fixed, true)?,
        cfg,
    )?;
    reports.push(r);

    // (c) closure of the output observables
    let nl = s + h.n_y + h.n_xy + cu;
    let mut k = DMatrix::zeros(nl, nl);
    let mut phi_xy = None;
    if h.n_y + h.n_xy > 0 {
        fixed.extend(phi_y.as_ref());
        let obj = StageObjective {
            net: optional_net(n, h.n_xy, h.n_xyl, h.n_xyn, stage_seed(cfg.seed, 3))?,
            n_fixed: s + h.n_y,
            constant: c,
            target_rows: s..s + h.n_y + h.n_xy,
            fit_outputs: false,
            n_outputs: p,
        };
        let (net, k2, r) = run_stage(
            "closure",
            obj,
            &stage_data(train, &fixed, false)?,
            &stage_data(val, &fixed, false)?,
            cfg,
        )?;
        reports.push(r);
        phi_xy = net;
        k.rows_mut(s, h.n_y + h.n_xy).copy_from(&k2);
    }

    k.view_mut((0, 0), (s, s)).copy_from(&k1.columns(0, s));
    let mut w = DMatrix::zeros(p, nl);
    w.columns_mut(0, s + h.n_y).copy_from(&w1.columns(0, s + h.n_y));
    if c {
        k.view_mut((0, nl - 1), (s, 1)).copy_from(&k1.columns(s, 1));
        k[(nl - 1, nl - 1)] = 1.0;
        w.column_mut(nl - 1).copy_from(&w1.column(s + h.n_y));
    }
    let dims = BlockDims {
        n,
        n_x: h.n_x,
        n_y: h.n_y,
        n_xy: h.n_xy,
    };
    let dict = build_dictionary(n, vec![phi_x, phi_y, phi_xy], c);
    let mut model = KoopmanModel::sequential(k, w, dict, dims)?;
    model.fit_report = Some(FitReport { stages: reports });
    Ok(model)
}

/// Direct objective of a sequential model split along its blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub direct_loss: f64,
    /// Residual of the `[x; φ_x]` rows.
    pub state_loss: f64,
    pub output_loss: f64,
    /// Residual of the `[φ_y; φ_xy]` rows.
    pub closure_loss: f64,
}

impl FeasibilityReport {
    pub fn stage_sum(&self) -> f64 {
        self.state_loss + self.output_loss + self.closure_loss
    }
}

/// Evaluates the direct objective on a sequential model. The rows of the
/// stacked residual partition into the three stage residuals (the constant
/// row is exact), so the direct loss equals their sum.
pub fn check_sequential_feasible_for_direct(
    model: &KoopmanModel,
    data: &SnapshotSet,
) -> Result<FeasibilityReport> {
    if model.structure != Structure::SequentialBlocks {
        return Err(Error::StructureViolation("model is not sequential".into()));
    }
    model.verify_blocks()?;
    let d = model.block_dims.expect("checked by verify_blocks");
    let (state, output) = model.residuals(data)?;
    let n = data.len() as f64;
    let s = d.n + d.n_x;
    let report = FeasibilityReport {
        direct_loss: (state.norm_squared() + output.norm_squared()) / n,
        state_loss: state.rows(0, s).norm_squared() / n,
        output_loss: output.norm_squared() / n,
        closure_loss: state.rows(s, d.n_y + d.n_xy).norm_squared() / n,
    };
    if !report.direct_loss.is_finite() {
        return Err(Error::VerificationFailed {
            what: "direct loss of sequential model",
            residual: report.direct_loss,
        });
    }
    let gap = (report.direct_loss - report.stage_sum()).abs();
    if gap > 1e-9 * (1.0 + report.direct_loss) {
        return Err(Error::VerificationFailed {
            what: "direct loss vs summed stage losses",
            residual: gap,
        });
    }
    Ok(report)
}

/// `x⁺ = f(x)`, `y = h(x)` represented by one network with `n + p` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub net: Mlp,
    pub n: usize,
    pub p: usize,
    pub transform: Option<AffineTransform>,
    pub fit_report: Option<FitReport>,
}

impl StateSpaceModel {
    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// `(f(X), h(X))` for the columns of `x`, in model coordinates.
    pub fn eval(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let out = self.net.eval(x)?;
        Ok((out.rows(0, self.n).into_owned(), out.rows(self.n, self.p).into_owned()))
    }
}

fn baseline_loss_and_grad(
    net: &Mlp,
    params: &[f64],
    s: &SnapshotSet,
    cols: Option<&[usize]>,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let (xp, xf, yp);
    let s = match cols {
        Some(c) => {
            xp = s.xp.select_columns(c);
            xf = s.xf.select_columns(c);
            yp = s.yp.select_columns(c);
            (&xp, &xf, &yp)
        }
        None => (&s.xp, &s.xf, &s.yp),
    };
    let mut net = net.clone();
    net.params_mut().copy_from_slice(params);
    let tape = net.forward(s.0)?;
    let n = s.0.ncols() as f64;
    let mut r = tape.output().clone();
    let nx = s.1.nrows();
    {
        let mut top = r.rows_mut(0, nx);
        top -= s.1;
    }
    {
        let mut bottom = r.rows_mut(nx, s.2.nrows());
        bottom -= s.2;
    }
    let loss = r.norm_squared() / n;
    let grad = if with_grad {
        net.backward(&tape, &(r * (2.0 / n)))
    } else {
        Vec::new()
    };
    Ok((loss, grad))
}

/// Fits the state-space baseline on `‖X_F − f(X_P)‖² + ‖Y_P − h(X_P)‖²`.
pub fn fit_nonlinear_statespace(
    train: &SnapshotSet,
    val: &SnapshotSet,
    h: &BaselineHyper,
    cfg: &TrainConfig,
) -> Result<StateSpaceModel> {
    check_pair(train, val)?;
    cfg.validate()?;
    let n = train.state_dim();
    let p = train.output_dim();
    let mut widths = vec![n];
    widths.extend(core::iter::repeat_n(h.n_xn, h.n_xl));
    widths.push(n + p);
    let net = Mlp::seeded(widths, stage_seed(cfg.seed, 4))?;
    let (best, report) = adagrad::train(
        "state-space",
        net.params().to_vec(),
        train.len(),
        cfg,
        |q, cols| baseline_loss_and_grad(&net, q, train, cols, true),
        |q| Ok(baseline_loss_and_grad(&net, q, val, None, false)?.0),
    )?;
    let mut net = net;
    net.params_mut().copy_from_slice(&best);
    Ok(StateSpaceModel {
        net,
        n,
        p,
        transform: None,
        fit_report: Some(FitReport { stages: vec![report] }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{build_snapshots, ColumnSource};
    use crate::dictionary::{append_constant, make_monomial, state_monomials_plus};
    use crate::linalg::DEFAULT_RCOND;
    use crate::systems::{FiniteClosureParams, IcBox, SystemSpec, generate_dataset};

    fn linear_snapshots(n_cols: usize, offset: usize) -> SnapshotSet {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.7]);
        let xp = DMatrix::from_fn(2, n_cols, |i, j| {
            let t = (j + offset) as f64;
            if i == 0 { (0.7 * t).sin() } else { (1.3 * t + 0.4).cos() }
        });
        let xf = &a * &xp;
        let yp = DMatrix::from_fn(1, n_cols, |_, j| xp[(0, j)] - 0.5 * xp[(1, j)]);
        let cols = (0..n_cols).map(|k| ColumnSource { traj_id: 0, k }).collect();
        SnapshotSet::new(xp, xf, yp, cols).unwrap()
    }

    fn example1_snapshots() -> SnapshotSet {
        let spec = SystemSpec::finite_closure(FiniteClosureParams::default());
        let ics = IcBox::uniform(2, -1.0, 1.0).unwrap();
        let data = generate_dataset(&spec, 20, &ics, 30, 7).unwrap();
        build_snapshots(&data.trajectories).unwrap()
    }

    #[test]
    fn dmd_recovers_linear_map() {
        let s = linear_snapshots(20, 0);
        let k = dmd(&s.xp, &s.xf, DEFAULT_RCOND).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.7]);
        assert!((k - a).norm() < 1e-10);
        let eye = DMatrix::<f64>::identity(3, 3);
        let xf = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        assert!((dmd(&eye, &xf, DEFAULT_RCOND).unwrap() - &xf).norm() < 1e-12);
        assert_eq!(dmd(&DMatrix::zeros(2, 3), &DMatrix::zeros(2, 3), 1e-10), Err(Error::ZeroMatrix));
    }

    #[test]
    fn dmd_rank_deficient_is_minimum_norm_least_squares() {
        // rows of X_P are dependent: x2 = 2 x1
        let xp = DMatrix::from_row_slice(2, 5, &[1.0, 2.0, -1.0, 0.5, 3.0, 2.0, 4.0, -2.0, 1.0, 6.0]);
        let xf = DMatrix::from_row_slice(3, 5, &[1.0, 0.0, 2.0, 1.0, -1.0, 0.3, 0.2, 0.1, 0.0, 1.0, 2.0, 4.0, -2.0, 1.0, 6.0]);
        let k = dmd(&xp, &xf, DEFAULT_RCOND).unwrap();
        // oracle: restrict to the row space u = (1,2)/√5 and solve the 1-D normal equation
        let u = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]) / 5f64.sqrt();
        let z = u.transpose() * &xp;
        let coef = &xf * z.transpose() / (&z * z.transpose())[(0, 0)];
        let oracle = coef * u.transpose();
        assert!((k - oracle).norm() < 1e-12);
    }

    #[test]
    fn edmd_with_identity_is_dmd() {
        let s = linear_snapshots(15, 3);
        assert_eq!(
            edmd(&s, &Dictionary::identity(2), DEFAULT_RCOND).unwrap(),
            dmd(&s.xp, &s.xf, DEFAULT_RCOND).unwrap()
        );
    }

    #[test]
    fn edmd_recovers_example1_operator() {
        let s = example1_snapshots();
        let dict = make_monomial(2, state_monomials_plus(2, &[vec![2, 0], vec![1, 1], vec![3, 0]])).unwrap();
        let m = fit_edmd(&s, &dict, DEFAULT_RCOND).unwrap();
        let expected = DMatrix::from_row_slice(5, 5, &[
            0.9, 0.0, 0.0, 0.0, 0.0,
            -0.4, -0.8, -0.9, 0.0, 0.0,
            0.0, 0.0, 0.81, 0.0, 0.0,
            0.0, 0.0, -0.36, -0.72, -0.81,
            0.0, 0.0, 0.0, 0.0, 0.729,
        ]);
        assert!((&m.k - expected).amax() < 1e-8);
        let e4 = DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!((&m.w_h - e4).amax() < 1e-8);
        // without x1³ the lifted dynamics do not close
        let short = make_monomial(2, state_monomials_plus(2, &[vec![2, 0], vec![1, 1]])).unwrap();
        let k = edmd(&s, &short, DEFAULT_RCOND).unwrap();
        let res = short.eval_batch(&s.xf).unwrap() - k * short.eval_batch(&s.xp).unwrap();
        assert!(res.norm() > 1e-3);
    }

    #[test]
    fn exact_sequential_example1_has_zero_direct_loss() {
        let s = example1_snapshots();
        let dict = make_monomial(2, state_monomials_plus(2, &[vec![2, 0], vec![1, 1], vec![3, 0]])).unwrap();
        let k = edmd(&s, &dict, DEFAULT_RCOND).unwrap().map(|v| if v.abs() < 1e-9 { 0.0 } else { v });
        let w = DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 0.0, 1.0, 0.0]);
        let dims = BlockDims { n: 2, n_x: 1, n_y: 1, n_xy: 1 };
        let m = KoopmanModel::sequential(k.clone(), w.clone(), dict.clone(), dims).unwrap();
        let r = check_sequential_feasible_for_direct(&m, &s).unwrap();
        assert!(r.direct_loss < 1e-10);
        let dense = KoopmanModel::new(k, w, dict).unwrap();
        assert!(matches!(
            check_sequential_feasible_for_direct(&dense, &s),
            Err(Error::StructureViolation(_))
        ));
    }

    #[test]
    fn sequential_blocks_reject_nonzero_entries() {
        let dict = make_monomial(2, state_monomials_plus(2, &[vec![2, 0], vec![1, 1], vec![3, 0]])).unwrap();
        let mut k = DMatrix::zeros(5, 5);
        k[(0, 3)] = 1e-300;
        let dims = BlockDims { n: 2, n_x: 1, n_y: 1, n_xy: 1 };
        assert!(matches!(
            KoopmanModel::sequential(k, DMatrix::zeros(1, 5), dict, dims),
            Err(Error::StructureViolation(_))
        ));
    }

    #[test]
    fn edmd_with_constant_keeps_unit_eigenvalue() {
        let s = example1_snapshots();
        let dict = append_constant(make_monomial(2, state_monomials_plus(2, &[vec![2, 0]])).unwrap()).unwrap();
        let k = edmd(&s, &dict, DEFAULT_RCOND).unwrap();
        let ev = linalg::eigenvalues(&k).unwrap();
        assert!(ev.iter().any(|l| linalg::cabs(l - 1.0) < 1e-8));
    }

    #[test]
    fn direct_with_frozen_dictionary_matches_closed_form() {
        let train = linear_snapshots(40, 0);
        let val = linear_snapshots(10, 100);
        let cfg = TrainConfig {
            warm_start: false,
            epochs: 20_000,
            early_stop_patience: 20_000,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let m = fit_direct_ocdmd(&train, &val, &DirectHyper { n_x: 0, n_xl: 1, n_xn: 1 }, &cfg).unwrap();
        let dict = append_constant(Dictionary::identity(2)).unwrap();
        let closed = fit_edmd(&train, &dict, DEFAULT_RCOND).unwrap();
        let mut stacked_fit = m.k.rows(0, 2).into_owned().insert_rows(2, 1, 0.0);
        stacked_fit.row_mut(2).copy_from(&m.w_h.row(0));
        let mut stacked = closed.k.rows(0, 2).into_owned().insert_rows(2, 1, 0.0);
        stacked.row_mut(2).copy_from(&closed.w_h.row(0));
        assert!((&stacked_fit - &stacked).norm() / stacked.norm() < 1e-4);
        assert!(m.fit_report.unwrap().stages[0].train_loss < 1e-6);
    }

    #[test]
    fn direct_training_is_deterministic_and_improves() {
        let s = example1_snapshots();
        let (train, val) = (s.clone(), s);
        let cfg = TrainConfig { epochs: 30, ..TrainConfig::default() };
        let h = DirectHyper { n_x: 3, n_xl: 2, n_xn: 5 };
        let a = fit_direct_ocdmd(&train, &val, &h, &cfg).unwrap();
        let b = fit_direct_ocdmd(&train, &val, &h, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lifted_dim(), 6);
        assert_eq!(a.k.row(5).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let report = &a.fit_report.as_ref().unwrap().stages[0];
        let initial = report.log[0].train_loss;
        assert!(report.train_loss <= initial);
    }

    #[test]
    fn sequential_assembly_has_exact_zero_blocks() {
        let s = example1_snapshots();
        let cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
        let h = SequentialHyper { n_x: 1, n_xl: 2, n_xn: 3, n_y: 1, n_yl: 2, n_yn: 3, n_xy: 1, n_xyl: 2, n_xyn: 3 };
        let m = fit_sequential_ocdmd(&s, &s, &h, &cfg).unwrap();
        assert_eq!(m.lifted_dim(), 6);
        for i in 0..3 {
            assert_eq!(m.k[(i, 3)], 0.0);
            assert_eq!(m.k[(i, 4)], 0.0);
        }
        assert_eq!(m.w_h[(0, 4)], 0.0);
        assert_eq!(m.fit_report.as_ref().unwrap().stages.len(), 3);
        let r = check_sequential_feasible_for_direct(&m, &s).unwrap();
        let stages: f64 = m.fit_report.unwrap().stages.iter().map(|s| s.train_loss).sum();
        assert!(r.direct_loss <= 2.0 * stages + 1e-12);
    }

    #[test]
    fn sequential_with_linear_readout_skips_output_observables() {
        let s = linear_snapshots(30, 0);
        let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
        let h = SequentialHyper { n_x: 0, n_xl: 1, n_xn: 1, n_y: 0, n_yl: 1, n_yn: 1, n_xy: 0, n_xyl: 1, n_xyn: 1 };
        let m = fit_sequential_ocdmd(&s, &s, &h, &cfg).unwrap();
        assert_eq!(m.lifted_dim(), 3);
        assert!(m.direct_loss(&s).unwrap() < 1e-12);
    }

    #[test]
    fn baseline_learns_linear_map() {
        let train = linear_snapshots(60, 0);
        let val = linear_snapshots(20, 200);
        let cfg = TrainConfig { epochs: 3000, ..TrainConfig::default() };
        let m = fit_nonlinear_statespace(&train, &val, &BaselineHyper { n_xl: 1, n_xn: 8 }, &cfg).unwrap();
        let (f, h) = m.eval(&val.xp).unwrap();
        let r2 = 1.0 - (&f - &val.xf).norm_squared() / val.xf.norm_squared();
        assert!(r2 > 0.999, "r2 = {r2}");
        assert_eq!(h.nrows(), 1);
    }
}
