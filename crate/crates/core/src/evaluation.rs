//! Prediction in original coordinates, r² metrics, the standardize-and-fit
//! pipeline, grid-search selection and phase portraits.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // inherent on f64 whenever std is linked
use num_traits::Float;

use crate::datasets::{self, build_snapshots, delay_embed, embed_trajectory, SnapshotSet};
use crate::error::{Error, Result};
use crate::linalg::DEFAULT_RCOND;
use crate::solvers::{
    fit_direct_ocdmd, fit_edmd, fit_nonlinear_statespace, fit_sequential_ocdmd, BaselineHyper,
    DirectHyper, KoopmanModel, SequentialHyper, StateSpaceModel, TrainConfig,
};
use crate::dictionary::Dictionary;
use crate::systems::Trajectory;

/// `1 − ‖A − P‖²_F / ‖A‖²_F` (not mean-centered).
pub fn r_squared(actual: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    if actual.shape() != predicted.shape() {
        return Err(Error::DimensionMismatch {
            context: "r² operand columns",
            expected: actual.ncols(),
            found: predicted.ncols(),
        });
    }
    let denom = actual.norm_squared();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("r² of an all-zero reference"));
    }
    Ok(1.0 - (actual - predicted).norm_squared() / denom)
}

/// Common interface of fitted models. Inputs and outputs are in original
/// coordinates (delay-embedded when `delay() > 1`); states are columns.
pub trait Predictor {
    fn state_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn delay(&self) -> usize;
    fn param_count(&self) -> usize;
    fn predict_states(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    fn predict_outputs(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// States at steps `1..=n` from every column of `x0`.
    fn rollout(&self, x0: &DMatrix<f64>, n: usize) -> Result<Vec<DMatrix<f64>>>;
}

fn to_model(t: Option<&datasets::AffineTransform>, x: &DMatrix<f64>) -> DMatrix<f64> {
    match t {
        Some(t) => t.apply_states(x),
        None => x.clone(),
    }
}

fn from_model_states(t: Option<&datasets::AffineTransform>, x: DMatrix<f64>) -> DMatrix<f64> {
    match t {
        Some(t) => t.invert_states(&x),
        None => x,
    }
}

fn from_model_outputs(t: Option<&datasets::AffineTransform>, y: DMatrix<f64>) -> DMatrix<f64> {
    match t {
        Some(t) => t.invert_outputs(&y),
        None => y,
    }
}

impl KoopmanModel {
    /// Lifted states `ψ(x)` of raw-coordinate columns.
    pub fn lift_raw(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lift(&to_model(self.transform.as_ref(), x))
    }

    /// Raw-coordinate states read from lifted columns.
    pub fn read_states(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        from_model_states(self.transform.as_ref(), psi.rows(0, self.state_dim()).into_owned())
    }

    /// Rollout that re-lifts the predicted state at every step.
    pub fn rollout_relift(&self, x0: &DMatrix<f64>, n: usize) -> Result<Vec<DMatrix<f64>>> {
        let mut out = Vec::with_capacity(n);
        let mut x = to_model(self.transform.as_ref(), x0);
        for _ in 0..n {
            let psi = &self.k * self.lift(&x)?;
            x = psi.rows(0, self.state_dim()).into_owned();
            out.push(from_model_states(self.transform.as_ref(), x.clone()));
        }
        Ok(out)
    }
}

impl Predictor for KoopmanModel {
    fn state_dim(&self) -> usize {
        KoopmanModel::state_dim(self)
    }

    fn output_dim(&self) -> usize {
        KoopmanModel::output_dim(self)
    }

    fn delay(&self) -> usize {
        self.delay
    }

    fn param_count(&self) -> usize {
        KoopmanModel::param_count(self)
    }

    fn predict_states(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.read_states(&(&self.k * self.lift_raw(x)?)))
    }

    fn predict_outputs(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(from_model_outputs(self.transform.as_ref(), &self.w_h * self.lift_raw(x)?))
    }

    fn rollout(&self, x0: &DMatrix<f64>, n: usize) -> Result<Vec<DMatrix<f64>>> {
        let mut psi = self.lift_raw(x0)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            psi = &self.k * psi;
            out.push(self.read_states(&psi));
        }
        Ok(out)
    }
}

impl Predictor for StateSpaceModel {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn output_dim(&self) -> usize {
        self.p
    }

    fn delay(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        StateSpaceModel::param_count(self)
    }

    fn predict_states(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (f, _) = self.eval(&to_model(self.transform.as_ref(), x))?;
        Ok(from_model_states(self.transform.as_ref(), f))
    }

    fn predict_outputs(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (_, h) = self.eval(&to_model(self.transform.as_ref(), x))?;
        Ok(from_model_outputs(self.transform.as_ref(), h))
    }

    fn rollout(&self, x0: &DMatrix<f64>, n: usize) -> Result<Vec<DMatrix<f64>>> {
        let mut x = to_model(self.transform.as_ref(), x0);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            x = self.eval(&x)?.0;
            out.push(from_model_states(self.transform.as_ref(), x.clone()));
        }
        Ok(out)
    }
}

/// Either kind of fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Koopman(KoopmanModel),
    StateSpace(StateSpaceModel),
}

impl FittedModel {
    fn inner(&self) -> &dyn Predictor {
        match self {
            FittedModel::Koopman(m) => m,
            FittedModel::StateSpace(m) => m,
        }
    }

    pub fn as_koopman(&self) -> Option<&KoopmanModel> {
        match self {
            FittedModel::Koopman(m) => Some(m),
            FittedModel::StateSpace(_) => None,
        }
    }

    pub fn fit_report(&self) -> Option<&crate::solvers::FitReport> {
        match self {
            FittedModel::Koopman(m) => m.fit_report.as_ref(),
            FittedModel::StateSpace(m) => m.fit_report.as_ref(),
        }
    }
}

impl Predictor for FittedModel {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }

    fn delay(&self) -> usize {
        self.inner().delay()
    }

    fn param_count(&self) -> usize {
        self.inner().param_count()
    }

    fn predict_states(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inner().predict_states(x)
    }

    fn predict_outputs(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inner().predict_outputs(x)
    }

    fn rollout(&self, x0: &DMatrix<f64>, n: usize) -> Result<Vec<DMatrix<f64>>> {
        self.inner().rollout(x0, n)
    }
}

fn column(x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(x.len(), 1, x.as_slice())
}

pub fn predict_one_step<M: Predictor + ?Sized>(model: &M, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(model.predict_states(&column(x))?.column(0).into_owned())
}

/// States at steps `1..=n` (K-power rollout for Koopman models).
pub fn predict_n_step<M: Predictor + ?Sized>(model: &M, x0: &DVector<f64>, n: usize) -> Result<Vec<DVector<f64>>> {
    Ok(model
        .rollout(&column(x0), n)?
        .into_iter()
        .map(|m| m.column(0).into_owned())
        .collect())
}

pub fn predict_output<M: Predictor + ?Sized>(model: &M, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(model.predict_outputs(&column(x))?.column(0).into_owned())
}

/// Test-set r² values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub r2_x_1step: f64,
    pub r2_x_nstep: f64,
    pub r2_y: f64,
    pub model_id: String,
    pub dataset_id: String,
    /// Rollout length used for `r2_x_nstep` (the longest one when
    /// trajectories differ in length).
    pub horizon: usize,
}

/// Trajectories in the model's state space (delay-embedded when needed).
pub fn embed_for<M: Predictor + ?Sized>(model: &M, trajectories: &[Trajectory]) -> Vec<Trajectory> {
    let d = model.delay();
    if d <= 1 {
        return trajectories.to_vec();
    }
    trajectories.iter().filter_map(|t| embed_trajectory(t, d)).collect()
}

/// 1-step r² over all test snapshot pairs, n-step r² over rollouts from each
/// initial state (stacked), output r² over all output snapshots. `horizon`
/// caps the rollout length; `None` uses each full trajectory.
pub fn evaluate_model<M: Predictor + ?Sized>(
    model: &M,
    test: &[Trajectory],
    horizon: Option<usize>,
) -> Result<MetricsRecord> {
    let embedded = embed_for(model, test);
    let snaps = build_snapshots(&embedded)?;
    check_state_dim(model, &snaps)?;
    let r2_x_1step = r_squared(&snaps.xf, &model.predict_states(&snaps.xp)?)?;
    let r2_y = r_squared(&snaps.yp, &model.predict_outputs(&snaps.xp)?)?;
    let (actual, predicted, used) = stacked_rollouts(model, &embedded, horizon, 0)?;
    Ok(MetricsRecord {
        r2_x_1step,
        r2_x_nstep: r_squared(&actual, &predicted)?,
        r2_y,
        model_id: String::new(),
        dataset_id: String::new(),
        horizon: used,
    })
}

fn check_state_dim<M: Predictor + ?Sized>(model: &M, s: &SnapshotSet) -> Result<()> {
    if s.state_dim() != model.state_dim() || s.output_dim() != model.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "data state dimension vs model",
            expected: model.state_dim(),
            found: s.state_dim(),
        });
    }
    Ok(())
}

/// Rolls out from `states[0]` of every trajectory and stacks predicted vs
/// actual states at steps `skip+1..=min(horizon, len−1)`.
fn stacked_rollouts<M: Predictor + ?Sized>(
    model: &M,
    trajs: &[Trajectory],
    horizon: Option<usize>,
    skip: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let n = model.state_dim();
    let steps: Vec<usize> = trajs
        .iter()
        .map(|t| horizon.map_or(t.len() - 1, |h| h.min(t.len() - 1)))
        .collect();
    let max = steps.iter().copied().max().unwrap_or(0);
    let total: usize = steps.iter().map(|&s| s.saturating_sub(skip)).sum();
    if total == 0 {
        return Err(Error::InsufficientData("no rollout steps to score".into()));
    }
    let x0 = DMatrix::from_fn(n, trajs.len(), |i, j| trajs[j].states[0][i]);
    let roll = model.rollout(&x0, max)?;
    let mut actual = DMatrix::zeros(n, total);
    let mut predicted = DMatrix::zeros(n, total);
    let mut c = 0;
    for (j, t) in trajs.iter().enumerate() {
        for k in skip + 1..=steps[j] {
            actual.column_mut(c).copy_from_slice(&t.states[k]);
            predicted.column_mut(c).copy_from(&roll[k - 1].column(j));
            c += 1;
        }
    }
    Ok((actual, predicted, max))
}

/// Model family and hyperparameters of one fit.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    /// Closed-form E-DMD on a fixed dictionary (no standardization).
    Edmd(Dictionary),
    Direct(DirectHyper),
    Sequential(SequentialHyper),
    Baseline(BaselineHyper),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Edmd(_) => "edmd",
            Algorithm::Direct(_) => "direct",
            Algorithm::Sequential(_) => "sequential",
            Algorithm::Baseline(_) => "baseline",
        }
    }

    /// Compact hyperparameter label, e.g. `nx=3 nxl=7 nxn=5`.
    pub fn label(&self) -> String {
        match self {
            Algorithm::Edmd(d) => format!("dict={}", d.kind()),
            Algorithm::Direct(h) => format!("nx={} nxl={} nxn={}", h.n_x, h.n_xl, h.n_xn),
            Algorithm::Sequential(h) => format!(
                "nx={} nxl={} nxn={} ny={} nyl={} nyn={} nxy={} nxyl={} nxyn={}",
                h.n_x, h.n_xl, h.n_xn, h.n_y, h.n_yl, h.n_yn, h.n_xy, h.n_xyl, h.n_xyn
            ),
            Algorithm::Baseline(h) => format!("nxl={} nxn={}", h.n_xl, h.n_xn),
        }
    }
}

/// Delay-embeds (when `n_d > 1`), standardizes on the training snapshots,
/// fits, and attaches the transform so the model predicts in original
/// coordinates.
pub fn fit_model(
    algo: &Algorithm,
    train: &[Trajectory],
    val: &[Trajectory],
    n_d: usize,
    cfg: &TrainConfig,
) -> Result<FittedModel> {
    let (tr, _) = delay_embed(train, n_d.max(1))?;
    let (va, _) = delay_embed(val, n_d.max(1))?;
    if let Algorithm::Edmd(dict) = algo {
        let mut m = fit_edmd(&tr, dict, DEFAULT_RCOND)?;
        m.delay = n_d.max(1);
        return Ok(FittedModel::Koopman(m));
    }
    let t = datasets::fit_standardization(&tr)?;
    let (tr, va) = (t.apply(&tr), t.apply(&va));
    Ok(match algo {
        Algorithm::Direct(h) => {
            let mut m = fit_direct_ocdmd(&tr, &va, h, cfg)?.with_transform(t)?;
            m.delay = n_d.max(1);
            FittedModel::Koopman(m)
        }
        Algorithm::Sequential(h) => {
            let mut m = fit_sequential_ocdmd(&tr, &va, h, cfg)?.with_transform(t)?;
            m.delay = n_d.max(1);
            FittedModel::Koopman(m)
        }
        Algorithm::Baseline(h) => {
            if n_d > 1 {
                return Err(Error::InvalidParameter("the state-space baseline does not take delays".into()));
            }
            let mut m = fit_nonlinear_statespace(&tr, &va, h, cfg)?;
            m.transform = Some(t);
            FittedModel::StateSpace(m)
        }
        Algorithm::Edmd(_) => unreachable!(),
    })
}

/// One row of the grid-search table.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub index: usize,
    pub algorithm: &'static str,
    pub label: String,
    pub n_d: usize,
    pub param_count: usize,
    /// Validation metrics; `None` when the cell failed.
    pub val: Option<MetricsRecord>,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub error: Option<String>,
    /// Filled in by callers that have a clock.
    pub wall_time_s: Option<f64>,
}

impl CellResult {
    /// Selection score `r2_x_1step + r2_y` on validation data.
    pub fn score(&self) -> Option<f64> {
        self.val.as_ref().map(|m| m.r2_x_1step + m.r2_y).filter(|s| s.is_finite())
    }
}

/// A grid cell: algorithm plus delay depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub algorithm: Algorithm,
    pub n_d: usize,
}

/// Trains and scores one cell. Failures are recorded in the result rather
/// than returned.
pub fn run_cell(
    index: usize,
    cell: &GridCell,
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
) -> (CellResult, Option<FittedModel>) {
    let mut row = CellResult {
        index,
        algorithm: cell.algorithm.name(),
        label: cell.algorithm.label(),
        n_d: cell.n_d,
        param_count: 0,
        val: None,
        train_loss: None,
        val_loss: None,
        error: None,
        wall_time_s: None,
    };
    let fitted = fit_model(&cell.algorithm, train, val, cell.n_d, cfg)
        .and_then(|m| evaluate_model(&m, val, None).map(|r| (m, r)));
    match fitted {
        Ok((m, mut rec)) => {
            rec.model_id = format!("cell-{index}");
            rec.dataset_id = "validation".to_string();
            row.param_count = m.param_count();
            if let Some(rep) = m.fit_report() {
                row.train_loss = Some(rep.stages.iter().map(|s| s.train_loss).sum());
                row.val_loss = Some(rep.stages.iter().map(|s| s.val_loss).sum());
            }
            row.val = Some(rec);
            (row, Some(m))
        }
        Err(e) => {
            row.error = Some(format!("{e}"));
            (row, None)
        }
    }
}

/// Index of the highest-scoring cell; ties go to fewer parameters, then to
/// the lower index.
pub fn select_best(results: &[CellResult]) -> Option<usize> {
    let mut best: Option<(usize, f64, usize)> = None;
    for (i, r) in results.iter().enumerate() {
        let Some(s) = r.score() else { continue };
        let better = match best {
            None => true,
            Some((_, bs, bp)) => s > bs + 1e-12 || ((s - bs).abs() <= 1e-12 && r.param_count < bp),
        };
        if better {
            best = Some((i, s, r.param_count));
        }
    }
    best.map(|b| b.0)
}

/// Outcome of a grid search.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub table: Vec<CellResult>,
    pub best: Option<usize>,
    pub best_model: Option<FittedModel>,
}

/// Sequential grid search; every cell is seeded by `cfg.seed` alone, so the
/// outcome does not depend on evaluation order.
pub fn grid_search(
    cells: &[GridCell],
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
) -> GridSearchResult {
    let mut table = Vec::with_capacity(cells.len());
    let mut models = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        let (row, m) = run_cell(i, c, train, val, cfg);
        table.push(row);
        models.push(m);
    }
    let best = select_best(&table);
    let best_model = best.and_then(|i| models.swap_remove(i));
    GridSearchResult { table, best, best_model }
}

/// Raw-state rollouts from the initial history of reference trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Portrait {
    /// Per reference trajectory, raw states at steps `0..=n_steps`; the first
    /// `delay` states are copied from the reference.
    pub rollouts: Vec<Vec<Vec<f64>>>,
    pub delay: usize,
    /// r² over all non-seeded steps, stacked over trajectories.
    pub r2: f64,
}

/// Rolls the model out from the first delay block of each reference
/// trajectory and scores the raw states against the reference.
pub fn phase_portrait<M: Predictor + ?Sized>(
    model: &M,
    reference: &[Trajectory],
    n_steps: usize,
) -> Result<Portrait> {
    let d = model.delay().max(1);
    if reference.is_empty() {
        return Err(Error::InsufficientData("no reference trajectories".into()));
    }
    let n_raw = model.state_dim() / d;
    for t in reference {
        if t.len() < n_steps + 1 || t.len() < d + 1 {
            return Err(Error::InsufficientData(format!(
                "reference trajectory {} has {} samples, needs {}",
                t.traj_id,
                t.len(),
                (n_steps + 1).max(d + 1)
            )));
        }
        if t.state_dim() != n_raw {
            return Err(Error::DimensionMismatch {
                context: "reference state dimension",
                expected: n_raw,
                found: t.state_dim(),
            });
        }
    }
    let blocks = (n_steps + 1).saturating_sub(d).div_ceil(d);
    let x0 = DMatrix::from_fn(model.state_dim(), reference.len(), |i, j| {
        datasets::delay_block(&reference[j].states, 0, d)[i]
    });
    let roll = model.rollout(&x0, blocks)?;
    let mut rollouts = Vec::with_capacity(reference.len());
    for (j, t) in reference.iter().enumerate() {
        let mut states: Vec<Vec<f64>> = t.states[..d].to_vec();
        for step in &roll {
            let block: Vec<f64> = step.column(j).iter().copied().collect();
            states.extend(datasets::unstack_block(&block, n_raw));
        }
        states.truncate(n_steps + 1);
        rollouts.push(states);
    }
    let scored = (n_steps + 1).saturating_sub(d);
    if scored == 0 {
        return Err(Error::InsufficientData("portrait has no steps beyond the seeded history".into()));
    }
    let cols = scored * reference.len();
    let mut actual = DMatrix::zeros(n_raw, cols);
    let mut predicted = DMatrix::zeros(n_raw, cols);
    let mut c = 0;
    for (t, r) in reference.iter().zip(&rollouts) {
        for k in d..=n_steps {
            actual.column_mut(c).copy_from_slice(&t.states[k]);
            predicted.column_mut(c).copy_from_slice(&r[k]);
            c += 1;
        }
    }
    Ok(Portrait {
        rollouts,
        delay: d,
        r2: r_squared(&actual, &predicted)?,
    })
}
