//! End-to-end benchmark studies: data generation, reported configurations,
//! test metrics and the study-specific analyses.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use koopfuse_core::datasets::{build_snapshots, fit_standardization, AffineTransform};
use koopfuse_core::evaluation::{
    evaluate_model, fit_model, phase_portrait, FittedModel, GridCell, MetricsRecord, Portrait,
};
use koopfuse_core::experiments::{
    delay_sweep, example1_dictionary, example1_theoretical_model, protocol, reported_cells, Example,
};
use koopfuse_core::linalg::{cabs, C64, DEFAULT_RCOND};
use koopfuse_core::solvers::{fit_edmd, KoopmanModel, TrainConfig};
use koopfuse_core::spectral::{
    apply_affine_transform, correlate_fields, eval_model_eigenfunctions, lattice,
    modal_decomposition, PairCorrelation,
};
use koopfuse_core::systems::{FiniteClosureParams, Trajectory};

use crate::config::TrainSection;
use crate::error::{AppError, AppResult};
use crate::formats::{self, MetricsJson, PairJson};

/// Train/validation/test thirds of one generated study dataset.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

pub fn study_data(ex: Example, seed: u64) -> AppResult<StudyData> {
    let (train, val, test) = protocol(ex).generate_split(seed)?;
    Ok(StudyData { train, val, test })
}

/// Training budget that reproduces the reported accuracy within minutes on
/// one core.
pub fn default_budget(ex: Example) -> TrainSection {
    let (epochs, lr) = match ex {
        Example::FiniteClosure => (2000, 0.01),
        Example::Mems => (3000, 0.05),
        Example::ActivatorRepressor => (300, 0.05),
    };
    TrainSection {
        epochs: Some(epochs),
        learning_rate: Some(lr),
        batch_size: Some(64),
        patience: Some(epochs),
        ..Default::default()
    }
}

/// One trained configuration scored on test data.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub name: String,
    pub n_d: usize,
    pub model: FittedModel,
    pub test: MetricsRecord,
    pub wall_time_s: f64,
}

/// Fits `cells` in parallel and scores each on the test split.
pub fn fit_cells(
    pool: &rayon::ThreadPool,
    cells: &[(String, GridCell)],
    data: &StudyData,
    cfg: &TrainConfig,
) -> AppResult<Vec<FitOutcome>> {
    pool.install(|| {
        cells
            .par_iter()
            .map(|(name, cell)| {
                let t0 = Instant::now();
                let model = fit_model(&cell.algorithm, &data.train, &data.val, cell.n_d, cfg)?;
                let mut test = evaluate_model(&model, &data.test, None)?;
                test.model_id = name.clone();
                test.dataset_id = "test".into();
                let wall_time_s = t0.elapsed().as_secs_f64();
                log::info!(
                    "{name}: 1-step {:.4} n-step {:.4} output {:.4} ({wall_time_s:.1} s)",
                    test.r2_x_1step,
                    test.r2_x_nstep,
                    test.r2_y
                );
                Ok(FitOutcome {
                    name: name.clone(),
                    n_d: cell.n_d,
                    model,
                    test,
                    wall_time_s,
                })
            })
            .collect()
    })
}

/// The reported configurations of a study, optionally filtered by name.
pub fn named_cells(ex: Example, only: &[&str]) -> Vec<(String, GridCell)> {
    reported_cells(ex)
        .into_iter()
        .filter(|c| only.is_empty() || only.contains(&c.name))
        .map(|c| (c.name.to_string(), c.cell))
        .collect()
}

/// E-DMD on the closing monomials, compared with the exact operator.
#[derive(Debug, Clone)]
pub struct ClosureRecovery {
    pub model: KoopmanModel,
    pub k_error: f64,
    pub w_error: f64,
}

pub fn example1_closure_recovery(train: &[Trajectory]) -> AppResult<ClosureRecovery> {
    let snaps = build_snapshots(train)?;
    let model = fit_edmd(&snaps, &example1_dictionary(), DEFAULT_RCOND)?;
    let theory = example1_theoretical_model(&FiniteClosureParams::default());
    Ok(ClosureRecovery {
        k_error: (&model.k - &theory.k).norm(),
        w_error: (&model.w_h - &theory.w_h).norm(),
        model,
    })
}

/// Eigenvalues of the exact operator after standardizing on `train`.
pub fn standardized_theory(train: &[Trajectory]) -> AppResult<(KoopmanModel, AffineTransform)> {
    let t = fit_standardization(&build_snapshots(train)?)?;
    let theory = example1_theoretical_model(&FiniteClosureParams::default());
    Ok((apply_affine_transform(&theory, &t)?, t))
}

pub fn theory_eigenvalues(train: &[Trajectory]) -> AppResult<Vec<C64>> {
    let (m, _) = standardized_theory(train)?;
    Ok(modal_decomposition(&m)?.eigenvalues)
}

/// Lattice over the initial-condition box of the finite-closure study.
pub fn example1_grid(per_axis: usize) -> AppResult<DMatrix<f64>> {
    let b = protocol(Example::FiniteClosure).ic_box;
    Ok(lattice(&b.lower, &b.upper, per_axis)?)
}

/// Eigenfunction correlations between a trained model and the exact operator
/// expressed in the trained model's coordinates, on a raw-state grid.
pub fn compare_with_theory(model: &KoopmanModel, raw_grid: &DMatrix<f64>) -> AppResult<Vec<PairCorrelation>> {
    let theory = example1_theoretical_model(&FiniteClosureParams::default());
    let theory = match &model.transform {
        Some(t) => apply_affine_transform(&theory, t)?,
        None => theory,
    };
    compare_models(&theory, model, raw_grid)
}

/// Matched eigenpair correlations of two models on a raw-state grid.
pub fn compare_models(a: &KoopmanModel, b: &KoopmanModel, raw_grid: &DMatrix<f64>) -> AppResult<Vec<PairCorrelation>> {
    let da = modal_decomposition(a)?;
    let db = modal_decomposition(b)?;
    let fa = eval_model_eigenfunctions(a, &da, raw_grid)?;
    let fb = eval_model_eigenfunctions(b, &db, raw_grid)?;
    Ok(correlate_fields(&da, &fa, &db, &fb)?)
}

/// Pairs whose first eigenvalue is not the unit eigenvalue.
pub fn non_unit(pairs: &[PairCorrelation]) -> Vec<PairCorrelation> {
    pairs
        .iter()
        .filter(|p| cabs(p.lambda_a - C64::new(1.0, 0.0)) > 1e-6)
        .copied()
        .collect()
}

/// One delay depth of the time-delay study.
#[derive(Debug, Clone)]
pub struct DelayRow {
    pub n_d: usize,
    pub test: MetricsRecord,
    pub portrait: Portrait,
    pub wall_time_s: f64,
}

/// Direct models over `n_d ∈ depths` with portraits from the test
/// trajectories over their full length.
pub fn delay_study(
    pool: &rayon::ThreadPool,
    depths: &[usize],
    data: &StudyData,
    cfg: &TrainConfig,
) -> AppResult<Vec<DelayRow>> {
    let n_steps = data.test.iter().map(|t| t.len()).min().unwrap_or(1) - 1;
    let cells: Vec<(String, GridCell)> = delay_sweep()
        .into_iter()
        .filter(|c| depths.contains(&c.n_d))
        .map(|c| (format!("direct-nd{}", c.n_d), c))
        .collect();
    let fits = fit_cells(pool, &cells, data, cfg)?;
    fits.into_iter()
        .map(|f| {
            let portrait = phase_portrait(&f.model, &data.test, n_steps)?;
            Ok(DelayRow {
                n_d: f.n_d,
                test: f.test,
                portrait,
                wall_time_s: f.wall_time_s,
            })
        })
        .collect()
}

/// Whether portrait r² increases strictly from `n_d = 1` up to the best
/// depth in `4..=7`, and that depth.
pub fn portrait_trend(rows: &[DelayRow]) -> (bool, Option<usize>) {
    let r2 = |d: usize| rows.iter().find(|r| r.n_d == d).map(|r| r.portrait.r2);
    let best = (4..=7)
        .filter_map(|d| r2(d).map(|v| (d, v)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|b| b.0);
    let Some(best) = best else { return (false, None) };
    let seq: Option<Vec<f64>> = (1..=best).map(r2).collect();
    let increasing = seq.is_some_and(|s| s.windows(2).all(|w| w[1] > w[0]));
    (increasing, Some(best))
}

#[derive(Debug, Serialize)]
struct ReproSummary {
    study: &'static str,
    seed: u64,
    fits: Vec<MetricsJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closure_k_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closure_w_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theory_eigenvalues: Option<Vec<formats::ComplexJson>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eigenfunction_correlation: Option<Vec<PairJson>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delay_study: Option<Vec<DelayJson>>,
}

#[derive(Debug, Serialize)]
struct DelayJson {
    n_d: usize,
    metrics: MetricsJson,
    portrait_r2: f64,
}

/// Runs a study end to end and writes its artifacts into `out`.
pub fn run(ex: Example, seed: u64, cfg: &TrainConfig, pool: &rayon::ThreadPool, out: &Path) -> AppResult<()> {
    let data = study_data(ex, seed)?;
    formats::write_trajectories(&out.join("train.csv"), &data.train)?;
    formats::write_trajectories(&out.join("val.csv"), &data.val)?;
    formats::write_trajectories(&out.join("test.csv"), &data.test)?;
    formats::write_json(&out.join("spec.json"), &formats::SpecJson::from_spec(&protocol(ex).spec))?;

    let cells = match ex {
        Example::ActivatorRepressor => named_cells(ex, &["baseline", "direct", "sequential"]),
        _ => named_cells(ex, &[]),
    };
    let fits = fit_cells(pool, &cells, &data, cfg)?;
    for f in &fits {
        formats::write_model(&out.join("models").join(format!("{}.json", f.name)), &f.model)?;
        if let Some(r) = f.model.fit_report() {
            formats::write_training_log(&out.join("logs").join(format!("{}.csv", f.name)), r)?;
        }
    }
    let mut summary = ReproSummary {
        study: ex.name(),
        seed,
        fits: fits.iter().map(|f| MetricsJson::from(&f.test)).collect(),
        closure_k_error: None,
        closure_w_error: None,
        theory_eigenvalues: None,
        eigenfunction_correlation: None,
        delay_study: None,
    };

    match ex {
        Example::FiniteClosure => {
            let rec = example1_closure_recovery(&data.train)?;
            summary.closure_k_error = Some(rec.k_error);
            summary.closure_w_error = Some(rec.w_error);
            summary.theory_eigenvalues = Some(theory_eigenvalues(&data.train)?.into_iter().map(Into::into).collect());
            let seq = fits
                .iter()
                .find(|f| f.name == "sequential-nl5")
                .and_then(|f| f.model.as_koopman())
                .ok_or_else(|| AppError::Config("sequential model missing".into()))?;
            let grid = example1_grid(50)?;
            let pairs = compare_with_theory(seq, &grid)?;
            summary.eigenfunction_correlation = Some(pairs.iter().map(PairJson::from).collect());
            let d = modal_decomposition(seq)?;
            let field = eval_model_eigenfunctions(seq, &d, &grid)?;
            formats::write_eigenfunctions(&out.join("eigenfunctions_sequential.csv"), &field)?;
        }
        Example::ActivatorRepressor => {
            let rows = delay_study(pool, &[1, 2, 3, 4, 5, 6, 7], &data, cfg)?;
            for r in &rows {
                formats::write_portrait(&out.join(format!("portrait_nd{}.csv", r.n_d)), &r.portrait, &data.test)?;
            }
            summary.delay_study = Some(
                rows.iter()
                    .map(|r| DelayJson {
                        n_d: r.n_d,
                        metrics: MetricsJson::from(&r.test),
                        portrait_r2: r.portrait.r2,
                    })
                    .collect(),
            );
        }
        Example::Mems => {}
    }
    formats::write_json(&out.join("summary.json"), &summary)
}
