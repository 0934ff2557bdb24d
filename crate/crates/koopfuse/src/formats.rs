//! JSON and CSV representations of trajectories, system specs, models,
//! metrics and analysis outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use koopfuse_core::datasets::{AffineTransform, SnapshotSet};
use koopfuse_core::dictionary::{Dictionary, Mlp};
use koopfuse_core::evaluation::{CellResult, FittedModel, MetricsRecord, Portrait};
use koopfuse_core::linalg::C64;
use koopfuse_core::solvers::{
    BlockDims, FitReport, KoopmanModel, StageReport, StateSpaceModel, Structure,
};
use koopfuse_core::spectral::{PairCorrelation, SpectralDecomposition, EigenfunctionField};
use koopfuse_core::systems::{SystemSpec, Trajectory};

use crate::error::{AppError, AppResult};

/// Shortest text that round-trips, at most 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| AppError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| AppError::format(path, e))?;
    w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> AppResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::format(path, e))
}

fn csv_writer(path: &Path) -> AppResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => AppError::io(path, io),
        other => AppError::format(path, format!("{other:?}")),
    }
}

// ---------------------------------------------------------------- matrices

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(ncols_if_empty, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------- trajectories

/// `traj_id,k,x1..xn,y1..yp`; a final state without an output leaves the
/// output cells empty.
pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> AppResult<()> {
    let n = trajs.first().map_or(0, |t| t.state_dim());
    let p = trajs.first().map_or(0, |t| t.output_dim());
    let mut w = csv_writer(path)?;
    let mut header = vec!["traj_id".to_string(), "k".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=p).map(|i| format!("y{i}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for t in trajs {
        for (k, s) in t.states.iter().enumerate() {
            let mut rec = vec![t.traj_id.to_string(), k.to_string()];
            rec.extend(s.iter().map(|&v| fmt_f64(v)));
            match t.outputs.get(k) {
                Some(y) => rec.extend(y.iter().map(|&v| fmt_f64(v))),
                None => rec.extend(std::iter::repeat_n(String::new(), p)),
            }
            w.write_record(&rec).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_trajectories(path: &Path) -> AppResult<Vec<Trajectory>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let p = header.iter().filter(|h| h.starts_with('y')).count();
    if header.len() != 2 + n + p || header.get(0) != Some("traj_id") || header.get(1) != Some("k") {
        return Err(AppError::format(path, "expected header traj_id,k,x1..xn,y1..yp"));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let bad = |what: &str| AppError::format(path, format!("row {}: {what}", line + 2));
        let id: u64 = rec[0].parse().map_err(|_| bad("bad traj_id"))?;
        let k: usize = rec[1].parse().map_err(|_| bad("bad k"))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
        let x = (0..n).map(|i| parse(&rec[2 + i])).collect::<AppResult<Vec<f64>>>()?;
        let y_cells: Vec<&str> = (0..p).map(|i| &rec[2 + n + i]).collect();
        let y = if y_cells.iter().all(|c| c.trim().is_empty()) {
            None
        } else {
            Some(y_cells.iter().map(|c| parse(c)).collect::<AppResult<Vec<f64>>>()?)
        };
        let start_new = out.last().is_none_or(|t| t.traj_id != id);
        if start_new {
            if k != 0 {
                return Err(bad("trajectory must start at k = 0"));
            }
            out.push(Trajectory {
                traj_id: id,
                ic: x.clone(),
                states: Vec::new(),
                outputs: Vec::new(),
            });
        }
        let t = out.last_mut().expect("pushed above");
        if k != t.states.len() {
            return Err(bad("time indices must be consecutive"));
        }
        if t.outputs.len() != t.states.len() {
            return Err(bad("only the final state may lack an output"));
        }
        t.states.push(x);
        if let Some(y) = y {
            t.outputs.push(y);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- system spec

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpecJson {
    pub name: String,
    #[serde(default, skip_deserializing)]
    pub kind: String,
    #[serde(default, skip_deserializing)]
    pub state_dim: usize,
    #[serde(default, skip_deserializing)]
    pub output_dim: usize,
    pub sampling_time: Option<f64>,
    pub substeps: Option<usize>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SpecJson {
    pub fn from_spec(s: &SystemSpec) -> Self {
        Self {
            name: s.name().to_string(),
            kind: s.kind().as_str().to_string(),
            state_dim: s.state_dim(),
            output_dim: s.output_dim(),
            sampling_time: Some(s.sampling_time),
            substeps: Some(s.substeps),
            params: s
                .named_params()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    pub fn to_spec(&self) -> koopfuse_core::Result<SystemSpec> {
        SystemSpec::from_named(&self.name, &self.params, self.sampling_time, self.substeps)
    }
}

// ---------------------------------------------------------------- dictionary

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictNode {
    Identity {
        n: usize,
        #[serde(rename = "n_L", default)]
        n_l: usize,
    },
    Monomial {
        n: usize,
        #[serde(rename = "n_L", default)]
        n_l: usize,
        exponents: Vec<Vec<u32>>,
    },
    Neural {
        n: usize,
        #[serde(rename = "n_L", default)]
        n_l: usize,
        /// Layer widths, input first.
        architecture: Vec<usize>,
        params: Vec<f64>,
    },
    Concat {
        n: usize,
        #[serde(rename = "n_L", default)]
        n_l: usize,
        parts: Vec<DictNode>,
    },
    Precompose {
        n: usize,
        #[serde(rename = "n_L", default)]
        n_l: usize,
        matrix: Vec<Vec<f64>>,
        shift: Vec<f64>,
        inner: Box<DictNode>,
    },
    WithConstant {
        n: usize,
        #[serde(rename = "n_L", default)]
        n_l: usize,
        inner: Box<DictNode>,
    },
}

impl DictNode {
    pub fn from_dictionary(d: &Dictionary) -> Self {
        let n = d.input_dim();
        let n_l = d.output_dim();
        match d {
            Dictionary::Identity { n } => DictNode::Identity { n: *n, n_l },
            Dictionary::Monomial { n, exponents } => DictNode::Monomial {
                n: *n,
                n_l,
                exponents: exponents.clone(),
            },
            Dictionary::Neural(m) => DictNode::Neural {
                n,
                n_l,
                architecture: m.widths().to_vec(),
                params: m.params().to_vec(),
            },
            Dictionary::Concat(parts) => DictNode::Concat {
                n,
                n_l,
                parts: parts.iter().map(DictNode::from_dictionary).collect(),
            },
            Dictionary::Precompose { inner, matrix, shift } => DictNode::Precompose {
                n,
                n_l,
                matrix: matrix_rows(matrix),
                shift: shift.iter().copied().collect(),
                inner: Box::new(DictNode::from_dictionary(inner)),
            },
            Dictionary::WithConstant(inner) => DictNode::WithConstant {
                n,
                n_l,
                inner: Box::new(DictNode::from_dictionary(inner)),
            },
        }
    }

    pub fn to_dictionary(&self) -> Result<Dictionary, String> {
        let d = match self {
            DictNode::Identity { n, .. } => Dictionary::identity(*n),
            DictNode::Monomial { n, exponents, .. } => {
                koopfuse_core::dictionary::make_monomial(*n, exponents.clone()).map_err(|e| e.to_string())?
            }
            DictNode::Neural { architecture, params, .. } => Dictionary::Neural(
                Mlp::from_params(architecture.clone(), params.clone()).map_err(|e| e.to_string())?,
            ),
            DictNode::Concat { parts, .. } => Dictionary::Concat(
                parts.iter().map(|p| p.to_dictionary()).collect::<Result<_, _>>()?,
            ),
            DictNode::Precompose { matrix, shift, inner, .. } => Dictionary::Precompose {
                inner: Box::new(inner.to_dictionary()?),
                matrix: matrix_from_rows(matrix, 0)?,
                shift: DVector::from_vec(shift.clone()),
            },
            DictNode::WithConstant { inner, .. } => Dictionary::WithConstant(Box::new(inner.to_dictionary()?)),
        };
        let (n, n_l) = self.dims();
        if (n != 0 && d.input_dim() != n) || (n_l != 0 && d.output_dim() != n_l) {
            return Err(format!(
                "dictionary node declares n={n}, n_L={n_l} but evaluates {}→{}",
                d.input_dim(),
                d.output_dim()
            ));
        }
        Ok(d)
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            DictNode::Identity { n, n_l }
            | DictNode::Monomial { n, n_l, .. }
            | DictNode::Neural { n, n_l, .. }
            | DictNode::Concat { n, n_l, .. }
            | DictNode::Precompose { n, n_l, .. }
            | DictNode::WithConstant { n, n_l, .. } => (*n, *n_l),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DictionaryJson {
    #[serde(flatten)]
    pub root: DictNode,
    #[serde(default)]
    pub is_state_inclusive: bool,
    #[serde(default)]
    pub has_constant: bool,
}

impl DictionaryJson {
    pub fn from_dictionary(d: &Dictionary) -> Self {
        Self {
            root: DictNode::from_dictionary(d),
            is_state_inclusive: d.is_state_inclusive(),
            has_constant: d.has_constant(),
        }
    }
}

// ---------------------------------------------------------------- transforms, reports

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TransformJson {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl TransformJson {
    pub fn from_transform(t: &AffineTransform) -> Self {
        Self {
            p: matrix_rows(&t.p),
            b: t.b.iter().copied().collect(),
            q: matrix_rows(&t.q),
            c: t.c.iter().copied().collect(),
        }
    }

    pub fn to_transform(&self) -> Result<AffineTransform, String> {
        AffineTransform::new(
            matrix_from_rows(&self.p, 0)?,
            DVector::from_vec(self.b.clone()),
            matrix_from_rows(&self.q, 0)?,
            DVector::from_vec(self.c.clone()),
        )
        .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StageJson {
    pub stage: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn stage_name(s: &str) -> Result<&'static str, String> {
    Ok(match s {
        "direct" => "direct",
        "state" => "state",
        "output" => "output",
        "closure" => "closure",
        "state-space" => "state-space",
        other => return Err(format!("unknown training stage '{other}'")),
    })
}

fn report_json(r: &FitReport) -> Vec<StageJson> {
    r.stages
        .iter()
        .map(|s| StageJson {
            stage: s.stage.to_string(),
            epochs_run: s.epochs_run,
            best_epoch: s.best_epoch,
            train_loss: s.train_loss,
            val_loss: s.val_loss,
        })
        .collect()
}

fn report_from_json(v: &[StageJson]) -> Result<FitReport, String> {
    Ok(FitReport {
        stages: v
            .iter()
            .map(|s| {
                Ok(StageReport {
                    stage: stage_name(&s.stage)?,
                    epochs_run: s.epochs_run,
                    best_epoch: s.best_epoch,
                    train_loss: s.train_loss,
                    val_loss: s.val_loss,
                    log: Vec::new(),
                })
            })
            .collect::<Result<_, String>>()?,
    })
}

/// Per-epoch losses of every stage: `stage,epoch,train_loss,val_loss`.
pub fn write_training_log(path: &Path, r: &FitReport) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["stage", "epoch", "train_loss", "val_loss"]).map_err(csv_err(path))?;
    for s in &r.stages {
        for row in &s.log {
            w.write_record([
                s.stage.to_string(),
                row.epoch.to_string(),
                fmt_f64(row.train_loss),
                fmt_f64(row.val_loss),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

// ---------------------------------------------------------------- models

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlockDimsJson {
    pub n: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub n_xy: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "model_type", rename_all = "snake_case")]
pub enum ModelJson {
    Koopman {
        #[serde(rename = "K")]
        k: Vec<Vec<f64>>,
        #[serde(rename = "W_h")]
        w_h: Vec<Vec<f64>>,
        dictionary: DictionaryJson,
        transform: Option<TransformJson>,
        structure: String,
        block_dims: Option<BlockDimsJson>,
        #[serde(default = "one")]
        delay: usize,
        fit_report: Option<Vec<StageJson>>,
    },
    StateSpace {
        n: usize,
        p: usize,
        architecture: Vec<usize>,
        params: Vec<f64>,
        transform: Option<TransformJson>,
        fit_report: Option<Vec<StageJson>>,
    },
}

fn one() -> usize {
    1
}

impl ModelJson {
    pub fn from_koopman(m: &KoopmanModel) -> Self {
        ModelJson::Koopman {
            k: matrix_rows(&m.k),
            w_h: matrix_rows(&m.w_h),
            dictionary: DictionaryJson::from_dictionary(&m.dictionary),
            transform: m.transform.as_ref().map(TransformJson::from_transform),
            structure: m.structure.as_str().to_string(),
            block_dims: m.block_dims.map(|d| BlockDimsJson {
                n: d.n,
                n_x: d.n_x,
                n_y: d.n_y,
                n_xy: d.n_xy,
            }),
            delay: m.delay,
            fit_report: m.fit_report.as_ref().map(report_json),
        }
    }

    pub fn from_fitted(m: &FittedModel) -> Self {
        match m {
            FittedModel::Koopman(k) => Self::from_koopman(k),
            FittedModel::StateSpace(s) => ModelJson::StateSpace {
                n: s.n,
                p: s.p,
                architecture: s.net.widths().to_vec(),
                params: s.net.params().to_vec(),
                transform: s.transform.as_ref().map(TransformJson::from_transform),
                fit_report: s.fit_report.as_ref().map(report_json),
            },
        }
    }

    pub fn to_fitted(&self) -> Result<FittedModel, String> {
        match self {
            ModelJson::Koopman {
                k,
                w_h,
                dictionary,
                transform,
                structure,
                block_dims,
                delay,
                fit_report,
            } => {
                let dict = dictionary.root.to_dictionary()?;
                let nl = dict.output_dim();
                let k = matrix_from_rows(k, nl)?;
                let w = matrix_from_rows(w_h, nl)?;
                let mut m = KoopmanModel::new(k, w, dict).map_err(|e| e.to_string())?;
                m.structure = match structure.as_str() {
                    "dense" => Structure::Dense,
                    "sequential-blocks" => Structure::SequentialBlocks,
                    other => return Err(format!("unknown structure '{other}'")),
                };
                m.block_dims = block_dims.map(|d| BlockDims {
                    n: d.n,
                    n_x: d.n_x,
                    n_y: d.n_y,
                    n_xy: d.n_xy,
                });
                if let Some(t) = transform {
                    m = m.with_transform(t.to_transform()?).map_err(|e| e.to_string())?;
                }
                if *delay == 0 {
                    return Err("delay must be at least 1".into());
                }
                m.delay = *delay;
                m.fit_report = fit_report.as_deref().map(report_from_json).transpose()?;
                m.validate().map_err(|e| e.to_string())?;
                Ok(FittedModel::Koopman(m))
            }
            ModelJson::StateSpace {
                n,
                p,
                architecture,
                params,
                transform,
                fit_report,
            } => {
                let net = Mlp::from_params(architecture.clone(), params.clone()).map_err(|e| e.to_string())?;
                if net.input_dim() != *n || net.output_dim() != n + p {
                    return Err("state-space network shape does not match n and p".into());
                }
                Ok(FittedModel::StateSpace(StateSpaceModel {
                    net,
                    n: *n,
                    p: *p,
                    transform: transform.as_ref().map(|t| t.to_transform()).transpose()?,
                    fit_report: fit_report.as_deref().map(report_from_json).transpose()?,
                }))
            }
        }
    }
}

pub fn write_model(path: &Path, m: &FittedModel) -> AppResult<()> {
    write_json(path, &ModelJson::from_fitted(m))
}

pub fn read_model(path: &Path) -> AppResult<FittedModel> {
    let j: ModelJson = read_json(path)?;
    j.to_fitted().map_err(|e| AppError::format(path, e))
}

pub fn read_koopman(path: &Path) -> AppResult<KoopmanModel> {
    match read_model(path)? {
        FittedModel::Koopman(m) => Ok(m),
        FittedModel::StateSpace(_) => Err(AppError::format(path, "expected a Koopman model")),
    }
}

// ---------------------------------------------------------------- metrics and analyses

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsJson {
    pub model_id: String,
    pub dataset_id: String,
    pub r2_x_1step: f64,
    pub r2_x_nstep: f64,
    pub r2_y: f64,
    pub horizon: usize,
}

impl From<&MetricsRecord> for MetricsJson {
    fn from(m: &MetricsRecord) -> Self {
        Self {
            model_id: m.model_id.clone(),
            dataset_id: m.dataset_id.clone(),
            r2_x_1step: m.r2_x_1step,
            r2_x_nstep: m.r2_x_nstep,
            r2_y: m.r2_y,
            horizon: m.horizon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComplexJson {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for ComplexJson {
    fn from(z: C64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairJson {
    pub index_a: usize,
    pub index_b: usize,
    pub lambda_a: ComplexJson,
    pub lambda_b: ComplexJson,
    pub rho: Option<f64>,
}

impl From<&PairCorrelation> for PairJson {
    fn from(p: &PairCorrelation) -> Self {
        Self {
            index_a: p.index_a,
            index_b: p.index_b,
            lambda_a: p.lambda_a.into(),
            lambda_b: p.lambda_b.into(),
            rho: p.rho,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpectraJson {
    pub eigenvalues: Vec<ComplexJson>,
    pub condition: f64,
    /// Columns are modes; entries as `[re, im]`.
    pub modes: Vec<Vec<[f64; 2]>>,
    pub eigenfunction_coefficients: Vec<Vec<[f64; 2]>>,
    pub comparison: Option<Vec<PairJson>>,
}

fn cmatrix_rows(m: &nalgebra::DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

impl SpectraJson {
    pub fn new(d: &SpectralDecomposition, comparison: Option<&[PairCorrelation]>) -> Self {
        Self {
            eigenvalues: d.eigenvalues.iter().map(|&z| z.into()).collect(),
            condition: d.condition,
            modes: cmatrix_rows(&d.modes),
            eigenfunction_coefficients: cmatrix_rows(&d.eigfun_coeffs),
            comparison: comparison.map(|c| c.iter().map(PairJson::from).collect()),
        }
    }
}

/// `x1..xn, phi_1_re, phi_1_im, …` per grid point.
pub fn write_eigenfunctions(path: &Path, f: &EigenfunctionField) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    let n = f.grid.nrows();
    let m = f.values.nrows();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    for i in 1..=m {
        header.push(format!("phi_{i}_re"));
        header.push(format!("phi_{i}_im"));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for j in 0..f.grid.ncols() {
        let mut rec: Vec<String> = f.grid.column(j).iter().map(|&v| fmt_f64(v)).collect();
        for i in 0..m {
            rec.push(fmt_f64(f.values[(i, j)].re));
            rec.push(fmt_f64(f.values[(i, j)].im));
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// One row per grid cell; wall time is the only nondeterministic column and
/// comes last.
pub fn write_grid_results(path: &Path, rows: &[CellResult]) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "index",
        "algorithm",
        "hyperparameters",
        "n_d",
        "param_count",
        "r2_x_1step",
        "r2_x_nstep",
        "r2_y",
        "train_loss",
        "val_loss",
        "error",
        "wall_time_s",
    ])
    .map_err(csv_err(path))?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.algorithm.to_string(),
            r.label.clone(),
            r.n_d.to_string(),
            r.param_count.to_string(),
            opt(r.val.as_ref().map(|m| m.r2_x_1step)),
            opt(r.val.as_ref().map(|m| m.r2_x_nstep)),
            opt(r.val.as_ref().map(|m| m.r2_y)),
            opt(r.train_loss),
            opt(r.val_loss),
            r.error.clone().unwrap_or_default(),
            r.wall_time_s.map(|t| format!("{t:.3}")).unwrap_or_default(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// `source,ic_id,step,x1..xn` for the model rollouts and the reference.
pub fn write_portrait(path: &Path, p: &Portrait, reference: &[Trajectory]) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    let n = reference.first().map_or(0, |t| t.state_dim());
    let mut header = vec!["source".to_string(), "ic_id".to_string(), "step".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (source, sets) in [
        ("model", p.rollouts.clone()),
        ("reference", reference.iter().map(|t| t.states[..p.rollouts[0].len()].to_vec()).collect()),
    ] {
        for (t, states) in reference.iter().zip(&sets) {
            for (k, s) in states.iter().enumerate() {
                let mut rec = vec![source.to_string(), t.traj_id.to_string(), k.to_string()];
                rec.extend(s.iter().map(|&v| fmt_f64(v)));
                w.write_record(&rec).map_err(csv_err(path))?;
            }
        }
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> AppResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| fmt_f64(v))).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SnapshotSidecar {
    pub state_dim: usize,
    pub output_dim: usize,
    pub n_columns: usize,
    /// `[traj_id, k]` per column.
    pub columns: Vec<(u64, usize)>,
    pub transform: Option<TransformJson>,
}

/// `xp.csv`, `xf.csv`, `yp.csv` and `snapshots.json` in `dir`.
pub fn write_snapshots(dir: &Path, s: &SnapshotSet, t: Option<&AffineTransform>) -> AppResult<()> {
    write_matrix_csv(&dir.join("xp.csv"), &s.xp)?;
    write_matrix_csv(&dir.join("xf.csv"), &s.xf)?;
    write_matrix_csv(&dir.join("yp.csv"), &s.yp)?;
    write_json(
        &dir.join("snapshots.json"),
        &SnapshotSidecar {
            state_dim: s.state_dim(),
            output_dim: s.output_dim(),
            n_columns: s.len(),
            columns: s.columns.iter().map(|c| (c.traj_id, c.k)).collect(),
            transform: t.map(TransformJson::from_transform),
        },
    )
}
