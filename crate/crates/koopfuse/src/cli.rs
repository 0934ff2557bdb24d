//! Command-line surface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use koopfuse_core::datasets::{self, build_snapshots, AffineTransform};
use koopfuse_core::dictionary::{append_constant, make_monomial, state_monomials_plus, Dictionary};
use koopfuse_core::evaluation::{evaluate_model, fit_model, phase_portrait, Algorithm, FittedModel, GridCell};
use koopfuse_core::experiments::{example1_dictionary, protocol, Example};
use koopfuse_core::solvers::{BaselineHyper, DirectHyper, SequentialHyper};
use koopfuse_core::spectral::{apply_affine_transform, eval_model_eigenfunctions, lattice, modal_decomposition, to_raw_coordinates};
use koopfuse_core::systems::{steps_for_horizon, IcBox, Trajectory};

use crate::config::{resolve_seed, FilesConfig, HyperConfig, RunConfig, TrainSection, HYPER_KEYS};
use crate::drivers;
use crate::error::{AppError, AppResult};
use crate::formats::{self, MetricsJson, SpecJson, SpectraJson, TransformJson};
use crate::repro;

#[derive(Debug, Parser)]
#[command(name = "koopfuse", version, about = "Output-constrained Koopman operator learning")]
pub struct Cli {
    /// Global seed; falls back to the config file, then KOOPFUSE_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for grid search and data generation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a benchmark system into a trajectory CSV.
    Simulate(SimulateArgs),
    /// Fit a model to trajectory data.
    Fit(FitArgs),
    /// Score a model on trajectory data.
    Evaluate(EvaluateArgs),
    /// Eigenvalues, modes and eigenfunctions of a Koopman model.
    Spectra(SpectraArgs),
    /// Rewrite a Koopman model in new affine coordinates.
    Transform(TransformArgs),
    /// Model rollouts against reference trajectories.
    Portrait(PortraitArgs),
    /// Train a hyperparameter grid and select on validation data.
    Gridsearch(GridArgs),
    /// Run a benchmark study end to end.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// finite-closure, mems or actrep.
    #[arg(long)]
    pub system: Option<String>,
    /// System parameter override, repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Simulated seconds per trajectory.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Sampling interval in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Sampling intervals per trajectory; overrides --horizon.
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ic_lower: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub ic_upper: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write seeded train/val/test thirds.
    #[arg(long)]
    pub split: bool,
    /// Also export the snapshot matrices of the whole dataset.
    #[arg(long)]
    pub snapshots: bool,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub nxl: Option<usize>,
    #[arg(long)]
    pub nxn: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nyl: Option<usize>,
    #[arg(long)]
    pub nyn: Option<usize>,
    #[arg(long)]
    pub nxy: Option<usize>,
    #[arg(long)]
    pub nxyl: Option<usize>,
    #[arg(long)]
    pub nxyn: Option<usize>,
    /// Time-delay depth.
    #[arg(long)]
    pub nd: Option<usize>,
    /// E-DMD dictionary: identity, example1 or poly<degree>.
    #[arg(long)]
    pub dict: Option<String>,
}

impl HyperArgs {
    fn to_config(&self) -> HyperConfig {
        HyperConfig {
            n_x: self.nx,
            n_xl: self.nxl,
            n_xn: self.nxn,
            n_y: self.ny,
            n_yl: self.nyl,
            n_yn: self.nyn,
            n_xy: self.nxy,
            n_xyl: self.nxyl,
            n_xyn: self.nxyn,
            n_d: self.nd,
            dictionary: self.dict.clone(),
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size; 0 for full-batch gradients.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Validation checks without improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub warm_start_ridge: Option<f64>,
    #[arg(long)]
    pub gradient_clip: Option<f64>,
}

impl TrainArgs {
    fn to_section(&self) -> TrainSection {
        TrainSection {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            warm_start_ridge: self.warm_start_ridge,
            gradient_clip: self.gradient_clip,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Trajectory CSV split into seeded train/val/test thirds.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training trajectories (with --val, instead of --data).
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// edmd, direct, sequential or baseline.
    #[arg(long)]
    pub algo: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Model JSON path; defaults to <out-dir>/model.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Test trajectories.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rollout length cap; defaults to the full trajectory.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Metrics JSON path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectraArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Trajectories whose state range sets the default grid.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub grid_lower: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_upper: Option<Vec<f64>>,
    /// Lattice points per axis.
    #[arg(long, default_value_t = 50)]
    pub grid_n: usize,
    /// Second model to correlate eigenfunctions against.
    #[arg(long, conflicts_with = "compare_theory")]
    pub compare: Option<PathBuf>,
    /// Correlate against the exact finite-closure operator.
    #[arg(long)]
    pub compare_theory: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Transform JSON with fields P, b, Q, c.
    #[arg(long, conflicts_with_all = ["identity", "to_raw"])]
    pub transform: Option<PathBuf>,
    /// Apply the identity transform (appends the constant observable).
    #[arg(long, conflicts_with = "to_raw")]
    pub identity: bool,
    /// Undo the model's stored transform.
    #[arg(long)]
    pub to_raw: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PortraitArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Reference trajectories; rollouts start from their first states.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Steps per rollout; defaults to the shortest reference.
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Use only the first N reference trajectories.
    #[arg(long)]
    pub n_ic: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub algo: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Values of one hyperparameter, repeatable, e.g. `n_x=1,2,3`.
    #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
    pub grid: Vec<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// example1, mems or actrep.
    pub study: String,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Shared state of one invocation.
struct Ctx {
    cfg: RunConfig,
    seed: u64,
    jobs: usize,
}

impl Ctx {
    fn out_dir(&self, flag: &Option<PathBuf>) -> AppResult<PathBuf> {
        flag.clone()
            .or_else(|| self.cfg.output_dir.clone())
            .ok_or_else(|| AppError::Config("an output directory is required (--out-dir)".into()))
    }

    fn files(&self) -> FilesConfig {
        self.cfg.files()
    }

    fn train(&self, flags: &TrainArgs) -> AppResult<koopfuse_core::solvers::TrainConfig> {
        flags.to_section().or(self.cfg.train_section()).resolve(self.seed)
    }

    fn pool(&self) -> AppResult<rayon::ThreadPool> {
        drivers::pool(self.jobs)
    }
}

pub fn run(cli: Cli) -> AppResult<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let file_seed = cfg.dataset.as_ref().and_then(|d| d.seed);
    let seed = match cli.seed.or(file_seed) {
        Some(s) => s,
        None => resolve_seed(None)?,
    };
    let ctx = Ctx {
        cfg,
        seed,
        jobs: cli.jobs,
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Spectra(a) => spectra(&ctx, a),
        Command::Transform(a) => transform(&ctx, a),
        Command::Portrait(a) => portrait(&ctx, a),
        Command::Gridsearch(a) => gridsearch(&ctx, a),
        Command::Repro(a) => repro_cmd(&ctx, a),
    }
}

fn require_path(flag: &Option<PathBuf>, file: Option<PathBuf>, what: &str) -> AppResult<PathBuf> {
    flag.clone()
        .or(file)
        .ok_or_else(|| AppError::Config(format!("missing required input: {what}")))
}

fn example_for(system: &str) -> Option<Example> {
    match system {
        "finite-closure" => Some(Example::FiniteClosure),
        "mems" => Some(Example::Mems),
        "actrep" => Some(Example::ActivatorRepressor),
        _ => None,
    }
}

fn parse_params(items: &[String]) -> AppResult<BTreeMap<String, f64>> {
    items
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("expected NAME=VALUE, got '{s}'")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| AppError::Config(format!("parameter '{k}' is not a number")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> AppResult<()> {
    let sys_cfg = ctx.cfg.system.clone().unwrap_or_default();
    let ds = ctx.cfg.dataset();
    let name = a
        .system
        .clone()
        .or_else(|| (!sys_cfg.name.is_empty()).then(|| sys_cfg.name.clone()))
        .ok_or_else(|| AppError::Config("missing required input: --system".into()))?;
    let mut params = sys_cfg.params.clone();
    params.extend(parse_params(&a.params)?);
    let spec = koopfuse_core::systems::SystemSpec::from_named(
        &name,
        &params,
        a.dt.or(sys_cfg.sampling_time),
        a.substeps.or(sys_cfg.substeps),
    )?;
    let preset = example_for(&name).map(protocol);
    let n_steps = match (a.n_steps.or(ds.n_steps), a.horizon.or(ds.horizon)) {
        (Some(n), _) => n,
        (None, Some(h)) => steps_for_horizon(h, spec.sampling_time)?,
        (None, None) => preset.as_ref().map_or(30, |p| p.n_steps),
    };
    let ic_box = match (a.ic_lower.clone().or(ds.ic_lower), a.ic_upper.clone().or(ds.ic_upper)) {
        (Some(l), Some(u)) => IcBox::new(l, u)?,
        (None, None) => preset
            .as_ref()
            .map(|p| p.ic_box.clone())
            .ok_or_else(|| AppError::Config("initial-condition box required".into()))?,
        _ => return Err(AppError::Config("give both --ic-lower and --ic-upper".into())),
    };
    let n_traj = a.n_traj.or(ds.n_traj).unwrap_or(300);
    let out = ctx.out_dir(&a.out_dir)?;
    let data = drivers::generate_dataset(&ctx.pool()?, &spec, n_traj, &ic_box, n_steps, ctx.seed)?;
    for r in &data.rejected {
        log::warn!("trajectory {} rejected: {}", r.traj_id, r.reason);
    }
    formats::write_trajectories(&out.join("trajectories.csv"), &data.trajectories)?;
    formats::write_json(&out.join("spec.json"), &SpecJson::from_spec(&spec))?;
    if !data.rejected.is_empty() {
        let rej: Vec<_> = data
            .rejected
            .iter()
            .map(|r| serde_json::json!({"traj_id": r.traj_id, "reason": r.reason}))
            .collect();
        formats::write_json(&out.join("rejected.json"), &rej)?;
    }
    if a.split {
        let (tr, va, te) = datasets::split(&data.trajectories, ctx.seed)?;
        formats::write_trajectories(&out.join("train.csv"), &tr)?;
        formats::write_trajectories(&out.join("val.csv"), &va)?;
        formats::write_trajectories(&out.join("test.csv"), &te)?;
    }
    if a.snapshots {
        let s = build_snapshots(&data.trajectories)?;
        formats::write_snapshots(&out.join("snapshots"), &s, None)?;
    }
    println!(
        "{} trajectories of {} samples written to {}",
        data.trajectories.len(),
        n_steps + 1,
        out.display()
    );
    Ok(())
}

/// Train and validation trajectories from explicit files or a seeded split.
fn load_train_val(ctx: &Ctx, d: &DataArgs) -> AppResult<(Vec<Trajectory>, Vec<Trajectory>)> {
    let f = ctx.files();
    let train = d.train.clone().or(f.train);
    let val = d.val.clone().or(f.val);
    if let (Some(t), Some(v)) = (&train, &val) {
        return Ok((formats::read_trajectories(t)?, formats::read_trajectories(v)?));
    }
    let all = require_path(&d.data, f.data, "--data, or --train with --val")?;
    let (tr, va, _) = datasets::split(&formats::read_trajectories(&all)?, ctx.seed)?;
    Ok((tr, va))
}

fn edmd_dictionary(name: &str, n: usize) -> AppResult<Dictionary> {
    if name == "identity" {
        return Ok(Dictionary::identity(n));
    }
    if name == "example1" {
        return Ok(example1_dictionary());
    }
    let deg: u32 = name
        .strip_prefix("poly")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| AppError::Config(format!("unknown dictionary '{name}'")))?;
    let mut extra = Vec::new();
    for total in 2..=deg {
        push_exponents(n, total, &mut Vec::new(), &mut extra);
    }
    Ok(append_constant(make_monomial(n, state_monomials_plus(n, &extra))?)?)
}

fn push_exponents(n: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == n {
        let mut e = prefix.clone();
        e.push(remaining);
        out.push(e);
        return;
    }
    for k in (0..=remaining).rev() {
        prefix.push(k);
        push_exponents(n, remaining - k, prefix, out);
        prefix.pop();
    }
}

fn algorithm(name: &str, h: &HyperConfig, state_dim: usize) -> AppResult<Algorithm> {
    Ok(match name {
        "edmd" => Algorithm::Edmd(edmd_dictionary(
            h.dictionary.as_deref().unwrap_or("identity"),
            state_dim * h.n_d.unwrap_or(1),
        )?),
        "direct" => Algorithm::Direct(DirectHyper {
            n_x: h.require("n_x")?,
            n_xl: h.require("n_xl")?,
            n_xn: h.require("n_xn")?,
        }),
        "sequential" => Algorithm::Sequential(SequentialHyper {
            n_x: h.require("n_x")?,
            n_xl: h.require("n_xl")?,
            n_xn: h.require("n_xn")?,
            n_y: h.require("n_y")?,
            n_yl: h.require("n_yl")?,
            n_yn: h.require("n_yn")?,
            n_xy: h.require("n_xy")?,
            n_xyl: h.require("n_xyl")?,
            n_xyn: h.require("n_xyn")?,
        }),
        "baseline" => Algorithm::Baseline(BaselineHyper {
            n_xl: h.require("n_xl")?,
            n_xn: h.require("n_xn")?,
        }),
        other => return Err(AppError::Config(format!("unknown algorithm '{other}'"))),
    })
}

fn algo_name(ctx: &Ctx, flag: &Option<String>) -> AppResult<String> {
    flag.clone()
        .or_else(|| ctx.cfg.algorithm.clone())
        .ok_or_else(|| AppError::Config("missing required input: --algo".into()))
}

fn fit(ctx: &Ctx, a: &FitArgs) -> AppResult<()> {
    let name = algo_name(ctx, &a.algo)?;
    let h = a.hyper.to_config().or(ctx.cfg.hyper());
    let tc = ctx.train(&a.train)?;
    let out = match &a.out {
        Some(p) => p.clone(),
        None => ctx.out_dir(&a.out_dir)?.join("model.json"),
    };
    let (train, val) = load_train_val(ctx, &a.data)?;
    let n = train.first().map_or(0, |t| t.state_dim());
    let algo = algorithm(&name, &h, n)?;
    let n_d = h.n_d.unwrap_or(1);
    let model = fit_model(&algo, &train, &val, n_d, &tc)?;
    formats::write_model(&out, &model)?;
    if let Some(r) = model.fit_report() {
        formats::write_training_log(&out.with_file_name("training_log.csv"), r)?;
    }
    let mut m = evaluate_model(&model, &val, None)?;
    m.model_id = out.display().to_string();
    m.dataset_id = "validation".into();
    println!("{}", serde_json::to_string_pretty(&MetricsJson::from(&m)).expect("plain struct"));
    Ok(())
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> AppResult<()> {
    let f = ctx.files();
    let model_path = require_path(&a.model, f.model, "--model")?;
    let data_path = require_path(&a.data, f.test.or(f.data), "--data")?;
    let model = formats::read_model(&model_path)?;
    let test = formats::read_trajectories(&data_path)?;
    let mut m = evaluate_model(&model, &test, a.horizon)?;
    m.model_id = model_path.display().to_string();
    m.dataset_id = data_path.display().to_string();
    let j = MetricsJson::from(&m);
    match &a.out {
        Some(p) => formats::write_json(p, &j)?,
        None => println!("{}", serde_json::to_string_pretty(&j).expect("plain struct")),
    }
    Ok(())
}

fn koopman(m: FittedModel, path: &Path) -> AppResult<koopfuse_core::solvers::KoopmanModel> {
    match m {
        FittedModel::Koopman(k) => Ok(k),
        FittedModel::StateSpace(_) => Err(AppError::Config(format!(
            "{} is a state-space model; spectra need a Koopman model",
            path.display()
        ))),
    }
}

fn data_bounds(trajs: &[Trajectory]) -> (Vec<f64>, Vec<f64>) {
    let n = trajs.first().map_or(0, |t| t.state_dim());
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for s in trajs.iter().flat_map(|t| &t.states) {
        for i in 0..n {
            lo[i] = lo[i].min(s[i]);
            hi[i] = hi[i].max(s[i]);
        }
    }
    (lo, hi)
}

fn spectra(ctx: &Ctx, a: &SpectraArgs) -> AppResult<()> {
    let f = ctx.files();
    let path = require_path(&a.model, f.model, "--model")?;
    let model = koopman(formats::read_model(&path)?, &path)?;
    let out = ctx.out_dir(&a.out_dir)?;
    let (lower, upper) = match (&a.grid_lower, &a.grid_upper, a.data.clone().or(f.data)) {
        (Some(l), Some(u), _) => (l.clone(), u.clone()),
        (None, None, Some(d)) if model.delay <= 1 => data_bounds(&formats::read_trajectories(&d)?),
        (None, None, None) if a.compare_theory => {
            let b = protocol(Example::FiniteClosure).ic_box;
            (b.lower, b.upper)
        }
        _ => {
            return Err(AppError::Config(
                "grid bounds required: --grid-lower with --grid-upper, or --data".into(),
            ))
        }
    };
    let grid = lattice(&lower, &upper, a.grid_n)?;
    let decomp = modal_decomposition(&model)?;
    let field = eval_model_eigenfunctions(&model, &decomp, &grid)?;
    formats::write_eigenfunctions(&out.join("eigenfunctions.csv"), &field)?;
    let comparison = if a.compare_theory {
        Some(repro::compare_with_theory(&model, &grid)?)
    } else if let Some(other) = &a.compare {
        let b = koopman(formats::read_model(other)?, other)?;
        Some(repro::compare_models(&model, &b, &grid)?)
    } else {
        None
    };
    formats::write_json(&out.join("spectra.json"), &SpectraJson::new(&decomp, comparison.as_deref()))?;
    if let Some(c) = &comparison {
        for p in c {
            println!(
                "{:>9.4}{:+.4}i  {:>9.4}{:+.4}i  rho {}",
                p.lambda_a.re,
                p.lambda_a.im,
                p.lambda_b.re,
                p.lambda_b.im,
                p.rho.map_or("n/a".into(), |r| format!("{r:.4}"))
            );
        }
    }
    Ok(())
}

fn transform(ctx: &Ctx, a: &TransformArgs) -> AppResult<()> {
    let f = ctx.files();
    let path = require_path(&a.model, f.model, "--model")?;
    let model = koopman(formats::read_model(&path)?, &path)?;
    let out = if a.to_raw {
        to_raw_coordinates(&model)?
    } else {
        let t = if a.identity {
            AffineTransform::identity(model.state_dim(), model.output_dim())
        } else {
            let tp = a
                .transform
                .as_ref()
                .ok_or_else(|| AppError::Config("give --transform, --identity or --to-raw".into()))?;
            let j: TransformJson = formats::read_json(tp)?;
            j.to_transform().map_err(|e| AppError::format(tp, e))?
        };
        apply_affine_transform(&model, &t)?
    };
    formats::write_model(&a.out, &FittedModel::Koopman(out))
}

fn portrait(ctx: &Ctx, a: &PortraitArgs) -> AppResult<()> {
    let f = ctx.files();
    let path = require_path(&a.model, f.model, "--model")?;
    let data = require_path(&a.data, f.test.or(f.data), "--data")?;
    let model = formats::read_model(&path)?;
    let mut reference = formats::read_trajectories(&data)?;
    if let Some(n) = a.n_ic {
        reference.truncate(n);
    }
    let n_steps = a
        .n_steps
        .unwrap_or_else(|| reference.iter().map(|t| t.len()).min().unwrap_or(1) - 1);
    let out = ctx.out_dir(&a.out_dir)?;
    let p = phase_portrait(&model, &reference, n_steps)?;
    formats::write_portrait(&out.join("portrait.csv"), &p, &reference)?;
    formats::write_json(
        &out.join("portrait.json"),
        &serde_json::json!({"r2": p.r2, "delay": p.delay, "n_steps": n_steps, "n_ic": reference.len()}),
    )?;
    println!("portrait r2 {:.6}", p.r2);
    Ok(())
}

fn parse_grid(items: &[String], file: &BTreeMap<String, Vec<usize>>) -> AppResult<BTreeMap<String, Vec<usize>>> {
    let mut g = file.clone();
    for s in items {
        let (k, vs) = s
            .split_once('=')
            .ok_or_else(|| AppError::Config(format!("expected KEY=V1,V2,..., got '{s}'")))?;
        let k = k.trim();
        if !HYPER_KEYS.contains(&k) {
            return Err(AppError::Config(format!("unknown grid key '{k}'")));
        }
        let vals = vs
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| AppError::Config(format!("grid values for '{k}' must be integers")))?;
        g.insert(k.to_string(), vals);
    }
    Ok(g)
}

/// Cartesian product of the grid over `base`, in key order with the last key
/// varying fastest.
fn expand_grid(base: &HyperConfig, grid: &BTreeMap<String, Vec<usize>>) -> Vec<HyperConfig> {
    let mut out = vec![base.clone()];
    for (k, vals) in grid {
        out = out
            .into_iter()
            .flat_map(|h| {
                vals.iter().map(move |&v| {
                    let mut h = h.clone();
                    h.set(k, v);
                    h
                })
            })
            .collect();
    }
    out
}

fn gridsearch(ctx: &Ctx, a: &GridArgs) -> AppResult<()> {
    let name = algo_name(ctx, &a.algo)?;
    let base = a.hyper.to_config().or(ctx.cfg.hyper());
    let file_grid = ctx.cfg.grid.clone().unwrap_or_default().values;
    let grid = parse_grid(&a.grid, &file_grid)?;
    let tc = ctx.train(&a.train)?;
    let out = ctx.out_dir(&a.out_dir)?;
    let (train, val) = load_train_val(ctx, &a.data)?;
    let n = train.first().map_or(0, |t| t.state_dim());
    let cells = expand_grid(&base, &grid)
        .iter()
        .map(|h| {
            Ok(GridCell {
                algorithm: algorithm(&name, h, n)?,
                n_d: h.n_d.unwrap_or(1),
            })
        })
        .collect::<AppResult<Vec<_>>>()?;
    let res = drivers::grid_search(&ctx.pool()?, &cells, &train, &val, &tc);
    formats::write_grid_results(&out.join("results.csv"), &res.table)?;
    match (res.best, &res.best_model) {
        (Some(i), Some(m)) => {
            formats::write_model(&out.join("best_model.json"), m)?;
            let row = &res.table[i];
            println!("best cell {i}: {} {} n_d={} score {:.6}", row.algorithm, row.label, row.n_d, row.score().unwrap_or(f64::NAN));
            Ok(())
        }
        _ => Err(AppError::Numerical(koopfuse_core::Error::InsufficientData(
            "every grid cell failed".into(),
        ))),
    }
}

fn repro_cmd(ctx: &Ctx, a: &ReproArgs) -> AppResult<()> {
    let ex = Example::parse(&a.study).map_err(|e| AppError::Config(e.to_string()))?;
    let section = a
        .train
        .to_section()
        .or(ctx.cfg.train_section())
        .or(repro::default_budget(ex));
    let tc = section.resolve(ctx.seed)?;
    let out = ctx.out_dir(&a.out_dir)?;
    repro::run(ex, ctx.seed, &tc, &ctx.pool()?, &out)?;
    println!("{} artifacts written to {}", ex.name(), out.display());
    Ok(())
}
