//! Strict JSON run configuration. Every section is optional; command-line
//! flags take precedence over file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use koopfuse_core::solvers::TrainConfig;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<SystemConfig>,
    pub dataset: Option<DatasetConfig>,
    pub algorithm: Option<String>,
    pub hyperparameters: Option<HyperConfig>,
    pub train: Option<TrainSection>,
    pub output_dir: Option<PathBuf>,
    pub files: Option<FilesConfig>,
    pub grid: Option<GridConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub sampling_time: Option<f64>,
    pub substeps: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_traj: Option<usize>,
    pub seed: Option<u64>,
    pub ic_lower: Option<Vec<f64>>,
    pub ic_upper: Option<Vec<f64>>,
    /// Simulated seconds; converted to sampling intervals with the system's
    /// sampling time.
    pub horizon: Option<f64>,
    pub n_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub n_x: Option<usize>,
    pub n_xl: Option<usize>,
    pub n_xn: Option<usize>,
    pub n_y: Option<usize>,
    pub n_yl: Option<usize>,
    pub n_yn: Option<usize>,
    pub n_xy: Option<usize>,
    pub n_xyl: Option<usize>,
    pub n_xyn: Option<usize>,
    pub n_d: Option<usize>,
    /// E-DMD dictionary: `identity`, `example1` or `poly<degree>`.
    pub dictionary: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epsilon: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub patience: Option<usize>,
    pub gradient_clip: Option<f64>,
    pub warm_start: Option<bool>,
    pub warm_start_ridge: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FilesConfig {
    pub data: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

/// Cartesian grid over hyperparameter lists.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub values: BTreeMap<String, Vec<usize>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that referenced files exist and grid keys are known.
    pub fn validate(&self) -> AppResult<()> {
        if let Some(f) = &self.files {
            for p in [&f.data, &f.train, &f.val, &f.test, &f.model].into_iter().flatten() {
                if !p.exists() {
                    return Err(AppError::Config(format!("referenced file {} does not exist", p.display())));
                }
            }
        }
        if let Some(g) = &self.grid {
            for key in g.values.keys() {
                if !HYPER_KEYS.contains(&key.as_str()) {
                    return Err(AppError::Config(format!("unknown grid key '{key}'")));
                }
            }
        }
        Ok(())
    }

    pub fn hyper(&self) -> HyperConfig {
        self.hyperparameters.clone().unwrap_or_default()
    }

    pub fn train_section(&self) -> TrainSection {
        self.train.clone().unwrap_or_default()
    }

    pub fn files(&self) -> FilesConfig {
        self.files.clone().unwrap_or_default()
    }

    pub fn dataset(&self) -> DatasetConfig {
        self.dataset.clone().unwrap_or_default()
    }
}

pub const HYPER_KEYS: [&str; 10] = [
    "n_x", "n_xl", "n_xn", "n_y", "n_yl", "n_yn", "n_xy", "n_xyl", "n_xyn", "n_d",
];

impl HyperConfig {
    /// Fills unset fields from `other`.
    pub fn or(self, other: HyperConfig) -> HyperConfig {
        HyperConfig {
            n_x: self.n_x.or(other.n_x),
            n_xl: self.n_xl.or(other.n_xl),
            n_xn: self.n_xn.or(other.n_xn),
            n_y: self.n_y.or(other.n_y),
            n_yl: self.n_yl.or(other.n_yl),
            n_yn: self.n_yn.or(other.n_yn),
            n_xy: self.n_xy.or(other.n_xy),
            n_xyl: self.n_xyl.or(other.n_xyl),
            n_xyn: self.n_xyn.or(other.n_xyn),
            n_d: self.n_d.or(other.n_d),
            dictionary: self.dictionary.or(other.dictionary),
        }
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        match key {
            "n_x" => self.n_x,
            "n_xl" => self.n_xl,
            "n_xn" => self.n_xn,
            "n_y" => self.n_y,
            "n_yl" => self.n_yl,
            "n_yn" => self.n_yn,
            "n_xy" => self.n_xy,
            "n_xyl" => self.n_xyl,
            "n_xyn" => self.n_xyn,
            "n_d" => self.n_d,
            _ => None,
        }
    }

    pub fn set(&mut self, key: &str, v: usize) {
        let slot = match key {
            "n_x" => &mut self.n_x,
            "n_xl" => &mut self.n_xl,
            "n_xn" => &mut self.n_xn,
            "n_y" => &mut self.n_y,
            "n_yl" => &mut self.n_yl,
            "n_yn" => &mut self.n_yn,
            "n_xy" => &mut self.n_xy,
            "n_xyl" => &mut self.n_xyl,
            "n_xyn" => &mut self.n_xyn,
            "n_d" => &mut self.n_d,
            _ => return,
        };
        *slot = Some(v);
    }

    pub fn require(&self, key: &str) -> AppResult<usize> {
        self.get(key)
            .ok_or_else(|| AppError::Config(format!("missing required hyperparameter {key}")))
    }
}

impl TrainSection {
    pub fn or(self, other: TrainSection) -> TrainSection {
        TrainSection {
            learning_rate: self.learning_rate.or(other.learning_rate),
            epsilon: self.epsilon.or(other.epsilon),
            epochs: self.epochs.or(other.epochs),
            batch_size: self.batch_size.or(other.batch_size),
            seed: self.seed.or(other.seed),
            patience: self.patience.or(other.patience),
            gradient_clip: self.gradient_clip.or(other.gradient_clip),
            warm_start: self.warm_start.or(other.warm_start),
            warm_start_ridge: self.warm_start_ridge.or(other.warm_start_ridge),
        }
    }

    /// A `batch_size` of 0 selects full-batch gradients.
    pub fn resolve(&self, seed: u64) -> AppResult<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: match self.batch_size {
                Some(0) => None,
                Some(b) => Some(b),
                None => d.batch_size,
            },
            seed: self.seed.unwrap_or(seed),
            early_stop_patience: self.patience.unwrap_or(d.early_stop_patience),
            gradient_clip: self.gradient_clip.or(d.gradient_clip),
            warm_start: self.warm_start.unwrap_or(d.warm_start),
            warm_start_ridge: self.warm_start_ridge.unwrap_or(d.warm_start_ridge),
            constant_observable: d.constant_observable,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `--seed`, then `KOOPFUSE_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>) -> AppResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("KOOPFUSE_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| AppError::Config(format!("KOOPFUSE_SEED must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}
