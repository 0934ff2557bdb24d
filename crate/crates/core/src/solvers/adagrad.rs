//! Adagrad with validation-based early stopping.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent on f64 whenever std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Optimizer and stopping settings shared by every gradient-trained solver.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Validation checks without improvement before stopping.
    pub early_stop_patience: usize,
    pub gradient_clip: Option<f64>,
    /// Initialize the linear operators by least squares on the initial
    /// dictionary instead of zeros.
    pub warm_start: bool,
    /// Ridge weight of the warm-start solve, relative to the column count.
    pub warm_start_ridge: f64,
    /// Append the constant observable to Koopman dictionaries.
    pub constant_observable: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epsilon: 1e-8,
            epochs: 20_000,
            batch_size: None,
            seed: 0,
            early_stop_patience: 500,
            gradient_clip: None,
            warm_start: true,
            warm_start_ridge: 1e-6,
            constant_observable: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if !(self.warm_start_ridge >= 0.0 && self.warm_start_ridge.is_finite()) {
            return Err(Error::InvalidParameter("warm_start_ridge must be non-negative".into()));
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter("gradient_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Outcome of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: &'static str,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub log: Vec<LogRow>,
}

/// Runs Adagrad from `params`.
///
/// `objective(params, batch)` returns the training loss and gradient on the
/// given column subset (`None` = all columns); `validate(params)` returns the
/// validation loss. The parameters with the lowest validation loss (the
/// starting point included, as epoch 0) are returned together with the
/// training loss they attain on the full batch.
pub fn train<F, V>(
    stage: &'static str,
    mut params: Vec<f64>,
    n_columns: usize,
    cfg: &TrainConfig,
    mut objective: F,
    mut validate: V,
) -> Result<(Vec<f64>, StageReport)>
where
    F: FnMut(&[f64], Option<&[usize]>) -> Result<(f64, Vec<f64>)>,
    V: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let diverged = |epoch| Error::Diverged { stage, epoch };
    let mut accum = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x5eed);
    let mut order: Vec<usize> = (0..n_columns).collect();
    let batch = cfg.batch_size.filter(|&b| b < n_columns);

    let mut best = params.clone();
    let mut best_val = validate(&params).map_err(|_| diverged(0))?;
    if !best_val.is_finite() {
        best_val = f64::INFINITY;
    }
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let mut epoch_loss = 0.0;
        match batch {
            None => {
                let (loss, grad) = objective(&params, None).map_err(|_| diverged(epoch))?;
                epoch_loss = loss;
                step(&mut params, &mut accum, grad, cfg);
            }
            Some(b) => {
                order.shuffle(&mut rng);
                let mut weight = 0.0;
                for chunk in order.chunks(b) {
                    let mut cols = chunk.to_vec();
                    cols.sort_unstable();
                    let (loss, grad) =
                        objective(&params, Some(&cols)).map_err(|_| diverged(epoch))?;
                    epoch_loss += loss * cols.len() as f64;
                    weight += cols.len() as f64;
                    step(&mut params, &mut accum, grad, cfg);
                }
                epoch_loss /= weight;
            }
        }
        if !epoch_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(diverged(epoch));
        }
        let val = validate(&params).map_err(|_| diverged(epoch))?;
        if !val.is_finite() {
            return Err(diverged(epoch));
        }
        log.push(LogRow {
            epoch,
            train_loss: epoch_loss,
            val_loss: val,
        });
        if val < best_val {
            best_val = val;
            best.clone_from(&params);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (train_loss, _) = objective(&best, None).map_err(|_| diverged(best_epoch))?;
    Ok((
        best,
        StageReport {
            stage,
            epochs_run,
            best_epoch,
            train_loss,
            val_loss: best_val,
            log,
        },
    ))
}

fn step(params: &mut [f64], accum: &mut [f64], mut grad: Vec<f64>, cfg: &TrainConfig) {
    if let Some(clip) = cfg.gradient_clip {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > clip {
            grad.iter_mut().for_each(|g| *g *= clip / norm);
        }
    }
    for ((p, a), g) in params.iter_mut().zip(accum.iter_mut()).zip(grad) {
        *a += g * g;
        *p -= cfg.learning_rate * g / (a.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(p: &[f64], _: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let loss = (p[0] - 3.0).powi(2) + 2.0 * (p[1] + 1.0).powi(2);
        Ok((loss, vec![2.0 * (p[0] - 3.0), 4.0 * (p[1] + 1.0)]))
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 5000,
            ..TrainConfig::default()
        };
        let (p, report) = train("q", vec![0.0, 0.0], 1, &cfg, quadratic, |p| {
            Ok(quadratic(p, None)?.0)
        })
        .unwrap();
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6);
        assert!(report.train_loss < 1e-10);
    }

    #[test]
    fn early_stop_restores_best() {
        let cfg = TrainConfig {
            early_stop_patience: 5,
            ..TrainConfig::default()
        };
        // validation is best at the start, so it stops 5 checks later
        let (p, report) = train("q", vec![0.0, 0.0], 1, &cfg, quadratic, |p| {
            Ok(p[0].abs())
        })
        .unwrap();
        assert_eq!(report.epochs_run, 5);
        assert_eq!(report.best_epoch, 0);
        assert_eq!(report.log.len(), 5);
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn divergence_reports_epoch() {
        let cfg = TrainConfig::default();
        let mut calls = 0;
        let err = train(
            "s",
            vec![1.0],
            1,
            &cfg,
            |_, _| {
                calls += 1;
                Ok((if calls >= 3 { f64::NAN } else { 1.0 }, vec![1.0]))
            },
            |_| Ok(1.0),
        )
        .unwrap_err();
        assert_eq!(err, Error::Diverged { stage: "s", epoch: 3 });
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
