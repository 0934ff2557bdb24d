//! Thread-pool drivers for dataset generation and grid search.

use std::time::Instant;

use rayon::prelude::*;

use koopfuse_core::evaluation::{run_cell, select_best, GridCell, GridSearchResult};
use koopfuse_core::solvers::TrainConfig;
use koopfuse_core::systems::{generate_one, GeneratedData, IcBox, SystemSpec, Trajectory};

use crate::error::{AppError, AppResult};

/// A pool of `jobs` workers; 0 uses rayon's default.
pub fn pool(jobs: usize) -> AppResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| AppError::Config(format!("cannot build thread pool: {e}")))
}

/// Same trajectories as the serial generator, in the same order: each
/// trajectory draws its initial condition from its own seeded stream.
pub fn generate_dataset(
    pool: &rayon::ThreadPool,
    spec: &SystemSpec,
    n_traj: usize,
    ic_box: &IcBox,
    n_steps: usize,
    seed: u64,
) -> AppResult<GeneratedData> {
    if n_traj == 0 {
        return Err(AppError::Config("n_traj must be at least 1".into()));
    }
    if ic_box.lower.len() != spec.state_dim() {
        return Err(AppError::Config(format!(
            "initial-condition box has dimension {}, system has {}",
            ic_box.lower.len(),
            spec.state_dim()
        )));
    }
    spec.validate()?;
    let results = pool.install(|| {
        (0..n_traj as u64)
            .into_par_iter()
            .map(|id| generate_one(spec, ic_box, n_steps, seed, id))
            .collect::<koopfuse_core::Result<Vec<_>>>()
    })?;
    let mut out = GeneratedData {
        trajectories: Vec::with_capacity(n_traj),
        rejected: Vec::new(),
    };
    for r in results {
        match r {
            Ok(t) => out.trajectories.push(t),
            Err(rej) => out.rejected.push(rej),
        }
    }
    Ok(out)
}

/// Grid search with cells trained in parallel. The table is ordered by cell
/// index and each row carries its wall time.
pub fn grid_search(
    pool: &rayon::ThreadPool,
    cells: &[GridCell],
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
) -> GridSearchResult {
    let runs: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let t0 = Instant::now();
                let (mut row, m) = run_cell(i, c, train, val, cfg);
                row.wall_time_s = Some(t0.elapsed().as_secs_f64());
                log::info!(
                    "cell {i} {} {} n_d={}: score {:?}",
                    row.algorithm,
                    row.label,
                    row.n_d,
                    row.score()
                );
                (row, m)
            })
            .collect()
    });
    let (table, mut models): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let best = select_best(&table);
    let best_model = best.and_then(|i| models.swap_remove(i));
    GridSearchResult {
        table,
        best,
        best_model,
    }
}
