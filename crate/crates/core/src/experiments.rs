//! Benchmark presets: data-generation protocols, the reported optimal
//! hyperparameters, and the closed-form operator of the finite-closure map.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::datasets;
use crate::dictionary::{make_monomial, state_monomials_plus};
use crate::error::{Error, Result};
use crate::evaluation::{Algorithm, GridCell};
use crate::solvers::{BaselineHyper, DirectHyper, KoopmanModel, SequentialHyper};
use crate::systems::{
    generate_dataset, ActRepParams, FiniteClosureParams, GeneratedData, IcBox, MemsParams,
    SystemSpec, Trajectory,
};

/// The three benchmark studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example {
    FiniteClosure,
    Mems,
    ActivatorRepressor,
}

impl Example {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "example1" | "finite-closure" => Ok(Example::FiniteClosure),
            "mems" => Ok(Example::Mems),
            "actrep" => Ok(Example::ActivatorRepressor),
            other => Err(Error::InvalidParameter(alloc::format!("unknown experiment '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Example::FiniteClosure => "example1",
            Example::Mems => "mems",
            Example::ActivatorRepressor => "actrep",
        }
    }
}

/// Data-generation protocol of one study.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub spec: SystemSpec,
    pub ic_box: IcBox,
    pub n_traj: usize,
    /// Sampling intervals per trajectory.
    pub n_steps: usize,
}

impl Protocol {
    pub fn generate(&self, seed: u64) -> Result<GeneratedData> {
        generate_dataset(&self.spec, self.n_traj, &self.ic_box, self.n_steps, seed)
    }

    /// Generates and splits into train/validation/test thirds.
    pub fn generate_split(&self, seed: u64) -> Result<(Vec<Trajectory>, Vec<Trajectory>, Vec<Trajectory>)> {
        datasets::split(&self.generate(seed)?.trajectories, seed)
    }
}

/// 300 trajectories per study. The finite-closure map runs 30 steps from
/// `[5, 10]²`; MEMS is sampled every 0.5 s for 15 s from `(0, 2)²`; the clock
/// every 0.5 s for 50 s from `(0.1, 1)²`.
pub fn protocol(ex: Example) -> Protocol {
    match ex {
        Example::FiniteClosure => Protocol {
            spec: SystemSpec::finite_closure(FiniteClosureParams::default()),
            ic_box: IcBox::uniform(2, 5.0, 10.0).expect("valid box"),
            n_traj: 300,
            n_steps: 30,
        },
        Example::Mems => Protocol {
            spec: SystemSpec::mems(MemsParams::default(), 0.5),
            ic_box: IcBox::uniform(2, 0.0, 2.0).expect("valid box"),
            n_traj: 300,
            n_steps: 30,
        },
        Example::ActivatorRepressor => Protocol {
            spec: SystemSpec::activator_repressor(ActRepParams::default(), 0.5),
            ic_box: IcBox::uniform(2, 0.1, 1.0).expect("valid box"),
            n_traj: 300,
            n_steps: 100,
        },
    }
}

/// A named model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCell {
    pub name: &'static str,
    pub cell: GridCell,
}

fn cell(name: &'static str, algorithm: Algorithm, n_d: usize) -> NamedCell {
    NamedCell {
        name,
        cell: GridCell { algorithm, n_d },
    }
}

fn direct(n_x: usize, n_xl: usize, n_xn: usize) -> Algorithm {
    Algorithm::Direct(DirectHyper { n_x, n_xl, n_xn })
}

#[allow(clippy::too_many_arguments)]
fn sequential(
    n_x: usize,
    n_xl: usize,
    n_xn: usize,
    n_y: usize,
    n_yl: usize,
    n_yn: usize,
    n_xy: usize,
    n_xyl: usize,
    n_xyn: usize,
) -> Algorithm {
    Algorithm::Sequential(SequentialHyper {
        n_x,
        n_xl,
        n_xn,
        n_y,
        n_yl,
        n_yn,
        n_xy,
        n_xyl,
        n_xyn,
    })
}

fn baseline(n_xl: usize, n_xn: usize) -> Algorithm {
    Algorithm::Baseline(BaselineHyper { n_xl, n_xn })
}

/// The reported optimal configurations of each study.
pub fn reported_cells(ex: Example) -> Vec<NamedCell> {
    match ex {
        Example::FiniteClosure => vec![
            cell("direct-nl3", direct(1, 8, 2), 1),
            cell("direct-nl5", direct(3, 7, 5), 1),
            cell("sequential-nl5", sequential(1, 8, 2, 1, 9, 4, 1, 7, 2), 1),
        ],
        Example::Mems => vec![
            cell("baseline", baseline(6, 6), 1),
            cell("direct", direct(6, 3, 6), 1),
            cell("sequential", sequential(5, 3, 12, 1, 8, 6, 3, 8, 3), 1),
        ],
        Example::ActivatorRepressor => vec![
            cell("baseline", baseline(5, 6), 1),
            cell("direct", direct(9, 6, 12), 1),
            cell("sequential", sequential(3, 9, 8, 1, 9, 4, 3, 9, 3), 1),
            cell("direct-delay", direct(4, 8, 9), 6),
        ],
    }
}

/// Time-delay direct models over `n_d ∈ 1..=7` with the reported
/// delay-model hyperparameters.
pub fn delay_sweep() -> Vec<GridCell> {
    (1..=7)
        .map(|n_d| GridCell {
            algorithm: direct(4, 8, 9),
            n_d,
        })
        .collect()
}

/// Observables `[x1, x2, x1², x1x2, x1³]` that close the finite-closure map.
pub fn example1_dictionary() -> crate::dictionary::Dictionary {
    make_monomial(2, state_monomials_plus(2, &[vec![2, 0], vec![1, 1], vec![3, 0]]))
        .expect("valid exponents")
}

/// Exact operator on [`example1_dictionary`] with output `y = x1x2 = e₄ᵀψ`.
pub fn example1_theoretical_model(p: &FiniteClosureParams) -> KoopmanModel {
    let (a11, a21, a22, g) = (p.a11, p.a21, p.a22, p.gamma);
    #[rustfmt::skip]
    let k = DMatrix::from_row_slice(5, 5, &[
        a11, 0.0, 0.0, 0.0, 0.0,
        a21, a22, g, 0.0, 0.0,
        0.0, 0.0, a11 * a11, 0.0, 0.0,
        0.0, 0.0, a11 * a21, a11 * a22, a11 * g,
        0.0, 0.0, 0.0, 0.0, a11 * a11 * a11,
    ]);
    let w = DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 0.0, 1.0, 0.0]);
    KoopmanModel::new(k, w, example1_dictionary()).expect("consistent shapes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::evaluate_model;

    #[test]
    fn protocols_have_expected_sizes() {
        let p = protocol(Example::Mems);
        assert_eq!(p.n_steps + 1, 31);
        assert_eq!(protocol(Example::ActivatorRepressor).n_steps + 1, 101);
    }

    #[test]
    fn theoretical_model_is_exact_on_generated_data() {
        let mut p = protocol(Example::FiniteClosure);
        p.n_traj = 6;
        let data = p.generate(1).unwrap().trajectories;
        let m = example1_theoretical_model(&FiniteClosureParams::default());
        let r = evaluate_model(&m, &data, None).unwrap();
        assert!((r.r2_x_1step - 1.0).abs() < 1e-12);
        assert!((r.r2_y - 1.0).abs() < 1e-12);
        assert!((r.r2_x_nstep - 1.0).abs() < 1e-9);
    }

    #[test]
    fn names_round_trip() {
        for ex in [Example::FiniteClosure, Example::Mems, Example::ActivatorRepressor] {
            assert_eq!(Example::parse(ex.name()).unwrap(), ex);
        }
        assert!(Example::parse("nope").is_err());
    }
}
