//! Property suites over randomized inputs. Every suite runs from a fixed
//! proptest seed so results are deterministic. Shared with the acceptance
//! target in the koopfuse crate.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, RngSeed, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use koopfuse_core::datasets::{delay_embed, AffineTransform, SnapshotSet};
use koopfuse_core::dictionary::{append_constant, make_monomial, make_neural, state_monomials_plus, Dictionary};
use koopfuse_core::linalg::{self, cabs, C64, DEFAULT_RCOND};
use koopfuse_core::solvers::{
    check_sequential_feasible_for_direct, dmd, edmd, fit_sequential_ocdmd, KoopmanModel, SequentialHyper, TrainConfig,
};
use koopfuse_core::spectral::{
    apply_affine_transform, conjugate_output_dynamics, decompose, observable_decomposition, similarity_displacement,
    DEFAULT_MAX_CONDITION,
};
use koopfuse_core::systems::Trajectory;

fn cfg(cases: u32, seed: u64) -> Config {
    Config {
        cases,
        rng_algorithm: RngAlgorithm::ChaCha,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..Config::default()
    }
}

fn run<S: Strategy>(
    cases: u32,
    seed: u64,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    TestRunner::new(cfg(cases, seed)).run(&strategy, test).map_err(|e| e.to_string())
}

pub type Suite = (&'static str, fn() -> Result<(), String>);

pub const ALL: &[Suite] = &[
    ("dmd_recovers_linear_maps", dmd_recovers_linear_maps),
    ("modal_decomposition_reconstructs", modal_decomposition_reconstructs),
    ("affine_transform_commutes_with_prediction", affine_transform_commutes_with_prediction),
    ("transformed_operator_has_exact_unit_eigenvalue", transformed_operator_has_exact_unit_eigenvalue),
    ("output_conjugacy_identities", output_conjugacy_identities),
    ("observable_split_recovers_planted_blocks", observable_split_recovers_planted_blocks),
    ("similarity_preserves_spectrum", similarity_preserves_spectrum),
    ("sequential_blocks_are_exact_and_feasible", sequential_blocks_are_exact_and_feasible),
    ("dictionary_gradients_match_finite_differences", dictionary_gradients_match_finite_differences),
    ("delay_embedding_matches_enumeration", delay_embedding_matches_enumeration),
];

fn gaussian_ish(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * (rng.gen::<f64>() * 2.0 - 1.0))
}

/// `I + 0.4·U[-1,1]`, comfortably invertible for the sizes used here.
fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) + gaussian_ish(rng, n, n, 0.4 / n as f64)
}

fn snapshots(xp: DMatrix<f64>, xf: DMatrix<f64>, yp: DMatrix<f64>) -> SnapshotSet {
    let cols = (0..xp.ncols())
        .map(|k| koopfuse_core::datasets::ColumnSource { traj_id: 0, k })
        .collect();
    SnapshotSet::new(xp, xf, yp, cols).unwrap()
}

fn state_inclusive_dict(n: usize, seed: u64) -> Dictionary {
    let inner = if seed.is_multiple_of(2) {
        make_neural(n, 2, 4, 3, seed).unwrap()
    } else {
        make_monomial(n, (0..n).map(|i| (0..n).map(|j| u32::from(i == j) * 2).collect()).collect()).unwrap()
    };
    Dictionary::state_inclusive(n, inner).unwrap()
}

pub fn dmd_recovers_linear_maps() -> Result<(), String> {
    run(50, 11, (any::<u64>(), 1usize..6, 0usize..20,), |(seed, n, extra,)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = gaussian_ish(&mut rng, n, n, 1.0);
            let xp = gaussian_ish(&mut rng, n, n + 5 + extra, 1.0);
            let xf = &a * &xp;
            let k = dmd(&xp, &xf, DEFAULT_RCOND).unwrap();
            prop_assert!((&k - &a).norm() < 1e-10, "error {}", (&k - &a).norm());
            let s = snapshots(xp.clone(), xf.clone(), DMatrix::zeros(1, xp.ncols()));
            let ke = edmd(&s, &Dictionary::identity(n), DEFAULT_RCOND).unwrap();
            prop_assert!((&ke - &k).norm() < 1e-12);
        Ok(())
    })
}



pub fn modal_decomposition_reconstructs() -> Result<(), String> {
    run(100, 12, (any::<u64>(), 1usize..9,), |(seed, n,)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // mixes real and complex-conjugate eigenvalues
            let v = well_conditioned(&mut rng, n);
            let mut d = DMatrix::zeros(n, n);
            let mut i = 0;
            while i < n {
                let re = rng.gen::<f64>() * 2.0 - 1.0;
                if i + 1 < n && rng.gen::<bool>() {
                    let im = 0.1 + rng.gen::<f64>();
                    d[(i, i)] = re;
                    d[(i + 1, i + 1)] = re;
                    d[(i, i + 1)] = im;
                    d[(i + 1, i)] = -im;
                    i += 2;
                } else {
                    d[(i, i)] = re + 0.01 * i as f64;
                    i += 1;
                }
            }
            let k = &v * d * linalg::inverse(&v).unwrap();
            let dec = decompose(&k, DEFAULT_MAX_CONDITION).unwrap();
            let direct = (dec.reconstruct() - linalg::to_complex(&k)).map(cabs).max();
            prop_assert!(direct < 1e-8, "reconstruction error {direct}");
            prop_assert!(dec.reconstruction_error(&k) < 1e-8);
        Ok(())
    })
}



/// Predict-then-transform equals transform-then-predict.
pub fn affine_transform_commutes_with_prediction() -> Result<(), String> {
    run(100, 13, (any::<u64>(), 1usize..4, 1usize..3,), |(seed, n, p,)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dict = append_constant(state_inclusive_dict(n, seed)).unwrap();
            let nl = dict.output_dim();
            let mut k = gaussian_ish(&mut rng, nl, nl, 0.5);
            for j in 0..nl {
                k[(nl - 1, j)] = if j == nl - 1 { 1.0 } else { 0.0 };
            }
            let w = gaussian_ish(&mut rng, p, nl, 1.0);
            let model = KoopmanModel::new(k, w, dict).unwrap();
            let t = AffineTransform::new(
                well_conditioned(&mut rng, n),
                DVector::from_fn(n, |_, _| rng.gen::<f64>() * 4.0 - 2.0),
                well_conditioned(&mut rng, p),
                DVector::from_fn(p, |_, _| rng.gen::<f64>() * 4.0 - 2.0),
            )
            .unwrap();
            let tm = apply_affine_transform(&model, &t).unwrap();
            let x = gaussian_ish(&mut rng, n, 7, 1.0);
            let xt = t.apply_states(&x);

            let lifted = &model.k * model.lift(&x).unwrap();
            let lifted_t = &tm.k * tm.lift(&xt).unwrap();
            let expect_states = t.apply_states(&lifted.rows(0, n).into_owned());
            let got_states = lifted_t.rows(0, n).into_owned();
            let scale = 1.0 + lifted.norm();
            prop_assert!((&got_states - &expect_states).norm() < 1e-8 * scale);
            // the nonlinear observables and the constant are untouched
            let tail = nl - n;
            let rest = (lifted_t.rows(n, tail) - lifted.rows(n, tail)).norm();
            prop_assert!(rest < 1e-8 * scale, "observable rows differ by {rest}");

            let y = &model.w_h * model.lift(&x).unwrap();
            let yt = &tm.w_h * tm.lift(&xt).unwrap();
            prop_assert!((yt - t.apply_outputs(&y)).norm() < 1e-8 * (1.0 + y.norm()));
        Ok(())
    })
}

pub fn transformed_operator_has_exact_unit_eigenvalue() -> Result<(), String> {
    run(100, 13, (any::<u64>(), 1usize..4,), |(seed, n,)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dict = state_inclusive_dict(n, seed);
            let nl = dict.output_dim();
            let model = KoopmanModel::new(gaussian_ish(&mut rng, nl, nl, 0.6), gaussian_ish(&mut rng, 1, nl, 1.0), dict).unwrap();
            let t = AffineTransform::new(
                well_conditioned(&mut rng, n),
                DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5),
                DMatrix::identity(1, 1),
                DVector::zeros(1),
            )
            .unwrap();
            let tm = apply_affine_transform(&model, &t).unwrap();
            let last = tm.k.nrows() - 1;
            for j in 0..=last {
                prop_assert_eq!(tm.k[(last, j)], if j == last { 1.0 } else { 0.0 });
            }
            let eig = linalg::eigenvalues(&tm.k).unwrap();
            let closest = eig.iter().map(|z| cabs(*z - C64::new(1.0, 0.0))).fold(f64::INFINITY, f64::min);
            prop_assert!(closest < 1e-12, "closest eigenvalue is {closest} from 1");
        Ok(())
    })
}



pub fn output_conjugacy_identities() -> Result<(), String> {
    run(100, 14, (any::<u64>(), 1usize..5, 1usize..3,), |(seed, n_o, p,)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k_o = gaussian_ish(&mut rng, n_o, n_o, 0.9);
            let w = gaussian_ish(&mut rng, p, n_o, 1.0);
            let c = conjugate_output_dynamics(&k_o, &w, n_o - 1).unwrap();
            prop_assert!(c.residual < 1e-9);
            // independent check of H K_o H⁻¹ = K_z
            let h = c.o.transpose() * &c.o;
            let lhs = &h * &k_o;
            let rhs = &c.k_z * &h;
            prop_assert!((&lhs - &rhs).norm() < 1e-9 * (1.0 + lhs.norm()));
            let a = linalg::eigenvalues(&k_o).unwrap();
            let b = linalg::eigenvalues(&c.k_z).unwrap();
            prop_assert!(linalg::spectrum_distance(&a, &b) < 1e-6);
        Ok(())
    })
}

pub fn observable_split_recovers_planted_blocks() -> Result<(), String> {
    run(100, 14, (any::<u64>(), 1usize..4, 1usize..3,), |(seed, n_o, n_h,)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nl = n_o + n_h;
            let k_o = gaussian_ish(&mut rng, n_o, n_o, 0.9);
            let mut blk = DMatrix::zeros(nl, nl);
            blk.view_mut((0, 0), (n_o, n_o)).copy_from(&k_o);
            blk.view_mut((n_o, 0), (n_h, n_o)).copy_from(&gaussian_ish(&mut rng, n_h, n_o, 0.5));
            blk.view_mut((n_o, n_o), (n_h, n_h)).copy_from(&gaussian_ish(&mut rng, n_h, n_h, 0.5));
            let mut w_blk = DMatrix::zeros(1, nl);
            w_blk.view_mut((0, 0), (1, n_o)).copy_from(&gaussian_ish(&mut rng, 1, n_o, 1.0));
            let q = gaussian_ish(&mut rng, nl, nl, 1.0).qr().q();
            let k = &q * &blk * q.transpose();
            let w = &w_blk * q.transpose();
            let d = observable_decomposition(&k, &w, 1e-9).unwrap();
            prop_assert_eq!(d.n_o, n_o);
            let a = linalg::eigenvalues(&k_o).unwrap();
            let b = linalg::eigenvalues(&d.k_o).unwrap();
            prop_assert!(linalg::spectrum_distance(&a, &b) < 1e-6);
        Ok(())
    })
}

pub fn similarity_preserves_spectrum() -> Result<(), String> {
    run(100, 14, (any::<u64>(), 1usize..7,), |(seed, n,)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = gaussian_ish(&mut rng, n, n, 1.0);
            let t = well_conditioned(&mut rng, n);
            prop_assert!(similarity_displacement(&k, &t).unwrap() < 1e-8);
        Ok(())
    })
}



fn finite_closure_snapshots(seed: u64, n_traj: usize) -> SnapshotSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut xp, mut xf, mut yp) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n_traj {
        let mut x = [rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0];
        for _ in 0..10 {
            let next = [0.9 * x[0], -0.4 * x[0] - 0.8 * x[1] - 0.3 * x[0] * x[0]];
            xp.extend_from_slice(&x);
            xf.extend_from_slice(&next);
            yp.push(x[0] * x[1]);
            x = next;
        }
    }
    let n = yp.len();
    snapshots(
        DMatrix::from_column_slice(2, n, &xp),
        DMatrix::from_column_slice(2, n, &xf),
        DMatrix::from_row_slice(1, n, &yp),
    )
}

pub fn sequential_blocks_are_exact_and_feasible() -> Result<(), String> {
    run(12, 15, (any::<u64>(), 0usize..3, 0usize..3, 0usize..3, 1usize..5,), |(seed, n_x, n_y, n_xy, width,)| {
            let s = finite_closure_snapshots(seed, 6);
            let h = SequentialHyper {
                n_x, n_xl: 1, n_xn: width,
                n_y, n_yl: 1, n_yn: width,
                n_xy, n_xyl: 1, n_xyn: width,
            };
            let tc = TrainConfig { epochs: 15, seed, ..TrainConfig::default() };
            let m = fit_sequential_ocdmd(&s, &s, &h, &tc).unwrap();
            let (n, sx) = (2, 2 + n_x);
            let end = sx + n_y + n_xy;
            for i in 0..sx {
                for j in sx..end {
                    prop_assert!(m.k[(i, j)] == 0.0, "K[{i},{j}] = {}", m.k[(i, j)]);
                }
            }
            for j in sx + n_y..end {
                prop_assert!(m.w_h[(0, j)] == 0.0);
            }
            prop_assert_eq!(m.lifted_dim(), n + n_x + n_y + n_xy + 1);
            let r = check_sequential_feasible_for_direct(&m, &s).unwrap();
            prop_assert!(r.direct_loss.is_finite());
            prop_assert!((r.direct_loss - r.stage_sum()).abs() <= 1e-9 * (1.0 + r.direct_loss));
            prop_assert!((r.direct_loss - m.direct_loss(&s).unwrap()).abs() <= 1e-12 * (1.0 + r.direct_loss));
        Ok(())
    })
}



fn random_param_dict(rng: &mut ChaCha8Rng, seed: u64) -> Dictionary {
    let n = rng.gen_range(1..4);
    let layers = rng.gen_range(1..4);
    let width = rng.gen_range(1..6);
    let outs = rng.gen_range(1..4);
    let net = make_neural(n, layers, width, outs, seed).unwrap();
    match rng.gen_range(0..3) {
        0 => net,
        1 => append_constant(Dictionary::state_inclusive(n, net).unwrap()).unwrap(),
        _ => Dictionary::Concat(vec![
            make_monomial(n, state_monomials_plus(n, &[vec![2; n]])).unwrap(),
            Dictionary::Precompose {
                inner: Box::new(net),
                matrix: gaussian_ish(rng, n, n, 1.0),
                shift: DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5),
            },
        ]),
    }
}

/// Reverse-mode parameter gradients against central differences of
/// `⟨C, ψ(X)⟩`.
pub fn dictionary_gradients_match_finite_differences() -> Result<(), String> {
    run(100, 16, (any::<u64>(),), |(seed,)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dict = random_param_dict(&mut rng, seed);
            let x = gaussian_ish(&mut rng, dict.input_dim(), 5, 1.5);
            let cot = gaussian_ish(&mut rng, dict.output_dim(), 5, 1.0);
            let g = dict.param_gradient(&x, &cot).unwrap();
            let base = dict.params();
            let f = |p: &[f64]| {
                let mut d = dict.clone();
                d.set_params(p).unwrap();
                d.eval_batch(&x).unwrap().component_mul(&cot).sum()
            };
            let h = 1e-6;
            let mut worst = 0.0f64;
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
            for i in 0..base.len() {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs() / gmax);
            }
            prop_assert!(worst < 1e-5, "max relative error {worst}");
        Ok(())
    })
}



fn indexed_trajectory(len: usize, id: u64, with_last_output: bool) -> Trajectory {
    let states: Vec<Vec<f64>> = (0..len).map(|k| vec![k as f64, 1000.0 + k as f64]).collect();
    let n_out = if with_last_output { len } else { len - 1 };
    let outputs = (0..n_out).map(|k| vec![-(k as f64)]).collect();
    Trajectory { traj_id: id, ic: states[0].clone(), states, outputs }
}

/// Snapshot columns from the block formula against explicit enumeration
/// of non-overlapping newest-first blocks.
pub fn delay_embedding_matches_enumeration() -> Result<(), String> {
    run(50, 17, (2usize..60, 1usize..9, any::<bool>(),), |(len, n_d, last,)| {
            let t = indexed_trajectory(len, 3, last);
            let res = delay_embed(std::slice::from_ref(&t), n_d);
            let mut blocks: Vec<(Vec<f64>, usize)> = Vec::new();
            let mut start = 0;
            while start + n_d <= len {
                let newest = start + n_d - 1;
                let mut v = Vec::new();
                for idx in (start..=newest).rev() {
                    v.extend_from_slice(&t.states[idx]);
                }
                blocks.push((v, newest));
                start += n_d;
            }
            let pairs = blocks.len().saturating_sub(1);
            if pairs == 0 {
                // no usable pair: either an error or an empty set with the trajectory skipped
                prop_assert!(res.map_or(true, |(s, skipped)| s.is_empty() && skipped == 1));
                return Ok(());
            }
            let (s, skipped) = res.unwrap();
            prop_assert_eq!(skipped, 0);
            prop_assert_eq!(s.len(), pairs);
            for j in 0..pairs {
                let xp: Vec<f64> = s.xp.column(j).iter().copied().collect();
                let xf: Vec<f64> = s.xf.column(j).iter().copied().collect();
                prop_assert_eq!(&xp, &blocks[j].0);
                prop_assert_eq!(&xf, &blocks[j + 1].0);
                prop_assert_eq!(s.yp[(0, j)], -(blocks[j].1 as f64));
            }
        Ok(())
    })
}


