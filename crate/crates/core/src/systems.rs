//! Benchmark dynamical systems with outputs, fixed-step simulation and
//! seeded dataset generation.
//!
//! Three systems are provided: a discrete map with a finite Koopman closure,
//! a damped Duffing-type MEMS resonator read out through a differential
//! capacitor, and a two-state activator–repressor clock with a fluorescent
//! reporter. Continuous systems are sampled every `sampling_time` seconds and
//! integrated with classical RK4 using `substeps` internal steps per sample.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent on f64 whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    DiscreteMap,
    ContinuousOde,
}

impl SystemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SystemKind::DiscreteMap => "discrete-map",
            SystemKind::ContinuousOde => "continuous-ode",
        }
    }
}

/// `x⁺ = (a11 x1, a21 x1 + a22 x2 + γ x1²)`, `y = x1 x2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteClosureParams {
    pub a11: f64,
    pub a21: f64,
    pub a22: f64,
    pub gamma: f64,
}

impl Default for FiniteClosureParams {
    fn default() -> Self {
        Self {
            a11: 0.9,
            a21: -0.4,
            a22: -0.8,
            gamma: -0.9,
        }
    }
}

/// Spring–mass–damper with cubic stiffness; output is the differential
/// capacitor voltage `-x1/(d + x1)·V_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemsParams {
    pub m: f64,
    pub k1: f64,
    pub c: f64,
    pub k3: f64,
    /// Capacitor gap; 1.0 by default.
    pub d: f64,
    pub v_s: f64,
    /// Minimum admissible `|d + x1|` before the output is declared singular.
    pub singular_tol: f64,
}

impl Default for MemsParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            k1: 0.5,
            c: 1.0,
            k3: 1.0,
            d: 1.0,
            v_s: 0.4,
            singular_tol: 1e-3,
        }
    }
}

/// Activator (A) / repressor (B) clock with reporter output
/// `C = k3n·A / (1 + B/k3d)`.
///
/// `k3n` plays the role of `k_c/γ_c` and `k3d` of `K_d` in the reporter
/// equation; this pairing of names is a crate convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActRepParams {
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    pub alpha_a0: f64,
    pub alpha_b0: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub k_a: f64,
    pub k_b: f64,
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub n: f64,
    pub m: f64,
    pub k3n: f64,
    pub k3d: f64,
}

impl Default for ActRepParams {
    fn default() -> Self {
        Self {
            gamma_a: 0.7,
            gamma_b: 0.5,
            delta_a: 1.0,
            delta_b: 1.0,
            alpha_a0: 0.4,
            alpha_b0: 0.004,
            alpha_a: 0.2,
            alpha_b: 0.2,
            k_a: 0.1,
            k_b: 0.08,
            kappa_a: 0.9,
            kappa_b: 0.5,
            n: 2.0,
            m: 3.0,
            k3n: 3.0,
            k3d: 1.08,
        }
    }
}

pub fn finite_closure_step(x: &[f64], p: &FiniteClosureParams) -> [f64; 2] {
    [p.a11 * x[0], p.a21 * x[0] + p.a22 * x[1] + p.gamma * x[0] * x[0]]
}

pub fn finite_closure_output(x: &[f64]) -> f64 {
    x[0] * x[1]
}

pub fn mems_vector_field(x: &[f64], p: &MemsParams) -> Result<[f64; 2]> {
    if p.m == 0.0 {
        return Err(Error::InvalidParameter("MEMS mass m must be nonzero".into()));
    }
    let x1 = x[0];
    let x2 = x[1];
    Ok([
        x2,
        -(p.k1 / p.m) * x1 - (p.c / p.m) * x2 - (p.k3 / p.m) * x1 * x1 * x1,
    ])
}

pub fn mems_output(x: &[f64], p: &MemsParams) -> Result<f64> {
    let denom = p.d + x[0];
    if denom.abs() < p.singular_tol {
        return Err(Error::SingularOutput {
            value: denom.abs(),
            tolerance: p.singular_tol,
        });
    }
    Ok(-x[0] / denom * p.v_s)
}

pub fn actrep_vector_field(x: &[f64], p: &ActRepParams) -> Result<[f64; 2]> {
    if !(p.k_a > 0.0 && p.k_b > 0.0 && p.delta_a > 0.0 && p.delta_b > 0.0) {
        return Err(Error::InvalidParameter(
            "K_A, K_B, delta_A and delta_B must be positive".into(),
        ));
    }
    let a = x[0];
    let b = x[1];
    let act = hill(a / p.k_a, p.n);
    let rep = hill(b / p.k_b, p.m);
    let da = -p.gamma_a * a
        + (p.kappa_a / p.delta_a) * (p.alpha_a * act + p.alpha_a0) / (1.0 + act + rep);
    let db = -p.gamma_b * b + (p.kappa_b / p.delta_b) * (p.alpha_b * act + p.alpha_b0) / (1.0 + act);
    Ok([da, db])
}

// u^e for the Hill terms; integer exponents avoid powf of negative bases
// when the integrator overshoots below zero.
fn hill(u: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() < 64.0 {
        u.powi(e as i32)
    } else {
        u.powf(e)
    }
}

pub fn actrep_output(x: &[f64], p: &ActRepParams) -> f64 {
    (p.k3n * x[0]) / (1.0 + x[1] / p.k3d)
}

/// Classical fixed-step RK4. Returns `n_steps + 1` points including `x0`.
pub fn integrate_rk4<F>(field: F, x0: &[f64], dt: f64, n_steps: usize) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive".into()));
    }
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(x0.to_vec());
    let mut x = x0.to_vec();
    for step in 1..=n_steps {
        x = rk4_step(&field, &x, dt)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { traj_id: None, step });
        }
        out.push(x.clone());
    }
    Ok(out)
}

fn rk4_step<F>(field: &F, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let k1 = field(x)?;
    let tmp: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
    let k2 = field(&tmp)?;
    let tmp: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2[i]).collect();
    let k3 = field(&tmp)?;
    let tmp: Vec<f64> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
    let k4 = field(&tmp)?;
    Ok((0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Benchmark {
    FiniteClosure(FiniteClosureParams),
    Mems(MemsParams),
    ActivatorRepressor(ActRepParams),
}

/// An immutable benchmark description.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub system: Benchmark,
    /// Seconds between samples; ignored for discrete maps.
    pub sampling_time: f64,
    /// RK4 steps per sampling interval for continuous systems.
    pub substeps: usize,
}

impl SystemSpec {
    pub fn finite_closure(params: FiniteClosureParams) -> Self {
        Self {
            system: Benchmark::FiniteClosure(params),
            sampling_time: 1.0,
            substeps: 1,
        }
    }

    pub fn mems(params: MemsParams, sampling_time: f64) -> Self {
        Self {
            system: Benchmark::Mems(params),
            sampling_time,
            substeps: 10,
        }
    }

    pub fn activator_repressor(params: ActRepParams, sampling_time: f64) -> Self {
        Self {
            system: Benchmark::ActivatorRepressor(params),
            sampling_time,
            substeps: 10,
        }
    }

    /// Builds a spec from a system name and named parameters. Missing names
    /// take their defaults; unknown names are rejected.
    pub fn from_named(
        name: &str,
        params: &BTreeMap<String, f64>,
        sampling_time: Option<f64>,
        substeps: Option<usize>,
    ) -> Result<Self> {
        let mut spec = match name {
            "finite-closure" => Self::finite_closure(FiniteClosureParams::default()),
            "mems" => Self::mems(MemsParams::default(), 0.5),
            "actrep" => Self::activator_repressor(ActRepParams::default(), 0.5),
            other => {
                return Err(Error::InvalidParameter(format!("unknown system '{other}'")));
            }
        };
        for (key, &value) in params {
            let slot = spec.param_slot(key).ok_or_else(|| {
                Error::InvalidParameter(format!("unknown parameter '{key}' for system '{name}'"))
            })?;
            *slot = value;
        }
        if let Some(ts) = sampling_time {
            spec.sampling_time = ts;
        }
        if let Some(s) = substeps {
            spec.substeps = s;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn param_slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match &mut self.system {
            Benchmark::FiniteClosure(p) => match key {
                "a11" => &mut p.a11,
                "a21" => &mut p.a21,
                "a22" => &mut p.a22,
                "gamma" => &mut p.gamma,
                _ => return None,
            },
            Benchmark::Mems(p) => match key {
                "m" => &mut p.m,
                "k1" => &mut p.k1,
                "c" => &mut p.c,
                "k3" => &mut p.k3,
                "d" => &mut p.d,
                "V_s" => &mut p.v_s,
                "singular_tol" => &mut p.singular_tol,
                _ => return None,
            },
            Benchmark::ActivatorRepressor(p) => match key {
                "gamma_A" => &mut p.gamma_a,
                "gamma_B" => &mut p.gamma_b,
                "delta_A" => &mut p.delta_a,
                "delta_B" => &mut p.delta_b,
                "alpha_A0" => &mut p.alpha_a0,
                "alpha_B0" => &mut p.alpha_b0,
                "alpha_A" => &mut p.alpha_a,
                "alpha_B" => &mut p.alpha_b,
                "K_A" => &mut p.k_a,
                "K_B" => &mut p.k_b,
                "kappa_A" => &mut p.kappa_a,
                "kappa_B" => &mut p.kappa_b,
                "n" => &mut p.n,
                "m" => &mut p.m,
                "k_3n" => &mut p.k3n,
                "k_3d" => &mut p.k3d,
                _ => return None,
            },
        })
    }

    /// Parameters under their symbol names, in a fixed order.
    pub fn named_params(&self) -> Vec<(&'static str, f64)> {
        match &self.system {
            Benchmark::FiniteClosure(p) => vec![
                ("a11", p.a11),
                ("a21", p.a21),
                ("a22", p.a22),
                ("gamma", p.gamma),
            ],
            Benchmark::Mems(p) => vec![
                ("m", p.m),
                ("k1", p.k1),
                ("c", p.c),
                ("k3", p.k3),
                ("d", p.d),
                ("V_s", p.v_s),
                ("singular_tol", p.singular_tol),
            ],
            Benchmark::ActivatorRepressor(p) => vec![
                ("gamma_A", p.gamma_a),
                ("gamma_B", p.gamma_b),
                ("delta_A", p.delta_a),
                ("delta_B", p.delta_b),
                ("alpha_A0", p.alpha_a0),
                ("alpha_B0", p.alpha_b0),
                ("alpha_A", p.alpha_a),
                ("alpha_B", p.alpha_b),
                ("K_A", p.k_a),
                ("K_B", p.k_b),
                ("kappa_A", p.kappa_a),
                ("kappa_B", p.kappa_b),
                ("n", p.n),
                ("m", p.m),
                ("k_3n", p.k3n),
                ("k_3d", p.k3d),
            ],
        }
    }

    pub fn name(&self) -> &'static str {
        match self.system {
            Benchmark::FiniteClosure(_) => "finite-closure",
            Benchmark::Mems(_) => "mems",
            Benchmark::ActivatorRepressor(_) => "actrep",
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self.system {
            Benchmark::FiniteClosure(_) => SystemKind::DiscreteMap,
            _ => SystemKind::ContinuousOde,
        }
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind() == SystemKind::ContinuousOde {
            if !(self.sampling_time > 0.0) {
                return Err(Error::InvalidParameter("sampling time must be positive".into()));
            }
            if self.substeps == 0 {
                return Err(Error::InvalidParameter("substeps must be at least 1".into()));
            }
        }
        match &self.system {
            Benchmark::Mems(p) if p.m == 0.0 => {
                Err(Error::InvalidParameter("MEMS mass m must be nonzero".into()))
            }
            Benchmark::ActivatorRepressor(p) => actrep_vector_field(&[0.0, 0.0], p).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Vector field (continuous) or `None` for discrete maps.
    pub fn vector_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.system {
            Benchmark::FiniteClosure(_) => Err(Error::InvalidParameter(
                "discrete map has no vector field".into(),
            )),
            Benchmark::Mems(p) => mems_vector_field(x, p).map(|v| v.to_vec()),
            Benchmark::ActivatorRepressor(p) => actrep_vector_field(x, p).map(|v| v.to_vec()),
        }
    }

    /// Advances the state by one sampling interval.
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.system {
            Benchmark::FiniteClosure(p) => Ok(finite_closure_step(x, p).to_vec()),
            _ => {
                let dt = self.sampling_time / self.substeps as f64;
                let mut xs = x.to_vec();
                for _ in 0..self.substeps {
                    xs = rk4_step(&|s: &[f64]| self.vector_field(s), &xs, dt)?;
                }
                Ok(xs)
            }
        }
    }

    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![match &self.system {
            Benchmark::FiniteClosure(_) => finite_closure_output(x),
            Benchmark::Mems(p) => mems_output(x, p)?,
            Benchmark::ActivatorRepressor(p) => actrep_output(x, p),
        }])
    }

    /// Simulates `n_steps` sampling intervals from `ic`.
    pub fn simulate(&self, ic: &[f64], n_steps: usize, traj_id: u64) -> Result<Trajectory> {
        if ic.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "initial condition",
                expected: self.state_dim(),
                found: ic.len(),
            });
        }
        let mut states = Vec::with_capacity(n_steps + 1);
        let mut outputs = Vec::with_capacity(n_steps + 1);
        let mut x = ic.to_vec();
        for step in 0..=n_steps {
            if step > 0 {
                x = self.step(&x)?;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    traj_id: Some(traj_id),
                    step,
                });
            }
            outputs.push(self.output(&x)?);
            states.push(x.clone());
        }
        Ok(Trajectory {
            traj_id,
            ic: ic.to_vec(),
            states,
            outputs,
        })
    }
}

/// One simulated run. `outputs[k] = h(states[k])` for every `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub traj_id: u64,
    pub ic: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, |s| s.len())
    }
}

/// Axis-aligned box for uniform initial-condition sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct IcBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl IcBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "ic box bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("ic box bounds must be finite".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidParameter("ic box lower bound exceeds upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Draw for trajectory `traj_id`; depends only on `(seed, traj_id)`.
    pub fn sample(&self, seed: u64, traj_id: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(traj_id);
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| {
                let u: f64 = rng.gen();
                lo + (hi - lo) * u
            })
            .collect()
    }
}

/// Trajectory dropped during generation, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub traj_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub trajectories: Vec<Trajectory>,
    pub rejected: Vec<Rejection>,
}

/// Simulates a single trajectory of a dataset. Singular outputs are reported as
/// `Ok(Err(rejection))`; non-finite states are hard errors.
pub fn generate_one(
    spec: &SystemSpec,
    ic_box: &IcBox,
    n_steps: usize,
    seed: u64,
    traj_id: u64,
) -> Result<core::result::Result<Trajectory, Rejection>> {
    let ic = ic_box.sample(seed, traj_id);
    match spec.simulate(&ic, n_steps, traj_id) {
        Ok(t) => Ok(Ok(t)),
        Err(e @ Error::SingularOutput { .. }) => Ok(Err(Rejection {
            traj_id,
            reason: e.to_string(),
        })),
        Err(Error::NonFiniteState { step, .. }) => Err(Error::NonFiniteState {
            traj_id: Some(traj_id),
            step,
        }),
        Err(e) => Err(e),
    }
}

/// Generates `n_traj` trajectories of `n_steps` sampling intervals each.
pub fn generate_dataset(
    spec: &SystemSpec,
    n_traj: usize,
    ic_box: &IcBox,
    n_steps: usize,
    seed: u64,
) -> Result<GeneratedData> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
    }
    if ic_box.lower.len() != spec.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "ic box dimension",
            expected: spec.state_dim(),
            found: ic_box.lower.len(),
        });
    }
    spec.validate()?;
    let mut trajectories = Vec::with_capacity(n_traj);
    let mut rejected = Vec::new();
    for id in 0..n_traj as u64 {
        match generate_one(spec, ic_box, n_steps, seed, id)? {
            Ok(t) => trajectories.push(t),
            Err(r) => rejected.push(r),
        }
    }
    Ok(GeneratedData {
        trajectories,
        rejected,
    })
}

/// Number of sampling intervals covering `horizon` seconds at `dt`.
pub fn steps_for_horizon(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon and dt must be positive".into()));
    }
    Ok((horizon / dt + 1e-9).floor() as usize)
}

impl core::fmt::Display for SystemSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} ({})", self.name(), self.kind().as_str())
    }
}
