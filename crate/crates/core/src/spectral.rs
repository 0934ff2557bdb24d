//! Spectral analysis of fitted operators: modal decomposition, eigenfunction
//! fields and their comparison, affine changes of model coordinates, and the
//! output-span / observability decompositions with the induced output
//! dynamics.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // inherent on f64 whenever std is linked
use num_traits::Float;

use crate::datasets::AffineTransform;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{self, cabs, CMatrix, C64, DEFAULT_RCOND};
use crate::solvers::KoopmanModel;

/// Default bound on the condition number of the eigenvector matrix.
pub const DEFAULT_MAX_CONDITION: f64 = 1e8;

/// `K = V Λ V⁻¹`; row `i` of `V⁻¹` defines `φ_i(x) = (V⁻¹ ψ(x))_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<C64>,
    pub modes: CMatrix,
    pub eigfun_coeffs: CMatrix,
    pub condition: f64,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `V Λ V⁻¹`.
    pub fn reconstruct(&self) -> CMatrix {
        let lambda = CMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone()));
        &self.modes * lambda * &self.eigfun_coeffs
    }

    /// `‖V Λ V⁻¹ − K‖_F / ‖K‖_F` (absolute when `K = 0`).
    pub fn reconstruction_error(&self, k: &DMatrix<f64>) -> f64 {
        let diff = self.reconstruct() - linalg::to_complex(k);
        let scale = k.norm();
        linalg::cfrobenius(&diff) / if scale > 0.0 { scale } else { 1.0 }
    }
}

fn spectral_order(a: &C64, b: &C64) -> Ordering {
    let tol = 1e-10 * (1.0 + cabs(*a).max(cabs(*b)));
    let by = |x: f64, y: f64| {
        if (x - y).abs() <= tol {
            Ordering::Equal
        } else if x > y {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    };
    by(cabs(*a), cabs(*b))
        .then_with(|| by(a.re, b.re))
        .then_with(|| by(a.im, b.im))
}

/// Modal decomposition of the model operator.
pub fn modal_decomposition(model: &KoopmanModel) -> Result<SpectralDecomposition> {
    decompose(&model.k, DEFAULT_MAX_CONDITION)
}

/// Eigenpairs sorted by descending modulus, then real part, then imaginary
/// part. Refuses operators whose eigenvector matrix is ill-conditioned.
pub fn decompose(k: &DMatrix<f64>, max_condition: f64) -> Result<SpectralDecomposition> {
    let (values, vectors) = linalg::eig(k)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| spectral_order(&values[i], &values[j]).then(i.cmp(&j)));
    let eigenvalues: Vec<C64> = order.iter().map(|&i| values[i]).collect();
    let modes = CMatrix::from_fn(vectors.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
    let condition = linalg::ccondition_number(&modes);
    if !(condition <= max_condition) {
        return Err(Error::Defective { condition });
    }
    let eigfun_coeffs = linalg::cinverse(&modes).map_err(|_| Error::Defective { condition })?;
    Ok(SpectralDecomposition {
        eigenvalues,
        modes,
        eigfun_coeffs,
        condition,
    })
}

/// Eigenfunction values on a grid, each normalized by its maximum modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenfunctionField {
    /// Grid points as columns.
    pub grid: DMatrix<f64>,
    /// One row per eigenfunction.
    pub values: CMatrix,
    /// Maximum modulus before normalization.
    pub scales: Vec<f64>,
}

impl EigenfunctionField {
    pub fn row(&self, i: usize) -> Vec<C64> {
        self.values.row(i).iter().copied().collect()
    }
}

/// `φ_i(x) = row_i(V⁻¹) ψ(x)` on the columns of `grid` (in the coordinates
/// the dictionary consumes), max-modulus normalized.
pub fn eval_eigenfunctions(
    decomp: &SpectralDecomposition,
    dict: &Dictionary,
    grid: &DMatrix<f64>,
) -> Result<EigenfunctionField> {
    let psi = linalg::to_complex(&dict.eval_batch(grid)?);
    let mut values = &decomp.eigfun_coeffs * psi;
    let mut scales = Vec::with_capacity(values.nrows());
    for mut row in values.row_iter_mut() {
        let m = row.iter().map(|z| cabs(*z)).fold(0.0, f64::max);
        if m > 0.0 {
            row.iter_mut().for_each(|z| *z /= m);
        }
        scales.push(m);
    }
    Ok(EigenfunctionField {
        grid: grid.clone(),
        values,
        scales,
    })
}

/// Like [`eval_eigenfunctions`] with `grid` in raw coordinates, mapped
/// through the model's stored transform.
pub fn eval_model_eigenfunctions(
    model: &KoopmanModel,
    decomp: &SpectralDecomposition,
    raw_grid: &DMatrix<f64>,
) -> Result<EigenfunctionField> {
    let inner = match &model.transform {
        Some(t) => t.apply_states(raw_grid),
        None => raw_grid.clone(),
    };
    let mut field = eval_eigenfunctions(decomp, &model.dictionary, &inner)?;
    field.grid = raw_grid.clone();
    Ok(field)
}

/// Regular lattice with `per_axis` points per coordinate over the box
/// `[lower, upper]`; the first coordinate varies fastest.
pub fn lattice(lower: &[f64], upper: &[f64], per_axis: usize) -> Result<DMatrix<f64>> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "lattice bounds",
            expected: lower.len(),
            found: upper.len(),
        });
    }
    if per_axis < 2 {
        return Err(Error::InvalidParameter("lattice needs at least 2 points per axis".into()));
    }
    let n = lower.len();
    let total = per_axis.pow(n as u32);
    Ok(DMatrix::from_fn(n, total, |i, j| {
        let idx = (j / per_axis.pow(i as u32)) % per_axis;
        lower[i] + (upper[i] - lower[i]) * idx as f64 / (per_axis - 1) as f64
    }))
}

fn pearson_real(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let floor = (1e-12 * scale).powi(2) * n;
    if saa <= floor || sbb <= floor {
        return Err(Error::UndefinedMetric("Pearson correlation of a constant field"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson ρ between two eigenfunction fields on the same grid.
///
/// Real fields use the real parts. Complex fields are first rotated so that
/// `b` is phase-aligned with `a`, then ρ of the real and of the imaginary
/// parts are averaged.
pub fn pearson_correlation(a: &[C64], b: &[C64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DimensionMismatch {
            context: "field lengths",
            expected: a.len(),
            found: b.len(),
        });
    }
    let imag_scale = |f: &[C64]| {
        let re = f.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let im = f.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        im <= 1e-10 * re.max(f64::MIN_POSITIVE)
    };
    let ra: Vec<f64> = a.iter().map(|z| z.re).collect();
    if imag_scale(a) && imag_scale(b) {
        let rb: Vec<f64> = b.iter().map(|z| z.re).collect();
        return pearson_real(&ra, &rb);
    }
    let ma = a.iter().sum::<C64>() / a.len() as f64;
    let mb = b.iter().sum::<C64>() / b.len() as f64;
    let cross: C64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb).conj()).sum();
    let rot = if cabs(cross) > 0.0 { cross / cabs(cross) } else { C64::new(1.0, 0.0) };
    let bb: Vec<C64> = b.iter().map(|z| z * rot).collect();
    let rb: Vec<f64> = bb.iter().map(|z| z.re).collect();
    let ia: Vec<f64> = a.iter().map(|z| z.im).collect();
    let ib: Vec<f64> = bb.iter().map(|z| z.im).collect();
    let re = pearson_real(&ra, &rb)?;
    match pearson_real(&ia, &ib) {
        Ok(im) => Ok(0.5 * (re + im)),
        Err(_) => Ok(re),
    }
}

/// Minimum-total-cost pairing of eigenvalues under `|λ_a − λ_b|`. Returns
/// `(index in a, index in b)`; with unequal lengths the extra eigenvalues of
/// the longer spectrum stay unmatched.
pub fn match_eigenpairs(a: &[C64], b: &[C64]) -> Vec<(usize, usize)> {
    let n = a.len().max(b.len());
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match (a.get(i), b.get(j)) {
                    (Some(x), Some(y)) => cabs(x - y),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    crate::assignment::solve(&cost)
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < a.len() && j < b.len())
        .collect()
}

/// One row of an eigenfunction comparison table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCorrelation {
    pub index_a: usize,
    pub index_b: usize,
    pub lambda_a: C64,
    pub lambda_b: C64,
    /// `None` when either field is constant.
    pub rho: Option<f64>,
}

impl PairCorrelation {
    pub fn abs_rho(&self) -> Option<f64> {
        self.rho.map(f64::abs)
    }
}

/// Matches the spectra of two decompositions and correlates the paired
/// eigenfunction fields.
pub fn correlate_fields(
    da: &SpectralDecomposition,
    fa: &EigenfunctionField,
    db: &SpectralDecomposition,
    fb: &EigenfunctionField,
) -> Result<Vec<PairCorrelation>> {
    if fa.grid.ncols() != fb.grid.ncols() {
        return Err(Error::DimensionMismatch {
            context: "eigenfunction grids",
            expected: fa.grid.ncols(),
            found: fb.grid.ncols(),
        });
    }
    Ok(match_eigenpairs(&da.eigenvalues, &db.eigenvalues)
        .into_iter()
        .map(|(i, j)| PairCorrelation {
            index_a: i,
            index_b: j,
            lambda_a: da.eigenvalues[i],
            lambda_b: db.eigenvalues[j],
            rho: pearson_correlation(&fa.row(i), &fb.row(j)).ok(),
        })
        .collect())
}

/// Rewrites a model with a state-inclusive dictionary in the coordinates
/// `x̃ = P x + b`, `ỹ = Q y + c`.
///
/// With `ψ = [x; φ(x); 1]` (the constant is appended when missing) and
/// `M = [[P⁻¹, 0, −P⁻¹b], [0, I, 0], [0, 0, 1]]`, the new model has
/// `K̃ = M⁻¹ K M`, `W̃ = Q W M + c e_lastᵀ` and observables
/// `φ̃(x̃) = φ(P⁻¹ x̃ − P⁻¹ b)`. Its stored transform becomes `t ∘ old`.
pub fn apply_affine_transform(model: &KoopmanModel, t: &AffineTransform) -> Result<KoopmanModel> {
    let n = model.state_dim();
    if t.state_dim() != n || t.output_dim() != model.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "transform dimension vs model state",
            expected: n,
            found: t.state_dim(),
        });
    }
    let (phi, has_const) = model.dictionary.split_state_inclusive()?;
    let (k, w) = if has_const {
        (model.k.clone(), model.w_h.clone())
    } else {
        let nl = model.lifted_dim();
        let mut k = DMatrix::zeros(nl + 1, nl + 1);
        k.view_mut((0, 0), (nl, nl)).copy_from(&model.k);
        k[(nl, nl)] = 1.0;
        let mut w = DMatrix::zeros(model.output_dim(), nl + 1);
        w.columns_mut(0, nl).copy_from(&model.w_h);
        (k, w)
    };
    let nl = k.nrows();
    let last = nl - 1;
    let p_inv = t.p_inv();
    let shift = -(p_inv * &t.b);

    let mut m = DMatrix::identity(nl, nl);
    m.view_mut((0, 0), (n, n)).copy_from(p_inv);
    m.view_mut((0, last), (n, 1)).copy_from(&shift);
    let mut m_inv = DMatrix::identity(nl, nl);
    m_inv.view_mut((0, 0), (n, n)).copy_from(&t.p);
    m_inv.view_mut((0, last), (n, 1)).copy_from(&t.b);

    let k_new = &m_inv * &k * &m;
    let mut w_new = &t.q * &w * &m;
    for i in 0..w_new.nrows() {
        w_new[(i, last)] += t.c[i];
    }

    let mut parts = vec![Dictionary::identity(n)];
    if let Some(phi) = phi {
        parts.push(Dictionary::Precompose {
            inner: Box::new(phi),
            matrix: p_inv.clone(),
            shift,
        });
    }
    let body = if parts.len() == 1 { parts.pop().unwrap() } else { Dictionary::Concat(parts) };
    let dictionary = Dictionary::WithConstant(Box::new(body));

    let transform = match &model.transform {
        Some(old) => AffineTransform::compose(t, old),
        None => t.clone(),
    };
    let mut out = KoopmanModel {
        k: k_new,
        w_h: w_new,
        dictionary,
        transform: Some(transform),
        structure: model.structure,
        block_dims: model.block_dims,
        delay: model.delay,
        fit_report: model.fit_report.clone(),
    };
    if out.structure == crate::solvers::Structure::SequentialBlocks {
        clean_blocks(&mut out);
    }
    out.validate()?;
    Ok(out)
}

/// Restores exact zeros in the sequential blocks (they are exact in theory;
/// products with `M` keep them zero, this guards against `-0.0` style noise).
fn clean_blocks(m: &mut KoopmanModel) {
    if let Some(d) = m.block_dims {
        let s = d.n + d.n_x;
        let end = d.lifted();
        for i in 0..s {
            for j in s..end {
                m.k[(i, j)] = 0.0;
            }
        }
        for i in 0..m.w_h.nrows() {
            for j in s + d.n_y..end {
                m.w_h[(i, j)] = 0.0;
            }
        }
    }
}

/// Expresses a model that carries a stored transform in raw coordinates.
pub fn to_raw_coordinates(model: &KoopmanModel) -> Result<KoopmanModel> {
    match &model.transform {
        None => Ok(model.clone()),
        Some(t) => {
            let mut raw = apply_affine_transform(model, &t.inverse())?;
            raw.transform = None;
            Ok(raw)
        }
    }
}

/// Split of the lifted coordinates into the part seen by the outputs and
/// its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpan {
    pub rank: usize,
    /// Orthogonal; `W_h T = [W_hψ, 0]`.
    pub t: DMatrix<f64>,
    pub w_h_psi: DMatrix<f64>,
    pub n_hidden: usize,
}

/// SVD-based split `h = [W_hψ, 0] [ψ_h; ψ̄_h]` with `[ψ_h; ψ̄_h] = Tᵀ ψ`.
pub fn output_span_decomposition(w_h: &DMatrix<f64>, rank_tol: f64) -> OutputSpan {
    let nl = w_h.ncols();
    if w_h.iter().all(|&v| v == 0.0) || w_h.nrows() == 0 {
        return OutputSpan {
            rank: 0,
            t: DMatrix::identity(nl, nl),
            w_h_psi: DMatrix::zeros(w_h.nrows(), 0),
            n_hidden: nl,
        };
    }
    let (u, s, v) = linalg::svd(w_h);
    let r = linalg::numerical_rank(&s, rank_tol);
    let t = linalg::orthonormal_completion(&v.columns(0, r).into_owned());
    let mut w_h_psi = u.columns(0, r).into_owned();
    for j in 0..r {
        w_h_psi.column_mut(j).scale_mut(s[j]);
    }
    OutputSpan {
        rank: r,
        t,
        w_h_psi,
        n_hidden: nl - r,
    }
}

/// `(W_hᵀ W_h)⁻¹ W_hᵀ` for full-column-rank `W_h`.
pub fn left_inverse(w_h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    full_column_rank(w_h)?;
    let g = w_h.transpose() * w_h;
    Ok(linalg::inverse(&g)? * w_h.transpose())
}

fn full_column_rank(w_h: &DMatrix<f64>) -> Result<()> {
    let nl = w_h.ncols();
    let rank = if w_h.iter().all(|&v| v == 0.0) {
        0
    } else {
        linalg::numerical_rank(&w_h.clone().singular_values(), DEFAULT_RCOND)
    };
    if rank < nl {
        return Err(Error::RankDeficient {
            context: "W_h column rank",
            rank,
            required: nl,
            hint: None,
        });
    }
    Ok(())
}

/// `[W_h; W_h K; …; W_h K^{m−1}]`.
pub fn observability_matrix(k: &DMatrix<f64>, w: &DMatrix<f64>, blocks: usize) -> DMatrix<f64> {
    let p = w.nrows();
    let mut o = DMatrix::zeros(p * blocks, k.ncols());
    let mut cur = w.clone();
    for i in 0..blocks {
        o.rows_mut(i * p, p).copy_from(&cur);
        cur = &cur * k;
    }
    o
}

/// Observable/unobservable split in an orthogonal basis:
/// `Tᵀ K T = [[K_o, 0], [K_21, K_22]]`, `W_h T = [W_ho, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableDecomposition {
    pub t: DMatrix<f64>,
    pub n_o: usize,
    pub k_o: DMatrix<f64>,
    pub k_21: DMatrix<f64>,
    pub k_22: DMatrix<f64>,
    pub w_ho: DMatrix<f64>,
}

pub fn observable_decomposition(
    k: &DMatrix<f64>,
    w_h: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<ObservableDecomposition> {
    let nl = k.nrows();
    if !k.is_square() || w_h.ncols() != nl {
        return Err(Error::DimensionMismatch {
            context: "W_h columns vs K side",
            expected: nl,
            found: w_h.ncols(),
        });
    }
    let o = observability_matrix(k, w_h, nl.max(1));
    let (t, n_o) = if o.iter().all(|&v| v == 0.0) {
        (DMatrix::identity(nl, nl), 0)
    } else {
        let (_, s, v) = linalg::svd(&o);
        let r = linalg::numerical_rank(&s, rank_tol);
        (linalg::orthonormal_completion(&v.columns(0, r).into_owned()), r)
    };
    let kt = t.transpose() * k * &t;
    let wt = w_h * &t;
    let upper = kt.view((0, n_o), (n_o, nl - n_o)).norm();
    let hidden = wt.columns(n_o, nl - n_o).norm();
    let tol = 1e-8 * (1.0 + k.norm() + w_h.norm());
    if upper > tol || hidden > tol {
        return Err(Error::VerificationFailed {
            what: "observable block form",
            residual: upper.max(hidden),
        });
    }
    Ok(ObservableDecomposition {
        k_o: kt.view((0, 0), (n_o, n_o)).into_owned(),
        k_21: kt.view((n_o, 0), (nl - n_o, n_o)).into_owned(),
        k_22: kt.view((n_o, n_o), (nl - n_o, nl - n_o)).into_owned(),
        w_ho: wt.columns(0, n_o).into_owned(),
        t,
        n_o,
    })
}

/// Output-delay coordinates `z = OᵀO ψ_o` and their dynamics
/// `K_z = (OᵀO) K_o (OᵀO)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputConjugacy {
    pub o: DMatrix<f64>,
    pub w_psi: DMatrix<f64>,
    pub k_z: DMatrix<f64>,
    /// Largest relative residual of the two conjugacy identities.
    pub residual: f64,
}

/// Builds `O = [W_ho; W_ho K_o; …; W_ho K_o^N]` and the conjugate output
/// dynamics, checking `H K_o = K_z H` and `K_o H⁻¹ = H⁻¹ K_z` with `H = OᵀO`.
pub fn conjugate_output_dynamics(
    k_o: &DMatrix<f64>,
    w_ho: &DMatrix<f64>,
    n_delay: usize,
) -> Result<OutputConjugacy> {
    let n_o = k_o.nrows();
    let rank_of = |m: &DMatrix<f64>| {
        if m.iter().all(|&v| v == 0.0) {
            0
        } else {
            linalg::numerical_rank(&m.clone().singular_values(), DEFAULT_RCOND)
        }
    };
    let o = observability_matrix(k_o, w_ho, n_delay + 1);
    let rank = rank_of(&o);
    if rank < n_o {
        let hint = (n_delay + 1..n_o.max(1)).find(|&m| rank_of(&observability_matrix(k_o, w_ho, m + 1)) == n_o);
        return Err(Error::RankDeficient {
            context: "stacked output observability matrix",
            rank,
            required: n_o,
            hint,
        });
    }
    let h = o.transpose() * &o;
    let h_inv = linalg::inverse(&h)?;
    let k_z = &h * k_o * &h_inv;
    let scale = 1.0 + k_o.norm() * h.norm();
    let r1 = (&h * k_o - &k_z * &h).norm() / scale;
    let r2 = (k_o * &h_inv - &h_inv * &k_z).norm() / (1.0 + k_o.norm() * h_inv.norm());
    let residual = r1.max(r2);
    if residual > 1e-9 {
        return Err(Error::VerificationFailed {
            what: "output conjugacy identities",
            residual,
        });
    }
    Ok(OutputConjugacy {
        w_psi: o.transpose(),
        o,
        k_z,
        residual,
    })
}

/// `W_hᵀW_h K (W_hᵀW_h)⁻¹` for `p > n_L`, or `W_h K W_h⁻¹` for `p = n_L`.
pub fn output_dynamics_full_rank(k: &DMatrix<f64>, w_h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    full_column_rank(w_h)?;
    if w_h.nrows() == w_h.ncols() {
        Ok(w_h * k * linalg::inverse(w_h)?)
    } else {
        let g = w_h.transpose() * w_h;
        Ok(&g * k * linalg::inverse(&g)?)
    }
}

/// Spectrum-preservation check for a change of basis `T`: the largest
/// eigenvalue displacement between `K` and `T⁻¹ K T`.
pub fn similarity_displacement(k: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    let kt = linalg::inverse(t)? * k * t;
    Ok(linalg::spectrum_distance(&linalg::eigenvalues(k)?, &linalg::eigenvalues(&kt)?))
}

/// Values `(φ(x))` of the left eigenfunctions of `K` transported to the
/// coordinates `z = G ψ`: returns the coefficient rows `w G⁻¹`.
pub fn transport_eigenfunctions(decomp: &SpectralDecomposition, g: &DMatrix<f64>) -> Result<CMatrix> {
    let g_inv = linalg::to_complex(&linalg::inverse(g)?);
    Ok(&decomp.eigfun_coeffs * g_inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{make_monomial, make_neural, state_monomials_plus};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn theory_k() -> DMatrix<f64> {
        DMatrix::from_row_slice(5, 5, &[
            0.9, 0.0, 0.0, 0.0, 0.0,
            -0.4, -0.8, -0.9, 0.0, 0.0,
            0.0, 0.0, 0.81, 0.0, 0.0,
            0.0, 0.0, -0.36, -0.72, -0.81,
            0.0, 0.0, 0.0, 0.0, 0.729,
        ])
    }

    fn theory_model() -> KoopmanModel {
        let dict = make_monomial(2, state_monomials_plus(2, &[vec![2, 0], vec![1, 1], vec![3, 0]])).unwrap();
        KoopmanModel::new(theory_k(), DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 0.0, 1.0, 0.0]), dict).unwrap()
    }

    #[test]
    fn identity_decomposition() {
        let d = decompose(&DMatrix::identity(3, 3), DEFAULT_MAX_CONDITION).unwrap();
        assert!(d.eigenvalues.iter().all(|l| cabs(l - 1.0) < 1e-15));
        assert!(linalg::cfrobenius(&(&d.modes - CMatrix::identity(3, 3))) < 1e-15);
    }

    #[test]
    fn theoretical_spectrum_sorted() {
        let d = modal_decomposition(&theory_model()).unwrap();
        let expected = [0.9, 0.81, -0.8, 0.729, -0.72];
        for (l, e) in d.eigenvalues.iter().zip(expected) {
            assert!(cabs(l - e) < 1e-12, "{l} vs {e}");
        }
        assert!(d.reconstruction_error(&theory_k()) < 1e-12);
    }

    #[test]
    fn ties_break_by_real_then_imaginary_part() {
        let k = DMatrix::from_row_slice(4, 4, &[
            0.0, -0.5, 0.0, 0.0,
            0.5, 0.0, 0.0, 0.0,
            0.0, 0.0, -0.5, 0.0,
            0.0, 0.0, 0.0, 0.5,
        ]);
        let d = decompose(&k, DEFAULT_MAX_CONDITION).unwrap();
        let l = &d.eigenvalues;
        assert!(cabs(l[0] - 0.5) < 1e-12);
        assert!(cabs(l[1] - C64::new(0.0, 0.5)) < 1e-12);
        assert!(cabs(l[2] - C64::new(0.0, -0.5)) < 1e-12);
        assert!(cabs(l[3] + 0.5) < 1e-12);
    }

    #[test]
    fn defective_operator_refused() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(decompose(&k, DEFAULT_MAX_CONDITION), Err(Error::Defective { .. })));
    }

    #[test]
    fn modal_reconstruction_of_lifted_step() {
        let m = theory_model();
        let d = modal_decomposition(&m).unwrap();
        let x = DMatrix::from_fn(2, 100, |i, j| ((j * 37 + i * 11) % 97) as f64 / 48.5 - 1.0);
        let psi = linalg::to_complex(&m.lift(&x).unwrap());
        let phi = &d.eigfun_coeffs * &psi;
        let lam = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.eigenvalues.clone()));
        let recon = &d.modes * lam * phi;
        let direct = linalg::to_complex(&(&m.k * m.lift(&x).unwrap()));
        assert!(linalg::cfrobenius(&(recon - &direct)) < 1e-8 * linalg::cfrobenius(&direct));
    }

    #[test]
    fn diagonal_identity_dictionary_eigenfunctions_are_coordinates() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.9]));
        let m = KoopmanModel::new(k, DMatrix::zeros(1, 2), Dictionary::identity(2)).unwrap();
        let d = modal_decomposition(&m).unwrap();
        let grid = lattice(&[-1.0, -2.0], &[1.0, 2.0], 5).unwrap();
        let f = eval_eigenfunctions(&d, &m.dictionary, &grid).unwrap();
        // λ = 0.9 first → φ ∝ x2
        for j in 0..grid.ncols() {
            assert!((f.values[(0, j)].re - grid[(1, j)] / 2.0).abs() < 1e-12);
            assert!((f.values[(1, j)].re - grid[(0, j)]).abs() < 1e-12);
        }
        for i in 0..2 {
            let m = f.values.row(i).iter().map(|z| cabs(*z)).fold(0.0, f64::max);
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_basic_contract() {
        let a: Vec<C64> = (0..50).map(|i| c((i as f64 * 0.37).sin())).collect();
        let neg: Vec<C64> = a.iter().map(|z| -z).collect();
        let scaled: Vec<C64> = a.iter().map(|z| z * 3.5).collect();
        assert!((pearson_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson_correlation(&a, &scaled).unwrap().abs() - 1.0).abs() < 1e-12);
        let flat = vec![c(2.0); 50];
        assert!(matches!(pearson_correlation(&a, &flat), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn pearson_complex_is_phase_invariant() {
        let a: Vec<C64> = (0..60).map(|i| C64::new((i as f64 * 0.3).cos(), (i as f64 * 0.7).sin())).collect();
        let rot = C64::new(0.6, 0.8);
        let b: Vec<C64> = a.iter().map(|z| z * rot * 2.0).collect();
        assert!((pearson_correlation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matching_examples() {
        let a = [c(0.9), c(0.1)];
        let b = [c(0.12), c(0.88)];
        assert_eq!(match_eigenpairs(&a, &b), vec![(0, 1), (1, 0)]);
        let s = [c(0.3), c(-0.2), C64::new(0.1, 0.4)];
        assert_eq!(match_eigenpairs(&s, &s), vec![(0, 0), (1, 1), (2, 2)]);
        let perm = [s[2], s[0], s[1]];
        assert_eq!(match_eigenpairs(&s, &perm), vec![(0, 1), (1, 2), (2, 0)]);
        assert_eq!(match_eigenpairs(&s, &s[..2]).len(), 2);
    }

    #[test]
    fn identity_transform_appends_constant_block() {
        let m = theory_model();
        let t = AffineTransform::identity(2, 1);
        let out = apply_affine_transform(&m, &t).unwrap();
        assert_eq!(out.lifted_dim(), 6);
        assert_eq!(out.k.view((0, 0), (5, 5)), theory_k());
        assert_eq!(out.k.row(5).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(out.k.view((0, 5), (5, 1)).iter().all(|&v| v == 0.0));
        assert_eq!(out.w_h.columns(0, 5), m.w_h);
        assert_eq!(out.w_h[(0, 5)], 0.0);
    }

    #[test]
    fn transformed_model_commutes_with_prediction() {
        let m = theory_model();
        let t = AffineTransform::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, -0.1, 0.7]),
            DVector::from_vec(vec![0.5, -1.0]),
            DMatrix::from_element(1, 1, 3.0),
            DVector::from_element(1, -0.25),
        )
        .unwrap();
        let tm = apply_affine_transform(&m, &t).unwrap();
        assert!(linalg::eigenvalues(&tm.k).unwrap().iter().any(|l| cabs(l - 1.0) < 1e-12));
        let x0 = DVector::from_vec(vec![0.4, -0.7]);
        let mut psi = m.lift(&DMatrix::from_column_slice(2, 1, x0.as_slice())).unwrap();
        let xt = t.apply_state(&x0);
        let mut psit = tm.lift(&DMatrix::from_column_slice(2, 1, xt.as_slice())).unwrap();
        for _ in 0..10 {
            let y = (&m.w_h * &psi)[(0, 0)];
            let yt = (&tm.w_h * &psit)[(0, 0)];
            assert!((3.0 * y - 0.25 - yt).abs() < 1e-9);
            psi = &m.k * psi;
            psit = &tm.k * psit;
            let x = DVector::from_vec(vec![psi[(0, 0)], psi[(1, 0)]]);
            let mapped = t.apply_state(&x);
            assert!((mapped[0] - psit[(0, 0)]).abs() < 1e-9 && (mapped[1] - psit[(1, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn raw_coordinates_round_trip() {
        let phi = make_neural(2, 1, 3, 2, 4).unwrap();
        let dict = crate::dictionary::append_constant(Dictionary::state_inclusive(2, phi).unwrap()).unwrap();
        let k = DMatrix::from_fn(5, 5, |i, j| if i == 4 { f64::from(j == 4) } else { 0.1 * (i as f64 - j as f64) });
        let m = KoopmanModel::new(k, DMatrix::from_element(1, 5, 0.2), dict).unwrap();
        let t = AffineTransform::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])),
            DVector::from_vec(vec![1.0, -3.0]),
            DMatrix::from_element(1, 1, 4.0),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let std = apply_affine_transform(&m, &t).unwrap();
        let raw = to_raw_coordinates(&std).unwrap();
        assert!((&raw.k - &m.k).amax() < 1e-12);
        assert!((&raw.w_h - &m.w_h).amax() < 1e-12);
        let x = DMatrix::from_fn(2, 7, |i, j| (i + j) as f64 * 0.3 - 1.0);
        assert!((raw.lift(&x).unwrap() - m.lift(&x).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn non_state_inclusive_rejected() {
        let m = KoopmanModel::new(DMatrix::identity(2, 2), DMatrix::zeros(1, 2), make_neural(2, 1, 2, 2, 0).unwrap()).unwrap();
        assert_eq!(
            apply_affine_transform(&m, &AffineTransform::identity(2, 1)),
            Err(Error::NotStateInclusive)
        );
    }

    #[test]
    fn output_span_examples() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let s = output_span_decomposition(&w, DEFAULT_RCOND);
        assert_eq!((s.rank, s.n_hidden), (1, 1));
        assert!((s.t[(0, 0)].abs() - 1.0).abs() < 1e-12);
        let wt = &w * &s.t;
        assert!(wt.column(1).norm() < 1e-12);
        assert!((wt.columns(0, 1) - &s.w_h_psi).norm() < 1e-12);
        let z = output_span_decomposition(&DMatrix::zeros(1, 3), DEFAULT_RCOND);
        assert_eq!((z.rank, z.n_hidden), (0, 3));
    }

    #[test]
    fn full_rank_outputs_recover_lift() {
        let w = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let s = output_span_decomposition(&w, DEFAULT_RCOND);
        assert_eq!(s.rank, 3);
        let psi = DMatrix::from_fn(3, 10, |i, j| (i as f64 + 1.0) * (j as f64 * 0.4).cos());
        let rec = left_inverse(&w).unwrap() * (&w * &psi);
        assert!((rec - psi).amax() < 1e-10);
    }

    #[test]
    fn observable_split_examples() {
        let k = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.3, 0.2]);
        let d = observable_decomposition(&k, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DEFAULT_RCOND).unwrap();
        assert_eq!(d.n_o, 1);
        assert!((d.k_o[(0, 0)] - 0.5).abs() < 1e-12);
        let z = observable_decomposition(&k, &DMatrix::zeros(1, 2), DEFAULT_RCOND).unwrap();
        assert_eq!(z.n_o, 0);
        let full = observable_decomposition(&k, &DMatrix::identity(2, 2), DEFAULT_RCOND).unwrap();
        assert_eq!(full.n_o, 2);
        assert!(similarity_displacement(&k, &full.t).unwrap() < 1e-12);
    }

    #[test]
    fn conjugacy_examples() {
        let s = conjugate_output_dynamics(&DMatrix::from_element(1, 1, 0.7), &DMatrix::from_element(1, 1, 1.0), 0).unwrap();
        assert_eq!(s.o, DMatrix::from_element(1, 1, 1.0));
        assert!((s.k_z[(0, 0)] - 0.7).abs() < 1e-15);
        let k = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let w = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let err = conjugate_output_dynamics(&k, &w, 0).unwrap_err();
        assert_eq!(err, Error::RankDeficient { context: "stacked output observability matrix", rank: 1, required: 2, hint: Some(1) });
        let ok = conjugate_output_dynamics(&k, &w, 1).unwrap();
        let ev = linalg::eigenvalues(&ok.k_z).unwrap();
        assert!(linalg::spectrum_distance(&ev, &linalg::eigenvalues(&k).unwrap()) < 1e-12);
    }

    #[test]
    fn full_rank_output_dynamics() {
        let k = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        assert!((output_dynamics_full_rank(&k, &DMatrix::identity(2, 2)).unwrap() - &k).amax() < 1e-15);
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let kz = output_dynamics_full_rank(&k, &w).unwrap();
        let d = linalg::spectrum_distance(&linalg::eigenvalues(&kz).unwrap(), &linalg::eigenvalues(&k).unwrap());
        assert!(d < 1e-9);
        assert!(output_dynamics_full_rank(&k, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).is_err());
    }
}
