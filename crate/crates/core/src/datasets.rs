//! Snapshot matrices, trajectory splits, standardization and time-delay
//! embedding.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // inherent on f64 whenever std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::systems::Trajectory;

/// Where a snapshot column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ColumnSource {
    pub traj_id: u64,
    pub k: usize,
}

/// Column-aligned snapshot matrices `X_P`, `X_F` (n×N) and `Y_P` (p×N).
///
/// Column `j` holds `(x_k, x_{k+1}, y_k)` of one trajectory; pairs never
/// straddle trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub xp: DMatrix<f64>,
    pub xf: DMatrix<f64>,
    pub yp: DMatrix<f64>,
    pub columns: Vec<ColumnSource>,
}

impl SnapshotSet {
    pub fn new(
        xp: DMatrix<f64>,
        xf: DMatrix<f64>,
        yp: DMatrix<f64>,
        columns: Vec<ColumnSource>,
    ) -> Result<Self> {
        if xp.shape() != xf.shape() {
            return Err(Error::DimensionMismatch {
                context: "X_F columns vs X_P",
                expected: xp.ncols(),
                found: xf.ncols(),
            });
        }
        if yp.ncols() != xp.ncols() {
            return Err(Error::DimensionMismatch {
                context: "Y_P columns vs X_P",
                expected: xp.ncols(),
                found: yp.ncols(),
            });
        }
        if columns.len() != xp.ncols() {
            return Err(Error::DimensionMismatch {
                context: "column provenance",
                expected: xp.ncols(),
                found: columns.len(),
            });
        }
        Ok(Self {
            xp,
            xf,
            yp,
            columns,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.xp.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.yp.nrows()
    }

    pub fn len(&self) -> usize {
        self.xp.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.xp.ncols() == 0
    }
}

fn check_lengths(t: &Trajectory) -> Result<()> {
    let l = t.states.len();
    if l < 2 || t.outputs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "trajectory {} needs at least 2 states and 1 output",
            t.traj_id
        )));
    }
    if t.outputs.len() != l && t.outputs.len() + 1 != l {
        return Err(Error::InvalidParameter(format!(
            "trajectory {} has {} states but {} outputs",
            t.traj_id,
            l,
            t.outputs.len()
        )));
    }
    Ok(())
}

fn sorted_refs(trajectories: &[Trajectory]) -> Result<Vec<&Trajectory>> {
    let mut refs: Vec<&Trajectory> = trajectories.iter().collect();
    refs.sort_by_key(|t| t.traj_id);
    for w in refs.windows(2) {
        if w[0].traj_id == w[1].traj_id {
            return Err(Error::InvalidParameter(format!(
                "duplicate trajectory id {}",
                w[0].traj_id
            )));
        }
    }
    Ok(refs)
}

/// Stacks every consecutive pair of every trajectory; columns are ordered by
/// `(traj_id, k)` regardless of input order.
pub fn build_snapshots(trajectories: &[Trajectory]) -> Result<SnapshotSet> {
    let refs = sorted_refs(trajectories)?;
    let first = refs
        .first()
        .ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    let n = first.state_dim();
    let p = first.output_dim();
    let mut cols = 0;
    for t in &refs {
        check_lengths(t)?;
        if t.state_dim() != n || t.output_dim() != p {
            return Err(Error::DimensionMismatch {
                context: "trajectory state/output dimension",
                expected: n,
                found: t.state_dim(),
            });
        }
        cols += t.states.len() - 1;
    }
    let mut xp = DMatrix::zeros(n, cols);
    let mut xf = DMatrix::zeros(n, cols);
    let mut yp = DMatrix::zeros(p, cols);
    let mut columns = Vec::with_capacity(cols);
    let mut j = 0;
    for t in &refs {
        for k in 0..t.states.len() - 1 {
            xp.column_mut(j).copy_from_slice(&t.states[k]);
            xf.column_mut(j).copy_from_slice(&t.states[k + 1]);
            yp.column_mut(j).copy_from_slice(&t.outputs[k]);
            columns.push(ColumnSource {
                traj_id: t.traj_id,
                k,
            });
            j += 1;
        }
    }
    SnapshotSet::new(xp, xf, yp, columns)
}

/// Seeded split into equal thirds by whole trajectories; the remainder goes to
/// train first, then validation. Each part is returned in `traj_id` order.
pub fn split(
    trajectories: &[Trajectory],
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>, Vec<Trajectory>)> {
    let total = trajectories.len();
    if total < 3 {
        return Err(Error::InsufficientData(format!(
            "split needs at least 3 trajectories, got {total}"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by_key(|&i| trajectories[i].traj_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = total / 3;
    let rem = total % 3;
    let n_train = base + usize::from(rem >= 1);
    let n_val = base + usize::from(rem >= 2);
    let take = |idx: &[usize]| {
        let mut v: Vec<Trajectory> = idx.iter().map(|&i| trajectories[i].clone()).collect();
        v.sort_by_key(|t| t.traj_id);
        v
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

/// Bijective affine change of coordinates `x̃ = P x + b`, `ỹ = Q y + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub p: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    p_inv: DMatrix<f64>,
    q_inv: DMatrix<f64>,
}

/// Default bound on the condition numbers of `P` and `Q`.
pub const MAX_TRANSFORM_CONDITION: f64 = 1e12;

impl AffineTransform {
    pub fn new(p: DMatrix<f64>, b: DVector<f64>, q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        Self::with_condition_bound(p, b, q, c, MAX_TRANSFORM_CONDITION)
    }

    pub fn with_condition_bound(
        p: DMatrix<f64>,
        b: DVector<f64>,
        q: DMatrix<f64>,
        c: DVector<f64>,
        bound: f64,
    ) -> Result<Self> {
        if !p.is_square() || p.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                context: "state transform P/b",
                expected: p.nrows(),
                found: b.len(),
            });
        }
        if !q.is_square() || q.nrows() != c.len() {
            return Err(Error::DimensionMismatch {
                context: "output transform Q/c",
                expected: q.nrows(),
                found: c.len(),
            });
        }
        for (name, m) in [("P", &p), ("Q", &q)] {
            let cond = linalg::condition_number(m);
            if !(cond < bound) {
                return Err(Error::InvalidParameter(format!(
                    "{name} condition number {cond:e} exceeds bound {bound:e}"
                )));
            }
        }
        let p_inv = linalg::inverse(&p)?;
        let q_inv = linalg::inverse(&q)?;
        Ok(Self {
            p,
            b,
            q,
            c,
            p_inv,
            q_inv,
        })
    }

    pub fn identity(n: usize, p: usize) -> Self {
        Self {
            p: DMatrix::identity(n, n),
            b: DVector::zeros(n),
            q: DMatrix::identity(p, p),
            c: DVector::zeros(p),
            p_inv: DMatrix::identity(n, n),
            q_inv: DMatrix::identity(p, p),
        }
    }

    pub fn p_inv(&self) -> &DMatrix<f64> {
        &self.p_inv
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    pub fn state_dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn apply_state(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p * x + &self.b
    }

    pub fn invert_state(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p_inv * (x - &self.b)
    }

    pub fn apply_output(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.q * y + &self.c
    }

    pub fn invert_output(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.q_inv * (y - &self.c)
    }

    pub fn apply_states(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.p * x;
        for mut col in out.column_iter_mut() {
            col += &self.b;
        }
        out
    }

    pub fn invert_states(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut shifted = x.clone();
        for mut col in shifted.column_iter_mut() {
            col -= &self.b;
        }
        &self.p_inv * shifted
    }

    pub fn apply_outputs(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.q * y;
        for mut col in out.column_iter_mut() {
            col += &self.c;
        }
        out
    }

    pub fn invert_outputs(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut shifted = y.clone();
        for mut col in shifted.column_iter_mut() {
            col -= &self.c;
        }
        &self.q_inv * shifted
    }

    pub fn apply(&self, s: &SnapshotSet) -> SnapshotSet {
        SnapshotSet {
            xp: self.apply_states(&s.xp),
            xf: self.apply_states(&s.xf),
            yp: self.apply_outputs(&s.yp),
            columns: s.columns.clone(),
        }
    }

    pub fn invert(&self, s: &SnapshotSet) -> SnapshotSet {
        SnapshotSet {
            xp: self.invert_states(&s.xp),
            xf: self.invert_states(&s.xf),
            yp: self.invert_outputs(&s.yp),
            columns: s.columns.clone(),
        }
    }

    /// The inverse map `x = P⁻¹ x̃ − P⁻¹ b`, `y = Q⁻¹ ỹ − Q⁻¹ c`.
    pub fn inverse(&self) -> Self {
        Self {
            b: -(&self.p_inv * &self.b),
            c: -(&self.q_inv * &self.c),
            p: self.p_inv.clone(),
            q: self.q_inv.clone(),
            p_inv: self.p.clone(),
            q_inv: self.q.clone(),
        }
    }

    /// `outer ∘ inner`: first `inner`, then `outer`.
    pub fn compose(outer: &Self, inner: &Self) -> Self {
        Self {
            p: &outer.p * &inner.p,
            b: &outer.p * &inner.b + &outer.b,
            q: &outer.q * &inner.q,
            c: &outer.q * &inner.c + &outer.c,
            p_inv: &inner.p_inv * &outer.p_inv,
            q_inv: &inner.q_inv * &outer.q_inv,
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits the per-coordinate standardization transform on `train`.
///
/// State statistics pool the `X_P` and `X_F` columns; output statistics use
/// `Y_P`. Standard deviations are population (÷N) values.
pub fn fit_standardization(train: &SnapshotSet) -> Result<AffineTransform> {
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training snapshots".into()));
    }
    let n = train.state_dim();
    let p = train.output_dim();
    let mut pd = DVector::zeros(n);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let vals = train.xp.row(i).iter().chain(train.xf.row(i).iter()).cloned().collect::<Vec<_>>();
        let (mu, sigma) = mean_std(vals.iter().cloned());
        if !(sigma > 0.0) || !(sigma.abs() > 1e-300) {
            return Err(Error::ZeroVariance {
                coordinate: format!("x{}", i + 1),
            });
        }
        pd[i] = 1.0 / sigma;
        b[i] = -mu / sigma;
    }
    let mut qd = DVector::zeros(p);
    let mut c = DVector::zeros(p);
    for i in 0..p {
        let (mu, sigma) = mean_std(train.yp.row(i).iter().cloned());
        if !(sigma > 0.0) {
            return Err(Error::ZeroVariance {
                coordinate: format!("y{}", i + 1),
            });
        }
        qd[i] = 1.0 / sigma;
        c[i] = -mu / sigma;
    }
    AffineTransform::new(
        DMatrix::from_diagonal(&pd),
        b,
        DMatrix::from_diagonal(&qd),
        c,
    )
}

/// Standardizes `train` with its own statistics and returns the transform,
/// which callers reuse on validation and test data.
pub fn standardize(train: &SnapshotSet) -> Result<(SnapshotSet, AffineTransform)> {
    let t = fit_standardization(train)?;
    Ok((t.apply(train), t))
}

/// Raw state indices stacked into delay block `j` (newest first):
/// `j·n_d + n_d − 1, …, j·n_d`.
pub fn delay_block_indices(j: usize, n_d: usize) -> impl Iterator<Item = usize> {
    let newest = j * n_d + n_d - 1;
    (0..n_d).map(move |i| newest - i)
}

/// Number of complete delay blocks in a trajectory of `len` samples.
pub fn delay_block_count(len: usize, n_d: usize) -> usize {
    len / n_d
}

/// Stacks raw states into the delay block `j`.
pub fn delay_block(states: &[Vec<f64>], j: usize, n_d: usize) -> Vec<f64> {
    delay_block_indices(j, n_d)
        .flat_map(|i| states[i].iter().cloned())
        .collect()
}

/// Splits a delay block back into raw states, oldest first.
pub fn unstack_block(block: &[f64], n: usize) -> Vec<Vec<f64>> {
    let n_d = block.len() / n;
    (0..n_d)
        .rev()
        .map(|i| block[i * n..(i + 1) * n].to_vec())
        .collect()
}

/// Rewrites a trajectory in delay-embedded coordinates: embedded state `j`
/// stacks raw states `j·n_d + n_d − 1` down to `j·n_d`, and its output is the
/// raw output at the newest index. Successive embedded states are `n_d` raw
/// steps apart (non-overlapping blocks).
pub fn embed_trajectory(t: &Trajectory, n_d: usize) -> Option<Trajectory> {
    let blocks = delay_block_count(t.states.len(), n_d);
    if blocks < 2 {
        return None;
    }
    let mut states = Vec::with_capacity(blocks);
    let mut outputs = Vec::with_capacity(blocks);
    for j in 0..blocks {
        let newest = j * n_d + n_d - 1;
        if newest >= t.outputs.len() {
            break;
        }
        states.push(delay_block(&t.states, j, n_d));
        outputs.push(t.outputs[newest].clone());
    }
    // a final block without an output still serves as the last X_F column
    if states.len() < blocks {
        states.push(delay_block(&t.states, blocks - 1, n_d));
    }
    Some(Trajectory {
        traj_id: t.traj_id,
        ic: t.ic.clone(),
        states,
        outputs,
    })
}

/// Snapshot matrices over delay-embedded states, plus how many trajectories
/// were too short to contribute a pair.
pub fn delay_embed(trajectories: &[Trajectory], n_d: usize) -> Result<(SnapshotSet, usize)> {
    if n_d == 0 {
        return Err(Error::InvalidParameter("n_d must be at least 1".into()));
    }
    let mut skipped = 0;
    let mut embedded = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        match embed_trajectory(t, n_d) {
            Some(e) => embedded.push(e),
            None => skipped += 1,
        }
    }
    Ok((build_snapshots(&embedded)?, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn traj(id: u64, len: usize) -> Trajectory {
        let states: Vec<Vec<f64>> = (0..len)
            .map(|k| vec![id as f64 * 100.0 + k as f64, -(k as f64)])
            .collect();
        let outputs = states.iter().map(|s| vec![s[0] * s[1]]).collect();
        Trajectory {
            traj_id: id,
            ic: states[0].clone(),
            states,
            outputs,
        }
    }

    #[test]
    fn snapshot_counts() {
        assert_eq!(build_snapshots(&[traj(0, 2)]).unwrap().len(), 1);
        let many: Vec<_> = (0..300).map(|i| traj(i, 31)).collect();
        assert_eq!(build_snapshots(&many).unwrap().len(), 9000);
    }

    #[test]
    fn snapshot_order_is_canonical() {
        let a: Vec<_> = (0..5).map(|i| traj(i, 4)).collect();
        let mut b = a.clone();
        b.reverse();
        b.swap(1, 3);
        assert_eq!(build_snapshots(&a).unwrap(), build_snapshots(&b).unwrap());
    }

    #[test]
    fn snapshot_rejects_mismatched_lengths() {
        let mut t = traj(0, 5);
        t.outputs.truncate(2);
        assert!(matches!(build_snapshots(&[t]), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn pairs_stay_within_trajectories() {
        let s = build_snapshots(&[traj(0, 3), traj(1, 3)]).unwrap();
        for j in 0..s.len() {
            assert_eq!(s.xf[(0, j)], s.xp[(0, j)] + 1.0);
        }
    }

    #[test]
    fn split_sizes() {
        let sizes = |n: u64| {
            let ts: Vec<_> = (0..n).map(|i| traj(i, 2)).collect();
            let (a, b, c) = split(&ts, 3).unwrap();
            (a.len(), b.len(), c.len())
        };
        assert_eq!(sizes(300), (100, 100, 100));
        assert_eq!(sizes(3), (1, 1, 1));
        assert_eq!(sizes(4), (2, 1, 1));
        assert_eq!(sizes(5), (2, 2, 1));
        assert!(split(&[traj(0, 2), traj(1, 2)], 0).is_err());
    }

    #[test]
    fn hand_standardization() {
        let s = SnapshotSet::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_row_slice(1, 1, &[5.0]),
            vec![ColumnSource { traj_id: 0, k: 0 }],
        );
        // single output sample has zero variance
        assert!(matches!(
            standardize(&s.clone().unwrap()),
            Err(Error::ZeroVariance { .. })
        ));
        let s = SnapshotSet::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[3.0, 3.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 2.0]),
            vec![ColumnSource { traj_id: 0, k: 0 }, ColumnSource { traj_id: 0, k: 1 }],
        )
        .unwrap();
        let (z, t) = standardize(&s).unwrap();
        assert!((t.p[(0, 0)] - 1.0).abs() < 1e-15 && (t.b[0] + 2.0).abs() < 1e-15);
        assert_eq!(z.xp[(0, 0)], -1.0);
        assert_eq!(z.xf[(0, 0)], 1.0);
    }

    #[test]
    fn zero_variance_names_coordinate() {
        let ts: Vec<_> = (0..3)
            .map(|i| {
                let mut t = traj(i, 4);
                for s in t.states.iter_mut() {
                    s[1] = 2.0;
                }
                t
            })
            .collect();
        let s = build_snapshots(&ts).unwrap();
        assert_eq!(
            standardize(&s).unwrap_err(),
            Error::ZeroVariance {
                coordinate: "x2".into()
            }
        );
    }

    #[test]
    fn delay_embedding_shapes() {
        let t = traj(0, 101);
        let (s, skipped) = delay_embed(core::slice::from_ref(&t), 6).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(s.state_dim(), 12);
        assert_eq!(s.len(), 101 / 6 - 1);
        let (s3, _) = delay_embed(&[traj(0, 20)], 3).unwrap();
        assert_eq!(s3.state_dim(), 6);
        let (s1, _) = delay_embed(core::slice::from_ref(&t), 1).unwrap();
        assert_eq!(s1, build_snapshots(&[t]).unwrap());
        let (_, skipped) = delay_embed(&[traj(0, 5), traj(1, 30)], 3).unwrap();
        assert_eq!(skipped, 1);
    }

    #[test]
    fn unstack_inverts_block() {
        let t = traj(2, 12);
        let b = delay_block(&t.states, 1, 4);
        assert_eq!(unstack_block(&b, 2), t.states[4..8].to_vec());
    }
}
