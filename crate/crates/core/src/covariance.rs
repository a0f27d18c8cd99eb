//! Sample covariance, banding, random-split bandwidth selection and PSD repair.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Result, SpcrError};
use crate::linalg::sorted_symmetric_eigen;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Default relative eigenvalue floor used by [`psd_repair`].
pub const DEFAULT_PSD_FLOOR: f64 = 1e-8;

/// A banded covariance estimate ready for the direction solver.
///
/// Entries beyond the band are exactly zero unless `psd_repaired` is set, in
/// which case the matrix is the eigenvalue-floored reconstruction of the
/// banded estimate and is generally dense.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedCovariance<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub bandwidth: usize,
    pub psd_repaired: bool,
    /// Smallest eigenvalue of the banded estimate before repair (zero when no
    /// eigensolve was needed).
    pub min_eig_clipped: T,
}

/// `XᵀX/n` for centered `X`.
pub fn sample_covariance<T: Scalar>(x: &DMatrix<T>) -> Result<DMatrix<T>> {
    if x.nrows() == 0 {
        return Err(SpcrError::EmptyDataset);
    }
    let n = T::from_usize_lossy(x.nrows());
    Ok(crate::linalg::symmetrize(&(x.tr_mul(x) / n)))
}

/// Zeroes entries with `|i - j| > b`.
pub fn band<T: Scalar>(matrix: &DMatrix<T>, b: usize) -> DMatrix<T> {
    let mut out = matrix.clone();
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            if i.abs_diff(j) > b {
                out[(i, j)] = T::zero();
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BandSelectConfig {
    pub n_splits: usize,
    /// Size of the first half; `floor(n/3)` when unset.
    pub n1: Option<usize>,
    /// Candidate bandwidths; `0..=min(p-1, 50)` when unset.
    pub candidate_bandwidths: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for BandSelectConfig {
    fn default() -> Self {
        Self {
            n_splits: 20,
            n1: None,
            candidate_bandwidths: None,
            seed: 0,
        }
    }
}

impl BandSelectConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn candidates(&self, p: usize) -> Vec<usize> {
        match &self.candidate_bandwidths {
            Some(c) => c.clone(),
            None => (0..=p.saturating_sub(1).min(50)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSelection<T: Scalar> {
    pub bandwidth: usize,
    pub candidates: Vec<usize>,
    /// Average split risk for each candidate, aligned with `candidates`.
    pub risk: Vec<T>,
}

/// Per-lag entrywise absolute sums: `(Σ_{|i-j|=d} |a-b|, Σ_{|i-j|=d} |b|)`.
fn lag_sums<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> (Vec<T>, Vec<T>) {
    let p = a.nrows();
    let mut diff = vec![T::zero(); p];
    let mut target = vec![T::zero(); p];
    for j in 0..p {
        for i in 0..p {
            let d = i.abs_diff(j);
            diff[d] += (a[(i, j)] - b[(i, j)]).abs();
            target[d] += b[(i, j)].abs();
        }
    }
    (diff, target)
}

/// Chooses the banding bandwidth by repeated random splits.
///
/// For each split the first-half covariance is banded and compared with the
/// second-half covariance in the entrywise ℓ1 norm; the candidate with the
/// smallest average risk wins, ties going to the smaller bandwidth.
pub fn select_bandwidth<T: Scalar>(
    x: &DMatrix<T>,
    config: &BandSelectConfig,
) -> Result<BandwidthSelection<T>> {
    let (n, p) = x.shape();
    if n < 3 {
        return Err(SpcrError::InvalidParameter(format!(
            "bandwidth selection needs n >= 3, got {n}"
        )));
    }
    if config.n_splits == 0 {
        return Err(SpcrError::InvalidConfig(
            "n_splits must be at least 1".into(),
        ));
    }
    let n1 = config.n1.unwrap_or(n / 3);
    if n1 == 0 || n1 >= n {
        return Err(SpcrError::InvalidConfig(format!(
            "first half size {n1} not in 1..{n}"
        )));
    }
    let candidates = config.candidates(p);
    if candidates.is_empty() {
        return Err(SpcrError::InvalidConfig(
            "empty candidate bandwidth grid".into(),
        ));
    }

    let per_split: Vec<(Vec<T>, Vec<T>)> = (0..config.n_splits)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(config.seed, s as u64, Stream::Split);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let first = x.select_rows(idx[..n1].iter());
            let second = x.select_rows(idx[n1..].iter());
            let s1 = sample_covariance(&first)?;
            let s2 = sample_covariance(&second)?;
            Ok(lag_sums(&s1, &s2))
        })
        .collect::<Result<_>>()?;

    let splits = T::from_usize_lossy(config.n_splits);
    let risk: Vec<T> = candidates
        .iter()
        .map(|&b| {
            let total = per_split.iter().fold(T::zero(), |acc, (diff, target)| {
                let inside = diff.iter().take(b + 1).fold(T::zero(), |s, &v| s + v);
                let outside = target.iter().skip(b + 1).fold(T::zero(), |s, &v| s + v);
                acc + inside + outside
            });
            total / splits
        })
        .collect();

    let mut best = 0;
    for i in 1..candidates.len() {
        let better =
            risk[i] < risk[best] || (risk[i] == risk[best] && candidates[i] < candidates[best]);
        if better {
            best = i;
        }
    }
    Ok(BandwidthSelection {
        bandwidth: candidates[best],
        candidates,
        risk,
    })
}

/// Raises eigenvalues below `floor_eps·λ_max` to that floor.
///
/// Returns the input untouched when no eigenvalue needs raising. The second
/// value is the smallest eigenvalue found.
pub fn psd_repair<T: Scalar>(matrix: &DMatrix<T>, floor_eps: T) -> Result<(DMatrix<T>, bool, T)> {
    let p = matrix.nrows();
    if matrix.ncols() != p {
        return Err(SpcrError::Dimension(
            "PSD repair needs a square matrix".into(),
        ));
    }
    if p == 0 {
        return Ok((matrix.clone(), false, T::zero()));
    }
    let (values, vectors) = sorted_symmetric_eigen(matrix);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SpcrError::Numerical(
            "eigensolve produced non-finite values".into(),
        ));
    }
    let largest = values[0].max(T::zero());
    let floor = floor_eps * largest;
    let smallest = values[p - 1];
    if smallest >= floor {
        return Ok((matrix.clone(), false, smallest));
    }
    let mut scaled = vectors.clone();
    for (mut col, &v) in scaled.column_iter_mut().zip(values.iter()) {
        col *= v.max(floor);
    }
    let repaired = crate::linalg::symmetrize(&(scaled * vectors.transpose()));
    Ok((repaired, true, smallest))
}

/// Sample covariance of centered `x`, banded at `bandwidth`, then PSD-repaired.
pub fn banded_covariance<T: Scalar>(
    x: &DMatrix<T>,
    bandwidth: usize,
    floor_eps: T,
) -> Result<BandedCovariance<T>> {
    let banded = band(&sample_covariance(x)?, bandwidth);
    let (matrix, psd_repaired, min_eig) = psd_repair(&banded, floor_eps)?;
    Ok(BandedCovariance {
        matrix,
        bandwidth,
        psd_repaired,
        min_eig_clipped: min_eig,
    })
}
