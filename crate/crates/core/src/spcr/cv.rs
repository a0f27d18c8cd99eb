//! Fold assignment and the generic cross-validation grid search.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::FunctionalDataset;
use crate::error::{Result, SpcrError};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Fold label of every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    labels: Vec<usize>,
    folds: usize,
}

impl FoldAssignment {
    /// Labels `i mod folds` placed along a seeded random permutation.
    pub fn random(n: usize, folds: usize, seed: u64) -> Result<Self> {
        check_fold_sizes(n, folds)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from_seed(seed));
        let mut labels = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            labels[row] = pos % folds;
        }
        Ok(Self { labels, folds })
    }

    pub fn from_labels(labels: Vec<usize>, folds: usize) -> Result<Self> {
        check_fold_sizes(labels.len(), folds)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= folds) {
            return Err(SpcrError::InvalidConfig(format!(
                "fold label {bad} >= {folds}"
            )));
        }
        for f in 0..folds {
            let size = labels.iter().filter(|&&l| l == f).count();
            if size == 0 || labels.len() - size < 2 {
                return Err(SpcrError::InvalidConfig(format!("fold {f} is degenerate")));
            }
        }
        Ok(Self { labels, folds })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(training rows, held-out rows)` of fold `f`, each in ascending order.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.labels.len()).partition(|&i| self.labels[i] == f);
        (train, test)
    }

    /// The assignment seen after reordering rows: row `i` of the permuted
    /// data is row `perm[i]` of the original.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            folds: self.folds,
        }
    }
}

fn check_fold_sizes(n: usize, folds: usize) -> Result<()> {
    if folds < 2 {
        return Err(SpcrError::InvalidConfig(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if n < folds {
        return Err(SpcrError::InvalidConfig(format!(
            "n = {n} is smaller than folds = {folds}"
        )));
    }
    if n / folds < 2 {
        return Err(SpcrError::InvalidConfig(format!(
            "folds of fewer than 2 rows (n = {n}, folds = {folds})"
        )));
    }
    Ok(())
}

/// Mean held-out error over the `K × axis` grid.
///
/// The second axis is the penalty for penalized methods (descending), the
/// retained feature count for screening, and a single dummy entry otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CvTable<T: Scalar> {
    pub k_values: Vec<usize>,
    pub axis: Vec<f64>,
    /// `errors[(k_index, axis_index)]`; failed cells are `+∞`.
    pub errors: DMatrix<T>,
    pub failed_cells: usize,
}

impl<T: Scalar> CvTable<T> {
    /// Minimizer, ties broken toward smaller `K` and then earlier axis index.
    pub fn argmin(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for ki in 0..self.errors.nrows() {
            for ai in 0..self.errors.ncols() {
                let e = self.errors[(ki, ai)];
                if !e.is_finite() {
                    continue;
                }
                if best.is_none_or(|(bk, ba)| e < self.errors[(bk, ba)]) {
                    best = Some((ki, ai));
                }
            }
        }
        best
    }
}

/// Error of every `(K, axis)` cell on one fold; `None` marks a failed cell.
pub(crate) type FoldGrid<T> = Vec<Vec<Option<T>>>;

/// Runs `evaluate(train, held_out)` on every fold and averages.
///
/// Training rows are centered by their own means and the held-out rows by the
/// training means.
pub(crate) fn run_cv<T, F>(
    dataset: &FunctionalDataset<T>,
    folds: &FoldAssignment,
    k_max: usize,
    axis: &[f64],
    evaluate: F,
) -> Result<CvTable<T>>
where
    T: Scalar,
    F: Fn(&FunctionalDataset<T>, &FunctionalDataset<T>) -> Result<FoldGrid<T>> + Sync,
{
    if folds.len() != dataset.n() {
        return Err(SpcrError::Dimension(format!(
            "fold assignment covers {} rows, dataset has {}",
            folds.len(),
            dataset.n()
        )));
    }
    let per_fold: Vec<Option<FoldGrid<T>>> = (0..folds.folds())
        .into_par_iter()
        .map(|f| {
            let (train_rows, test_rows) = folds.split(f);
            let train = dataset.subset(&train_rows).centered().ok()?;
            let test = center_with(&dataset.subset(&test_rows), &train).ok()?;
            match evaluate(&train, &test) {
                Ok(grid) => Some(grid),
                Err(e) => {
                    log::warn!("cross-validation fold {f} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let mut errors = DMatrix::from_element(k_max, axis.len(), T::zero());
    let mut failed_cells = 0;
    for ki in 0..k_max {
        for ai in 0..axis.len() {
            let mut total = T::zero();
            let mut ok = true;
            for grid in &per_fold {
                match grid
                    .as_ref()
                    .and_then(|g| g.get(ki))
                    .and_then(|row| row.get(ai))
                    .copied()
                    .flatten()
                {
                    Some(e) if e.is_finite() => total += e,
                    _ => ok = false,
                }
            }
            if ok {
                errors[(ki, ai)] = total / T::from_usize_lossy(folds.folds());
            } else {
                errors[(ki, ai)] = T::one() / T::zero();
                failed_cells += 1;
            }
        }
    }
    let table = CvTable {
        k_values: (1..=k_max).collect(),
        axis: axis.to_vec(),
        errors,
        failed_cells,
    };
    if table.argmin().is_none() {
        return Err(SpcrError::Fit("every cross-validation cell failed".into()));
    }
    Ok(table)
}

/// `rows` centered with the means recorded in `reference`.
pub(crate) fn center_with<T: Scalar>(
    rows: &FunctionalDataset<T>,
    reference: &FunctionalDataset<T>,
) -> Result<FunctionalDataset<T>> {
    let mut x = rows.x().clone();
    let mut y = rows.y().clone();
    crate::dataset::subtract_row_vector(&mut x, reference.x_means());
    crate::dataset::subtract_row_vector(&mut y, reference.y_means());
    FunctionalDataset::from_centered(
        x,
        y,
        rows.grid().clone(),
        reference.x_means().clone(),
        reference.y_means().clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_folds_are_balanced_and_seeded() {
        let a = FoldAssignment::random(23, 5, 3).unwrap();
        let b = FoldAssignment::random(23, 5, 3).unwrap();
        assert_eq!(a, b);
        for f in 0..5 {
            let size = a.labels().iter().filter(|&&l| l == f).count();
            assert!(size == 4 || size == 5);
        }
        assert_ne!(a, FoldAssignment::random(23, 5, 4).unwrap());
    }

    #[test]
    fn degenerate_folds_rejected() {
        assert!(matches!(
            FoldAssignment::random(4, 5, 0),
            Err(SpcrError::InvalidConfig(_))
        ));
        assert!(matches!(
            FoldAssignment::random(9, 5, 0),
            Err(SpcrError::InvalidConfig(_))
        ));
        assert!(matches!(
            FoldAssignment::random(10, 1, 0),
            Err(SpcrError::InvalidConfig(_))
        ));
        assert!(FoldAssignment::random(10, 5, 0).is_ok());
    }

    #[test]
    fn argmin_tie_breaks() {
        let t = CvTable {
            k_values: vec![1, 2],
            axis: vec![1.0, 0.5],
            errors: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]),
            failed_cells: 0,
        };
        assert_eq!(t.argmin(), Some((0, 1)));
        let inf = f64::INFINITY;
        let t = CvTable {
            k_values: vec![1],
            axis: vec![1.0],
            errors: DMatrix::from_row_slice(1, 1, &[inf]),
            failed_cells: 1,
        };
        assert_eq!(t.argmin(), None);
    }
}
