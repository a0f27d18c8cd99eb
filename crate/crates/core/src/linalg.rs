//! Small dense linear-algebra helpers that nalgebra does not provide directly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SpcrError};
use crate::scalar::Scalar;

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and the matching columns.
pub(crate) fn sorted_symmetric_eigen<T: Scalar>(a: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let sym = symmetrize(a);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = eig.eigenvectors.select_columns(order.iter());
    for mut col in vectors.column_iter_mut() {
        orient_column(&mut col);
    }
    (values, vectors)
}

/// Flips the sign so that the entry of largest magnitude is positive.
pub(crate) fn orient_column<T: Scalar, S>(
    col: &mut nalgebra::Matrix<T, nalgebra::Dyn, nalgebra::U1, S>,
) where
    S: nalgebra::StorageMut<T, nalgebra::Dyn, nalgebra::U1>,
{
    let mut best = 0;
    let mut best_abs = T::zero();
    for (i, v) in col.iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if col.nrows() > 0 && col[best] < T::zero() {
        col.neg_mut();
    }
}

pub(crate) fn symmetrize<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let half = T::cst(0.5);
    (a + a.transpose()) * half
}

/// Orthonormal basis of the column span of `a`, by modified Gram-Schmidt with
/// one re-orthogonalization pass. Columns whose residual norm falls below
/// `rel_tol` times the largest column norm are dropped.
pub fn orthonormal_basis<T: Scalar>(a: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let scale = a
        .column_iter()
        .map(|c| c.norm())
        .fold(T::zero(), |m, v| if v > m { v } else { m });
    let mut basis: Vec<DVector<T>> = Vec::new();
    if scale == T::zero() {
        return DMatrix::zeros(a.nrows(), 0);
    }
    for col in a.column_iter() {
        let mut v: DVector<T> = col.into_owned();
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, T::one());
            }
        }
        let norm = v.norm();
        if norm > rel_tol * scale {
            basis.push(v / norm);
        }
    }
    let mut q = DMatrix::zeros(a.nrows(), basis.len());
    for (j, b) in basis.iter().enumerate() {
        q.set_column(j, b);
    }
    for mut col in q.column_iter_mut() {
        orient_column(&mut col);
    }
    q
}

/// Principal angles (radians, ascending) between the column spans of `a` and
/// `b`. Both must have full column rank and the same number of columns.
///
/// Computed from the singular values of `(I - Q_a Q_aᵀ) Q_b`, which are the
/// sines of the angles; this stays accurate for nearly coincident subspaces.
pub fn principal_angles<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<Vec<T>> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(SpcrError::Dimension(format!(
            "subspace bases {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let tol = T::eps() * T::cst(1e3);
    let qa = orthonormal_basis(a, tol);
    let qb = orthonormal_basis(b, tol);
    if qa.ncols() != a.ncols() || qb.ncols() != b.ncols() {
        return Err(SpcrError::InvalidDirection(
            "basis is rank deficient".into(),
        ));
    }
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let sv = residual.svd(false, false).singular_values;
    let mut angles: Vec<T> = sv
        .iter()
        .map(|&s| if s > T::one() { T::one() } else { s }.asin())
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(angles)
}
