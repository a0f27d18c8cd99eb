//! Cross-moment matrices, leading eigenpairs and functional powers of
//! symmetric matrices.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{FunctionalDataset, Grid};
use crate::error::{Result, SpcrError};
use crate::linalg::{orient_column, sorted_symmetric_eigen};
use crate::scalar::Scalar;

/// Descending eigenvalues with orthonormal eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem<T: Scalar> {
    pub values: DVector<T>,
    pub vectors: DMatrix<T>,
    /// Number of eigenvalues that were numerically nonzero, when fewer than requested.
    pub rank_deficient: Option<usize>,
}

impl<T: Scalar> EigenSystem<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// First `k` eigenpairs.
    pub fn truncate(&self, k: usize) -> Self {
        let k = k.min(self.len());
        Self {
            values: self.values.rows(0, k).into_owned(),
            vectors: self.vectors.columns(0, k).into_owned(),
            rank_deficient: self.rank_deficient.filter(|&r| r < k),
        }
    }
}

/// The cross-moment `Σ̂_xy = M·diag(w)·Mᵀ` with its factor `M = XᵀY/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMoment<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub factor: DMatrix<T>,
    pub weights: DVector<T>,
    /// Number of samples the factor was built from.
    pub n: usize,
}

impl<T: Scalar> CrossMoment<T> {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    /// `M·diag(w)^{1/2}`, whose outer product is the cross-moment.
    pub fn weighted_factor(&self) -> DMatrix<T> {
        let mut f = self.factor.clone();
        for (mut col, &w) in f.column_iter_mut().zip(self.weights.iter()) {
            col *= w.sqrt();
        }
        f
    }

    /// Leading `k` eigenpairs. The `L×L` Gram route is used when the grid and
    /// the sample together are smaller than the covariate dimension.
    pub fn top_k_eigen(&self, k: usize) -> Result<EigenSystem<T>> {
        let p = self.p();
        if self.weights.len() + self.n < p {
            top_k_eigen_of_factor(&self.weighted_factor(), k)
        } else {
            top_k_eigen(&self.matrix, k)
        }
    }
}

/// `Σ̂_xy` from a centered dataset.
pub fn cross_moment<T: Scalar>(dataset: &FunctionalDataset<T>) -> Result<CrossMoment<T>> {
    if !dataset.is_centered() {
        return Err(SpcrError::Precondition(
            "cross moment needs a centered dataset".into(),
        ));
    }
    if dataset.n() == 0 {
        return Err(SpcrError::EmptyDataset);
    }
    let n = T::from_usize_lossy(dataset.n());
    let factor = dataset.x().tr_mul(dataset.y()) / n;
    let weights = dataset.grid().weights().clone();
    let matrix = weighted_outer(&factor, &weights);
    Ok(CrossMoment {
        matrix,
        factor,
        weights,
        n: dataset.n(),
    })
}

/// `F·diag(w)·Fᵀ`, symmetrized.
fn weighted_outer<T: Scalar>(factor: &DMatrix<T>, weights: &DVector<T>) -> DMatrix<T> {
    let mut scaled = factor.clone();
    for (mut col, &w) in scaled.column_iter_mut().zip(weights.iter()) {
        col *= w;
    }
    let m = &scaled * factor.transpose();
    crate::linalg::symmetrize(&m)
}

/// `∫ (Σ_x β(t))(Σ_x β(t))ᵀ dt` by quadrature, with `beta` sampled as p×L.
pub fn population_cross_moment<T: Scalar>(
    sigma_x: &DMatrix<T>,
    beta: &DMatrix<T>,
    grid: &Grid<T>,
) -> Result<DMatrix<T>> {
    let p = sigma_x.nrows();
    if sigma_x.ncols() != p || beta.nrows() != p || beta.ncols() != grid.len() {
        return Err(SpcrError::Dimension(format!(
            "sigma_x {}x{}, beta {}x{}, grid {}",
            sigma_x.nrows(),
            sigma_x.ncols(),
            beta.nrows(),
            beta.ncols(),
            grid.len()
        )));
    }
    let moments = sigma_x * beta;
    Ok(weighted_outer(&moments, grid.weights()))
}

fn rank_threshold<T: Scalar>(largest: T, dim: usize) -> T {
    let largest = if largest > T::zero() {
        largest
    } else {
        T::zero()
    };
    largest * T::eps() * T::from_usize_lossy(dim.max(1)) * T::cst(10.0)
}

/// Leading `k` eigenpairs of a symmetric matrix by a dense solve.
pub fn top_k_eigen<T: Scalar>(a: &DMatrix<T>, k: usize) -> Result<EigenSystem<T>> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(SpcrError::Dimension(
            "eigensolve needs a square matrix".into(),
        ));
    }
    if k == 0 || k > p {
        return Err(SpcrError::InvalidParameter(format!(
            "k = {k} outside 1..={p}"
        )));
    }
    let (values, vectors) = sorted_symmetric_eigen(a);
    let thresh = rank_threshold(values[0], p);
    let rank = values.iter().filter(|&&v| v > thresh).count();
    let mut sys = EigenSystem {
        values: values.rows(0, k).into_owned(),
        vectors: vectors.columns(0, k).into_owned(),
        rank_deficient: None,
    };
    if rank < k {
        log::warn!("requested {k} eigenpairs but numerical rank is {rank}");
        for j in rank..k {
            sys.values[j] = T::zero();
        }
        sys.rank_deficient = Some(rank);
    }
    Ok(sys)
}

/// Leading `k` eigenpairs of `F·Fᵀ` (p×p) through the m×m Gram matrix `FᵀF`.
///
/// Eigenvectors beyond the numerical rank are completed with an orthonormal
/// basis of the complement and carry zero eigenvalues.
pub fn top_k_eigen_of_factor<T: Scalar>(factor: &DMatrix<T>, k: usize) -> Result<EigenSystem<T>> {
    let p = factor.nrows();
    if k == 0 || k > p {
        return Err(SpcrError::InvalidParameter(format!(
            "k = {k} outside 1..={p}"
        )));
    }
    let gram = factor.tr_mul(factor);
    let (gvals, gvecs) = sorted_symmetric_eigen(&gram);
    let thresh = rank_threshold(
        gvals.get(0).copied().unwrap_or(T::zero()),
        p.max(gram.nrows()),
    );
    let mut values = DVector::zeros(k);
    let mut vectors = DMatrix::zeros(p, k);
    let mut rank = 0;
    for j in 0..k.min(gvals.len()) {
        if gvals[j] <= thresh {
            break;
        }
        let mut u = factor * gvecs.column(j);
        let norm = u.norm();
        if norm == T::zero() {
            break;
        }
        u /= norm;
        orient_column(&mut u);
        values[j] = gvals[j];
        vectors.set_column(j, &u);
        rank += 1;
    }
    let rank_deficient = if rank < k {
        log::warn!("requested {k} eigenpairs but numerical rank is {rank}");
        complete_basis(&mut vectors, rank);
        Some(rank)
    } else {
        None
    };
    Ok(EigenSystem {
        values,
        vectors,
        rank_deficient,
    })
}

/// Fills columns `filled..` with unit vectors orthogonal to everything before.
fn complete_basis<T: Scalar>(vectors: &mut DMatrix<T>, filled: usize) {
    let p = vectors.nrows();
    let mut next = filled;
    let mut candidate = 0;
    while next < vectors.ncols() && candidate < p {
        let mut v = DVector::<T>::zeros(p);
        v[candidate] = T::one();
        candidate += 1;
        for _ in 0..2 {
            for j in 0..next {
                let q = vectors.column(j).into_owned();
                let proj = q.dot(&v);
                v.axpy(-proj, &q, T::one());
            }
        }
        let norm = v.norm();
        if norm > T::cst(1e-6) {
            v /= norm;
            orient_column(&mut v);
            vectors.set_column(next, &v);
            next += 1;
        }
    }
}

/// Exponents supported by [`matrix_power`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixExponent {
    Half,
    NegHalf,
    NegOne,
}

/// `A^e` for symmetric PSD `A` via its eigendecomposition.
///
/// For negative exponents eigenvalues are floored at `1e-10·λ_max`.
pub fn matrix_power<T: Scalar>(a: &DMatrix<T>, exponent: MatrixExponent) -> Result<DMatrix<T>> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(SpcrError::Dimension(
            "matrix power needs a square matrix".into(),
        ));
    }
    if p == 0 {
        return Ok(a.clone());
    }
    let (values, vectors) = sorted_symmetric_eigen(a);
    let largest = values[0];
    let neg_tol = T::cst(1e-10) * largest.abs().max(T::one());
    if let Some(&bad) = values.iter().find(|&&v| v < -neg_tol) {
        return Err(SpcrError::NotPsd(bad.to_f64_lossy()));
    }
    let floor = T::cst(1e-10) * largest;
    let mapped = values.map(|v| match exponent {
        MatrixExponent::Half => v.max(T::zero()).sqrt(),
        MatrixExponent::NegHalf | MatrixExponent::NegOne if largest <= T::zero() => T::zero(),
        MatrixExponent::NegHalf => T::one() / v.max(floor).sqrt(),
        MatrixExponent::NegOne => T::one() / v.max(floor),
    });
    let mut scaled = vectors.clone();
    for (mut col, &m) in scaled.column_iter_mut().zip(mapped.iter()) {
        col *= m;
    }
    Ok(crate::linalg::symmetrize(&(scaled * vectors.transpose())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::principal_angles;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn check_eigen_invariants(a: &DMatrix<f64>, sys: &EigenSystem<f64>) {
        let k = sys.len();
        for j in 1..k {
            assert!(sys.values[j - 1] >= sys.values[j]);
        }
        let gram = sys.vectors.transpose() * &sys.vectors;
        assert!((gram - DMatrix::identity(k, k)).amax() < 1e-10);
        let scale = a.norm();
        for j in 0..k {
            let v = sys.vectors.column(j);
            let r = a * v - v * sys.values[j];
            assert!(r.norm() <= 1e-8 * scale.max(1e-300));
        }
    }

    #[test]
    fn identity_and_diagonal() {
        let id = DMatrix::<f64>::identity(3, 3);
        let sys = top_k_eigen(&id, 2).unwrap();
        assert_eq!(sys.values.as_slice(), &[1.0, 1.0]);
        check_eigen_invariants(&id, &sys);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let sys = top_k_eigen(&d, 2).unwrap();
        assert_eq!(sys.values.as_slice(), &[3.0, 2.0]);
        assert!((sys.vectors.column(0) - DVector::from_vec(vec![1.0, 0.0, 0.0])).norm() < 1e-14);
        assert!((sys.vectors.column(1) - DVector::from_vec(vec![0.0, 1.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn cross_moment_small_cases() {
        let grid = Grid::new(DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let zero = FunctionalDataset::from_centered(
            random_matrix(4, 3, 1),
            DMatrix::zeros(4, 2),
            grid,
            DVector::zeros(3),
            DVector::zeros(2),
        )
        .unwrap();
        assert!(cross_moment(&zero)
            .unwrap()
            .matrix
            .iter()
            .all(|&v| v == 0.0));

        let raw = FunctionalDataset::new(
            random_matrix(4, 3, 2),
            random_matrix(4, 2, 3),
            zero.grid().clone(),
        )
        .unwrap();
        assert!(matches!(
            cross_moment(&raw),
            Err(SpcrError::Precondition(_))
        ));
    }

    #[test]
    fn cross_moment_outer_product() {
        // a two-point grid with unit total weight at the first point only is
        // not constructible, so build the moment by hand: n=1, L=1, w=1
        let factor = DMatrix::from_row_slice(2, 1, &[2.0, 0.0]);
        let m = weighted_outer(&factor, &DVector::from_vec(vec![1.0]));
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn cross_moment_matches_naive_sum() {
        let grid = Grid::uniform(7, 0.0, 1.0).unwrap();
        let d = FunctionalDataset::new(random_matrix(9, 4, 4), random_matrix(9, 7, 5), grid)
            .unwrap()
            .centered()
            .unwrap();
        let cm = cross_moment(&d).unwrap();
        let mut naive = DMatrix::<f64>::zeros(4, 4);
        for l in 0..7 {
            let v = d.x().transpose() * d.y().column(l);
            naive += &v * v.transpose() * d.grid().weights()[l];
        }
        naive /= 81.0;
        assert!((&cm.matrix - &naive).norm() <= 1e-12 * naive.norm());
        let (vals, _) = sorted_symmetric_eigen(&cm.matrix);
        assert!(vals.iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn gram_route_matches_dense() {
        let (p, len, n) = (40, 11, 6);
        let grid = Grid::uniform(len, 0.0, 1.0).unwrap();
        let d = FunctionalDataset::new(random_matrix(n, p, 6), random_matrix(n, len, 7), grid)
            .unwrap()
            .centered()
            .unwrap();
        let cm = cross_moment(&d).unwrap();
        assert!(len + n < p);
        let k = 4;
        let gram = cm.top_k_eigen(k).unwrap();
        let dense = top_k_eigen(&cm.matrix, k).unwrap();
        for j in 0..k {
            assert!((gram.values[j] - dense.values[j]).abs() <= 1e-9 * dense.values[0]);
        }
        let angles = principal_angles(&gram.vectors, &dense.vectors).unwrap();
        assert!(angles.iter().all(|&a| a < 1e-8), "{angles:?}");
        check_eigen_invariants(&cm.matrix, &gram);
    }

    #[test]
    fn rank_deficient_request_is_completed() {
        let f = DMatrix::from_row_slice(4, 1, &[1.0f64, 1.0, 0.0, 0.0]);
        let sys = top_k_eigen_of_factor(&f, 3).unwrap();
        assert_eq!(sys.rank_deficient, Some(1));
        assert!((sys.values[0] - 2.0).abs() < 1e-12);
        assert_eq!(sys.values[1], 0.0);
        let gram = sys.vectors.transpose() * &sys.vectors;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn population_moment_examples() {
        let grid = Grid::uniform(11, 0.0, 1.0).unwrap();
        let sigma = DMatrix::<f64>::identity(3, 3);
        let zero = population_cross_moment(&sigma, &DMatrix::zeros(3, 11), &grid).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let beta = DMatrix::from_fn(3, 11, |i, _| v[i]);
        let m = population_cross_moment(&sigma, &beta, &grid).unwrap();
        assert!((m - &v * v.transpose()).amax() < 1e-12);
        assert!(population_cross_moment(&sigma, &DMatrix::zeros(2, 11), &grid).is_err());
    }

    #[test]
    fn matrix_power_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        for e in [
            MatrixExponent::Half,
            MatrixExponent::NegHalf,
            MatrixExponent::NegOne,
        ] {
            assert!((matrix_power(&id, e).unwrap() - &id).amax() < 1e-14);
        }
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = matrix_power(&d, MatrixExponent::Half).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-14);

        let g = random_matrix(20, 30, 8);
        let a = &g * g.transpose() / 30.0;
        let half = matrix_power(&a, MatrixExponent::Half).unwrap();
        assert!((&half * &half - &a).norm() < 1e-9);
        let inv_half = matrix_power(&a, MatrixExponent::NegHalf).unwrap();
        assert!((&inv_half * &a * &inv_half - DMatrix::identity(20, 20)).amax() < 1e-8);
        let inv = matrix_power(&a, MatrixExponent::NegOne).unwrap();
        assert!((&inv * &a - DMatrix::identity(20, 20)).amax() < 1e-8);

        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            matrix_power(&indefinite, MatrixExponent::NegHalf),
            Err(SpcrError::NotPsd(_))
        ));
    }
}
