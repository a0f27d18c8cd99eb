//! Evaluation quantities: prediction error, subspace loss, direction error
//! norms and the empirical integrated residual sum of squares.

mod harness;

pub use harness::{
    replicate_harness, HarnessConfig, HarnessMethod, HarnessResult, ReplicateRecord,
    ReplicateSummary,
};

use nalgebra::{DMatrix, DVector};

use crate::dataset::FunctionalDataset;
use crate::error::{Result, SpcrError};
use crate::linalg::orthonormal_basis;
use crate::scalar::Scalar;
use crate::spcr::{predict, SpcrModel};

/// Mean integrated squared prediction error of `model` on `test`.
///
/// Centered test data is mapped back to its raw scale first, so the model's
/// own centering is applied consistently.
pub fn prediction_error<T: Scalar>(model: &SpcrModel<T>, test: &FunctionalDataset<T>) -> Result<T> {
    let (gm, gt) = (model.grid.points(), test.grid().points());
    let scale = T::one().max(model.grid.span().abs());
    if gm.len() != gt.len()
        || gm
            .iter()
            .zip(gt.iter())
            .any(|(a, b)| (*a - *b).abs() > T::cst(1e-12) * scale)
    {
        return Err(SpcrError::InvalidGrid(
            "test grid differs from the model grid".into(),
        ));
    }
    let (x, y) = if test.is_centered() {
        let mut x = test.x().clone();
        let mut y = test.y().clone();
        for (mut col, &m) in x.column_iter_mut().zip(test.x_means().iter()) {
            col.add_scalar_mut(m);
        }
        for (mut col, &m) in y.column_iter_mut().zip(test.y_means().iter()) {
            col.add_scalar_mut(m);
        }
        (x, y)
    } else {
        (test.x().clone(), test.y().clone())
    };
    let fitted = predict(model, &x)?;
    Ok(crate::spcr::mean_integrated_error(&y, &fitted, test.grid()))
}

/// Squared Frobenius distance between two column-span projectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionLoss<T: Scalar> {
    pub value: T,
    /// Ranks of the orthonormalized first and second arguments.
    pub rank_estimate: usize,
    pub rank_truth: usize,
}

/// `‖Π̂ − Π‖_F²` with both projectors built from orthonormalized columns.
///
/// Rank-deficient arguments contribute only their nonzero-rank part, so a
/// missing dimension adds one to the loss.
pub fn projection_loss<T: Scalar>(
    v_hat: &DMatrix<T>,
    v_star: &DMatrix<T>,
) -> Result<ProjectionLoss<T>> {
    if v_hat.shape() != v_star.shape() {
        return Err(SpcrError::Dimension(format!(
            "projection loss needs equal shapes, got {:?} and {:?}",
            v_hat.shape(),
            v_star.shape()
        )));
    }
    let tol = T::tol(1e-10);
    let q1 = orthonormal_basis(v_hat, tol);
    let q2 = orthonormal_basis(v_star, tol);
    if q1.ncols() == 0 && q2.ncols() == 0 {
        return Err(SpcrError::InvalidDirection(
            "both subspaces are empty".into(),
        ));
    }
    let cross = (q1.transpose() * &q2).norm_squared();
    let (r1, r2) = (q1.ncols(), q2.ncols());
    let value = (T::from_usize_lossy(r1 + r2) - T::cst(2.0) * cross).max(T::zero());
    Ok(ProjectionLoss {
        value,
        rank_estimate: r1,
        rank_truth: r2,
    })
}

/// Sum over columns of column Euclidean norms.
pub fn norm_12<T: Scalar>(matrix: &DMatrix<T>) -> T {
    matrix
        .column_iter()
        .fold(T::zero(), |acc, c| acc + c.norm())
}

/// `‖V̂ − V*‖_{1,2}` after matching estimated columns to true columns and
/// rescaling each (sign included) by its least-squares factor.
///
/// Columns are matched by the permutation maximizing the total absolute
/// cosine (exhaustive up to six columns, greedy beyond).
pub fn aligned_direction_error<T: Scalar>(v_hat: &DMatrix<T>, v_star: &DMatrix<T>) -> Result<T> {
    if v_hat.shape() != v_star.shape() {
        return Err(SpcrError::Dimension(
            "aligned error needs equal shapes".into(),
        ));
    }
    let k = v_star.ncols();
    let cos = DMatrix::from_fn(k, k, |a, b| {
        let (x, y) = (v_hat.column(a), v_star.column(b));
        let den = x.norm() * y.norm();
        if den > T::zero() {
            (x.dot(&y) / den).abs()
        } else {
            T::zero()
        }
    });
    let matching = best_matching(&cos);
    let mut total = T::zero();
    for (b, &a) in matching.iter().enumerate() {
        let (x, y) = (v_hat.column(a), v_star.column(b));
        let xx = x.dot(&x);
        let c = if xx > T::zero() {
            x.dot(&y) / xx
        } else {
            T::zero()
        };
        total += (x * c - y).norm();
    }
    Ok(total)
}

/// `matching[b]` is the estimated column assigned to true column `b`.
fn best_matching<T: Scalar>(score: &DMatrix<T>) -> Vec<usize> {
    let k = score.nrows();
    if k <= 6 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = perm.clone();
        let mut best_score = T::cst(-1.0);
        permute(&mut perm, 0, &mut |p| {
            let s = p
                .iter()
                .enumerate()
                .fold(T::zero(), |acc, (b, &a)| acc + score[(a, b)]);
            if s > best_score {
                best_score = s;
                best = p.to_vec();
            }
        });
        best
    } else {
        let mut used = vec![false; k];
        (0..k)
            .map(|b| {
                let a = (0..k)
                    .filter(|&a| !used[a])
                    .max_by(|&i, &j| {
                        score[(i, b)]
                            .partial_cmp(&score[(j, b)])
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .expect("unused column remains");
                used[a] = true;
                a
            })
            .collect()
    }
}

fn permute(p: &mut Vec<usize>, start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}

/// Plug-in IRSS of the rank-one projection regression on `w`, with the
/// closed-form coefficient curve `γ*_w`.
pub fn irss_empirical<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    w: &DVector<T>,
) -> Result<(T, DVector<T>)> {
    if !dataset.is_centered() {
        return Err(SpcrError::Precondition(
            "IRSS needs a centered dataset".into(),
        ));
    }
    if w.len() != dataset.p() {
        return Err(SpcrError::Dimension(format!(
            "direction of length {} for p = {}",
            w.len(),
            dataset.p()
        )));
    }
    let n = T::from_usize_lossy(dataset.n());
    let z = dataset.x() * w;
    let s = z.dot(&z) / n;
    if !(s > T::zero()) {
        return Err(SpcrError::InvalidDirection(
            "wᵀ Σ̂_x w is not positive".into(),
        ));
    }
    let gamma = (dataset.y().tr_mul(&z) / n) / s;
    Ok((irss_with_gamma(dataset, w, &gamma)?, gamma))
}

/// Plug-in IRSS of direction `w` with an arbitrary coefficient curve.
pub fn irss_with_gamma<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    w: &DVector<T>,
    gamma: &DVector<T>,
) -> Result<T> {
    if gamma.len() != dataset.grid_len() || w.len() != dataset.p() {
        return Err(SpcrError::Dimension(
            "direction or coefficient length mismatch".into(),
        ));
    }
    let z = dataset.x() * w;
    let fitted = &z * gamma.transpose();
    Ok(crate::spcr::mean_integrated_error(
        dataset.y(),
        &fitted,
        dataset.grid(),
    ))
}

/// The first `k` columns of `v`, zero-padded when `v` has fewer.
pub fn leading_columns<T: Scalar>(v: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let mut out = DMatrix::zeros(v.nrows(), k);
    for j in 0..k.min(v.ncols()) {
        out.set_column(j, &v.column(j));
    }
    out
}

/// Sample mean and standard error `sd/√R` (zero for a single value).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    if r == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    if r == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    (mean, (var / r as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Grid;
    use crate::rng::rng_from_seed;
    use crate::simulate::sample_gaussian_process;
    use crate::solver::{sequential_generalized_eigen, DirectionMatrix};
    use crate::spcr::Method;
    use crate::spectral::cross_moment;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn model(v: DMatrix<f64>, gamma: DMatrix<f64>, grid: Grid<f64>) -> SpcrModel<f64> {
        let (p, k) = v.shape();
        let len = grid.len();
        SpcrModel {
            method: Method::Spcr,
            directions: DirectionMatrix::raw(v).unwrap(),
            gamma,
            k_star: k,
            lambda_star: 0.0,
            bandwidth: None,
            selected_features: None,
            x_means: DVector::zeros(p),
            y_means: DVector::zeros(len),
            grid,
        }
    }

    #[test]
    fn prediction_error_examples() {
        let grid = Grid::uniform(21, 0.0, 1.0).unwrap();
        let v = normal_matrix(4, 2, 1);
        let g = normal_matrix(2, 21, 2);
        let x = normal_matrix(30, 4, 3);
        let y = &x * &v * &g;
        let m = model(v, g, grid.clone());
        let test = FunctionalDataset::new(x, y, grid.clone()).unwrap();
        assert!(prediction_error(&m, &test).unwrap().abs() < 1e-10);
        assert!(
            prediction_error(&m, &test.centered().unwrap())
                .unwrap()
                .abs()
                < 1e-10
        );

        let other = FunctionalDataset::new(
            DMatrix::zeros(1, 4),
            DMatrix::zeros(1, 11),
            Grid::uniform(11, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            prediction_error(&m, &other),
            Err(SpcrError::InvalidGrid(_))
        ));
    }

    #[test]
    fn zero_model_on_unit_gp_noise() {
        let grid = Grid::uniform(101, 0.0, 1.0).unwrap();
        let noise = sample_gaussian_process(&grid, 5000, 5.0, 4).unwrap();
        let test = FunctionalDataset::new(DMatrix::zeros(5000, 3), noise, grid.clone()).unwrap();
        let m = model(DMatrix::zeros(3, 1), DMatrix::zeros(1, 101), grid);
        let e = prediction_error(&m, &test).unwrap();
        assert!((e - 1.0).abs() < 0.05, "{e}");
    }

    #[test]
    fn projection_loss_examples() {
        let a = normal_matrix(6, 2, 5);
        let rot = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let same = projection_loss(&a, &(&a * rot * 3.0)).unwrap();
        assert!(same.value.abs() < 1e-10);
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0f64, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!((projection_loss(&e1, &e2).unwrap().value - 2.0).abs() < 1e-14);

        let mut deficient = a.clone();
        deficient.column_mut(1).fill(0.0);
        let l = projection_loss(&deficient, &a).unwrap();
        assert_eq!((l.rank_estimate, l.rank_truth), (1, 2));
        assert!(l.value >= 1.0 - 1e-12);
    }

    #[test]
    fn norm_12_examples() {
        assert_eq!(norm_12(&DMatrix::<f64>::identity(2, 2)), 2.0);
        assert_eq!(norm_12(&DMatrix::from_column_slice(2, 1, &[3.0, 4.0])), 5.0);
    }

    #[test]
    fn aligned_error_ignores_order_sign_and_scale() {
        let truth = normal_matrix(8, 3, 6);
        let mut est = DMatrix::zeros(8, 3);
        est.set_column(0, &(truth.column(2) * -2.0));
        est.set_column(1, &(truth.column(0) * 0.5));
        est.set_column(2, &truth.column(1));
        assert!(aligned_direction_error(&est, &truth).unwrap() < 1e-12);
        let zero = DMatrix::zeros(8, 3);
        assert!((aligned_direction_error(&zero, &truth).unwrap() - norm_12(&truth)).abs() < 1e-12);
    }

    fn centered_data(n: usize, p: usize, len: usize, seed: u64) -> FunctionalDataset<f64> {
        let grid = Grid::uniform(len, 0.0, 1.0).unwrap();
        let x = normal_matrix(n, p, seed);
        let b = normal_matrix(p, len, seed + 1);
        let y = &x * b + normal_matrix(n, len, seed + 2);
        FunctionalDataset::new(x, y, grid)
            .unwrap()
            .centered()
            .unwrap()
    }

    #[test]
    fn irss_examples() {
        let d = centered_data(40, 5, 9, 7);
        let w = normal_matrix(5, 1, 10).column(0).into_owned();
        let (a, _) = irss_empirical(&d, &w).unwrap();
        let (b, _) = irss_empirical(&d, &(&w * 3.0)).unwrap();
        assert!((a - b).abs() < 1e-12);

        // direction orthogonal to every row: no variance explained, so it is
        // a zero direction on the data and rejected
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 - 4.5 } else { 0.0 });
        let y = normal_matrix(10, 5, 11);
        let grid = Grid::uniform(5, 0.0, 1.0).unwrap();
        let zc = FunctionalDataset::new(x, y, grid)
            .unwrap()
            .centered()
            .unwrap();
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            irss_empirical(&zc, &e2),
            Err(SpcrError::InvalidDirection(_))
        ));
        let energy = irss_with_gamma(&zc, &e2, &DVector::from_element(5, 7.0)).unwrap();
        let zero = DMatrix::zeros(10, 5);
        let expected = crate::spcr::mean_integrated_error(zc.y(), &zero, zc.grid());
        assert!((energy - expected).abs() < 1e-12);
    }

    #[test]
    fn generalized_eigen_direction_minimizes_irss() {
        let d = centered_data(60, 6, 11, 12);
        let sx = crate::covariance::sample_covariance(d.x()).unwrap();
        let sxy = cross_moment(&d).unwrap().matrix;
        let w = sequential_generalized_eigen(&sxy, &sx, 1).unwrap();
        let (best, _) = irss_empirical(&d, &w.columns().column(0).into_owned()).unwrap();
        let mut rng = rng_from_seed(13);
        for _ in 0..100 {
            let r = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let (v, _) = irss_empirical(&d, &(&r / r.norm())).unwrap();
            assert!(best <= v + 1e-9);
        }
    }

    #[test]
    fn mean_and_se_single_value() {
        assert_eq!(mean_and_se(&[2.5]), (2.5, 0.0));
        let (m, se) = mean_and_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projection_loss_symmetric_rotation_invariant_bounded(seed in 0u64..10_000, angle in 0.0f64..6.28) {
            let a = normal_matrix(7, 2, seed);
            let b = normal_matrix(7, 2, seed + 1);
            let (c, s) = (angle.cos(), angle.sin());
            let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let ab = projection_loss(&a, &b).unwrap().value;
            let ba = projection_loss(&b, &a).unwrap().value;
            let rotated = projection_loss(&(&a * rot), &b).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-10);
            prop_assert!((ab - rotated).abs() < 1e-10);
            prop_assert!((0.0..=4.0 + 1e-12).contains(&ab));
        }

        #[test]
        fn norm_12_triangle_inequality(seed in 0u64..10_000) {
            let a = normal_matrix(4, 3, seed);
            let b = normal_matrix(4, 3, seed + 1);
            prop_assert!(norm_12(&(&a + &b)) <= norm_12(&a) + norm_12(&b) + 1e-12);
        }

        #[test]
        fn closed_form_gamma_is_optimal(seed in 0u64..10_000, scale in -1.0f64..1.0) {
            let d = centered_data(30, 4, 7, seed);
            let w = normal_matrix(4, 1, seed + 5).column(0).into_owned();
            let (best, gamma) = irss_empirical(&d, &w).unwrap();
            let bump = normal_matrix(7, 1, seed + 6).column(0) * scale;
            let other = irss_with_gamma(&d, &w, &(gamma + bump)).unwrap();
            prop_assert!(best <= other + 1e-12);
        }

        #[test]
        fn prediction_error_nonnegative(seed in 0u64..10_000) {
            let grid = Grid::uniform(9, 0.0, 1.0).unwrap();
            let m = model(normal_matrix(3, 1, seed), normal_matrix(1, 9, seed + 1), grid.clone());
            let test = FunctionalDataset::new(normal_matrix(5, 3, seed + 2), normal_matrix(5, 9, seed + 3), grid).unwrap();
            prop_assert!(prediction_error(&m, &test).unwrap() >= 0.0);
        }
    }
}
