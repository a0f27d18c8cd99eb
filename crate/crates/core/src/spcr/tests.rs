use super::*;
use crate::rng::rng_from_seed;
use crate::simulate::{generate_setting1, SettingConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn grid(len: usize) -> Grid<f64> {
    Grid::uniform(len, 0.0, 1.0).unwrap()
}

fn curves(len: usize) -> DMatrix<f64> {
    let g = grid(len);
    DMatrix::from_fn(2, len, |k, l| {
        let t = g.points()[l];
        if k == 0 {
            (2.0 * std::f64::consts::PI * t).sin()
        } else {
            1.0 + t * t
        }
    })
}

fn centered(x: DMatrix<f64>, y: DMatrix<f64>) -> FunctionalDataset<f64> {
    let len = y.ncols();
    FunctionalDataset::new(x, y, grid(len))
        .unwrap()
        .centered()
        .unwrap()
}

#[test]
fn regress_gamma_scalar_ols() {
    let d = centered(normal_matrix(30, 3, 1), normal_matrix(30, 7, 2));
    let mut v = DMatrix::zeros(3, 1);
    v[(1, 0)] = 1.0;
    let z = d.x().column(1).into_owned();
    let scale = (z.dot(&z) / 30.0).sqrt();
    v[(1, 0)] = 1.0 / scale;
    let zn = d.x() * &v;
    let gamma = regress_gamma(&d, &DirectionMatrix::raw(v).unwrap(), 1e-8).unwrap();
    for l in 0..7 {
        let expected = zn.column(0).dot(&d.y().column(l)) / 30.0;
        assert!((gamma[(0, l)] - expected).abs() < 1e-12);
    }
}

#[test]
fn regress_gamma_exact_recovery() {
    let x = normal_matrix(40, 5, 3);
    let v = normal_matrix(5, 2, 4);
    let g = curves(11);
    let y = &x * &v * &g;
    let d = centered(x, y);
    let gamma = regress_gamma(&d, &DirectionMatrix::raw(v).unwrap(), 1e-8).unwrap();
    assert!((gamma - g).amax() < 1e-10);
}

#[test]
fn regress_gamma_duplicated_columns_use_ridge() {
    let d = centered(normal_matrix(25, 4, 5), normal_matrix(25, 9, 6));
    let col = normal_matrix(4, 1, 7);
    let v = DMatrix::from_fn(4, 2, |i, _| col[(i, 0)]);
    let gamma = regress_gamma(&d, &DirectionMatrix::raw(v.clone()).unwrap(), 1e-8).unwrap();
    assert!(gamma.iter().all(|x| x.is_finite()));
    // fitted values agree with the minimum-norm least-squares fit
    let z = d.x() * &v;
    let pinv = z.clone().pseudo_inverse(1e-10).unwrap();
    let oracle = &z * (pinv * d.y());
    let fitted = &z * &gamma;
    assert!((fitted - oracle).amax() < 1e-6);
}

#[test]
fn regress_gamma_errors() {
    let d = centered(normal_matrix(10, 3, 8), normal_matrix(10, 5, 9));
    assert!(matches!(
        regress_gamma(&d, &DirectionMatrix::zeros(3, 2), 1e-8),
        Err(SpcrError::InvalidDirection(_))
    ));
    let raw =
        FunctionalDataset::new(normal_matrix(10, 3, 8), normal_matrix(10, 5, 9), grid(5)).unwrap();
    assert!(matches!(
        regress_gamma(
            &raw,
            &DirectionMatrix::raw(DMatrix::identity(3, 1)).unwrap(),
            1e-8
        ),
        Err(SpcrError::Precondition(_))
    ));
}

fn toy_model(v: DMatrix<f64>, gamma: DMatrix<f64>) -> SpcrModel<f64> {
    let p = v.nrows();
    let len = gamma.ncols();
    SpcrModel {
        method: Method::Spcr,
        directions: DirectionMatrix::raw(v).unwrap(),
        gamma,
        k_star: 1,
        lambda_star: 0.0,
        bandwidth: Some(0),
        selected_features: None,
        x_means: DVector::from_fn(p, |j, _| j as f64 - 1.0),
        y_means: DVector::from_fn(len, |l, _| (l as f64).sqrt()),
        grid: grid(len),
    }
}

#[test]
fn predict_examples() {
    let m = toy_model(normal_matrix(3, 1, 10), normal_matrix(1, 6, 11));
    let at_mean = predict(&m, &DMatrix::from_row_slice(1, 3, m.x_means.as_slice())).unwrap();
    assert!((at_mean.row(0).transpose() - &m.y_means).amax() < 1e-14);

    let zero = toy_model(DMatrix::zeros(3, 1), normal_matrix(1, 6, 12));
    let pred = predict(&zero, &normal_matrix(4, 3, 13)).unwrap();
    for row in pred.row_iter() {
        assert!((row.transpose() - &zero.y_means).amax() < 1e-14);
    }
    assert!(matches!(
        predict(&m, &DMatrix::zeros(2, 4)),
        Err(SpcrError::Dimension(_))
    ));
}

#[test]
fn prediction_is_affine_and_stackable() {
    let m = toy_model(normal_matrix(3, 2, 14), normal_matrix(2, 6, 15));
    let a = normal_matrix(3, 3, 16);
    let b = normal_matrix(2, 3, 17);
    let stacked = DMatrix::from_fn(5, 3, |i, j| if i < 3 { a[(i, j)] } else { b[(i - 3, j)] });
    let ps = predict(&m, &stacked).unwrap();
    let pa = predict(&m, &a).unwrap();
    let pb = predict(&m, &b).unwrap();
    assert!((ps.rows(0, 3) - pa).amax() < 1e-14);
    assert!((ps.rows(3, 2) - pb).amax() < 1e-14);
}

#[test]
fn beta_hat_examples() {
    let zero = toy_model(DMatrix::zeros(3, 1), normal_matrix(1, 4, 18));
    assert!(beta_hat(&zero).iter().all(|v| *v == 0.0));
    let mut e1 = DMatrix::zeros(3, 1);
    e1[(0, 0)] = 1.0;
    let m = toy_model(e1, DMatrix::from_element(1, 4, 1.0));
    let b = beta_hat(&m);
    assert!(b.row(0).iter().all(|v| *v == 1.0));
    assert!(b.rows(1, 2).iter().all(|v| *v == 0.0));
}

#[test]
fn screening_examples() {
    let x = normal_matrix(20, 6, 19);
    let zero = centered(x.clone(), DMatrix::zeros(20, 5));
    assert_eq!(superpc_screen(&zero, 3).unwrap(), vec![0, 1, 2]);
    assert!(matches!(
        superpc_screen(&zero, 0),
        Err(SpcrError::InvalidParameter(_))
    ));
    assert!(matches!(
        superpc_screen(&zero, 7),
        Err(SpcrError::InvalidParameter(_))
    ));

    let y = normal_matrix(20, 5, 20);
    let d = centered(x.clone(), y.clone());
    let mut flipped = x.clone();
    flipped.column_mut(2).neg_mut();
    let f = centered(flipped, y);
    let (a, b) = (screening_scores(&d), screening_scores(&f));
    for j in 0..6 {
        assert!((a[j] - b[j]).abs() < 1e-10 * a[j].max(1.0));
    }
}

#[test]
fn screening_finds_single_relevant_covariate() {
    let n = 500;
    let x = normal_matrix(n, 30, 21);
    let noise = normal_matrix(n, 11, 22);
    let y = DMatrix::from_fn(n, 11, |i, l| {
        x[(i, 7)] * (1.0 + l as f64 * 0.1) + noise[(i, l)]
    });
    let d = centered(x, y);
    assert_eq!(superpc_screen(&d, 1).unwrap(), vec![7]);
}

#[test]
fn too_few_rows_for_folds() {
    let d =
        FunctionalDataset::new(normal_matrix(4, 3, 23), normal_matrix(4, 5, 24), grid(5)).unwrap();
    assert!(matches!(
        fit(&d, &FitConfig::default()),
        Err(SpcrError::InvalidConfig(_))
    ));
    let d =
        FunctionalDataset::new(normal_matrix(9, 3, 23), normal_matrix(9, 5, 24), grid(5)).unwrap();
    assert!(matches!(
        fit(&d, &FitConfig::default()),
        Err(SpcrError::InvalidConfig(_))
    ));
}

#[test]
fn setting1_fit_selects_true_support() {
    let (data, _) = generate_setting1::<f64>(&SettingConfig::new(100, 200, 5)).unwrap();
    let report = fit_report(&data, Method::Spcr, &FitConfig::with_seed(5), None).unwrap();
    let model = &report.model;
    assert!((2..=6).contains(&model.k_star), "K* = {}", model.k_star);
    let v = model.directions.columns();
    let support = [0, 1, 2, 3, 198, 199];
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    let on_support: f64 = support
        .iter()
        .map(|&j| v.row(j).iter().map(|x| x.abs()).sum::<f64>())
        .sum();
    assert!(
        on_support >= 0.8 * total,
        "support mass {}",
        on_support / total
    );
    assert_eq!(report.cv.errors.shape(), (10, 30));
}

#[test]
fn noiseless_fit_reproduces_training_curves() {
    let n = 200;
    let p = 12;
    let x = normal_matrix(n, p, 25);
    let mut v = DMatrix::zeros(p, 2);
    v[(0, 0)] = 1.0;
    v[(3, 1)] = 1.0;
    v[(4, 1)] = 0.5;
    let g = curves(21);
    let y = &x * &v * &g;
    let data = FunctionalDataset::new(x.clone(), y.clone(), grid(21)).unwrap();
    let config = FitConfig {
        lambda_grid: Some(vec![1e-9]),
        bandwidth: Some(p - 1),
        ..FitConfig::with_seed(1)
    };
    let model = fit(&data, &config).unwrap();
    let pred = predict(&model, &x).unwrap();
    let err = mean_integrated_error(&y, &pred, data.grid());
    let zero = DMatrix::zeros(n, 21);
    let energy = mean_integrated_error(&y, &zero, data.grid());
    assert!(err < 1e-3 * energy, "{err} vs {energy}");
}

#[test]
fn training_prediction_error_matches_direct_residual() {
    let (data, _) = generate_setting1::<f64>(&SettingConfig::new(60, 30, 6)).unwrap();
    let model = fit(&data, &FitConfig::with_seed(6)).unwrap();
    let pred = predict(&model, data.x()).unwrap();
    let via_predict = mean_integrated_error(data.y(), &pred, data.grid());
    // independent: center, project, regress, integrate by hand
    let c = data.centered().unwrap();
    let z = c.x() * model.directions.columns();
    let resid = c.y() - &z * &model.gamma;
    let w = data.grid().weights();
    let mut direct = 0.0;
    for i in 0..resid.nrows() {
        for l in 0..resid.ncols() {
            direct += w[l] * resid[(i, l)].powi(2);
        }
    }
    direct /= resid.nrows() as f64;
    assert!((via_predict - direct).abs() < 1e-10 * direct.max(1.0));
}

#[test]
fn pure_noise_selects_near_intercept_only() {
    let (mut data, _) = generate_setting1::<f64>(&SettingConfig::new(100, 40, 7)).unwrap();
    let noise = crate::simulate::sample_gaussian_process(data.grid(), 100, 5.0, 8).unwrap();
    data = data.with_responses(noise).unwrap();
    let c = data.centered().unwrap();
    let folds = FoldAssignment::random(100, 5, 9).unwrap();
    let config = FitConfig {
        bandwidth: Some(3),
        ..FitConfig::with_seed(7)
    };
    let (k, lambda, table) = cross_validate(&c, Method::Spcr, &config, &folds).unwrap();
    let (ki, ai) = table.argmin().unwrap();
    assert_eq!((k, lambda), (ki + 1, table.axis[ai]));
    let best = table.errors[(ki, ai)];
    let null = intercept_only_cv_error(&c, &folds).unwrap();
    assert!((best - null).abs() <= 0.05 * null, "{best} vs {null}");
    let again = cross_validate(&c, Method::Spcr, &config, &folds).unwrap();
    assert_eq!(again.2, table);
}

#[test]
fn fit_is_deterministic() {
    let (data, _) = generate_setting1::<f64>(&SettingConfig::new(50, 20, 10)).unwrap();
    for method in Method::ALL {
        let a = fit_method(&data, method, &FitConfig::with_seed(3)).unwrap();
        let b = fit_method(&data, method, &FitConfig::with_seed(3)).unwrap();
        assert_eq!(a, b, "{method}");
    }
}

#[test]
fn row_permutation_with_matching_folds() {
    let (data, _) = generate_setting1::<f64>(&SettingConfig::new(40, 15, 11)).unwrap();
    let config = FitConfig {
        bandwidth: Some(4),
        ..FitConfig::with_seed(4)
    };
    let folds = FoldAssignment::random(40, 5, 12).unwrap();
    let perm: Vec<usize> = (0..40).rev().collect();
    let permuted = data.subset(&perm);
    let a = fit_report(&data, Method::Spcr, &config, Some(&folds))
        .unwrap()
        .model;
    let b = fit_report(
        &permuted,
        Method::Spcr,
        &config,
        Some(&folds.permuted(&perm)),
    )
    .unwrap()
    .model;
    assert_eq!(a.k_star, b.k_star);
    assert!((a.lambda_star - b.lambda_star).abs() < 1e-12 * a.lambda_star.max(1e-300));
    // agreement up to the coordinate-descent stopping accuracy
    assert!((a.directions.columns() - b.directions.columns()).amax() < 1e-6);
    assert!((&a.gamma - &b.gamma).amax() < 1e-5);
}

#[test]
fn full_rank_unpenalized_fit_is_ols() {
    let n = 60;
    let p = 3;
    let x = normal_matrix(n, p, 13);
    let b = normal_matrix(p, 15, 14);
    let y = &x * &b + normal_matrix(n, 15, 15) * 0.3;
    let data = FunctionalDataset::new(x, y, grid(15)).unwrap();
    let config = FitConfig {
        bandwidth: Some(p - 1),
        ..FitConfig::default()
    };
    let model = fit_fixed(&data, Method::Spcr, p, 0.0, &config).unwrap();
    let c = data.centered().unwrap();
    let ols = (c.x().transpose() * c.x()).try_inverse().unwrap() * c.x().transpose() * c.y();
    assert!((beta_hat(&model) - ols).amax() < 1e-6);
}

#[test]
fn upcr_aligns_with_dominant_component() {
    let n = 500;
    let p = 8;
    let mut x = normal_matrix(n, p, 16);
    x.column_mut(0).scale_mut(10f64.sqrt());
    let noise = normal_matrix(n, 11, 17);
    let y = DMatrix::from_fn(n, 11, |i, l| {
        x[(i, 0)] * (l as f64 * 0.1).cos() + noise[(i, l)]
    });
    let data = FunctionalDataset::new(x, y, grid(11)).unwrap();
    let model = fit_upcr(&data, &FitConfig::with_seed(2)).unwrap();
    let first = model.directions.columns().column(0);
    assert!(first[0].abs() / first.norm() > 0.99);
}

#[test]
fn upcr_with_one_covariate_is_simple_regression() {
    let n = 50;
    let x = normal_matrix(n, 1, 18);
    let y = DMatrix::from_fn(n, 9, |i, l| x[(i, 0)] * l as f64 + (i % 3) as f64);
    let data = FunctionalDataset::new(x, y, grid(9)).unwrap();
    let model = fit_upcr(&data, &FitConfig::with_seed(1)).unwrap();
    let c = data.centered().unwrap();
    let xc = c.x().column(0);
    let slope = c.y().tr_mul(&xc) / xc.dot(&xc);
    let b = beta_hat(&model);
    for l in 0..9 {
        assert!((b[(0, l)] - slope[l]).abs() < 1e-10);
    }
}

#[test]
fn screening_baseline_embeds_selected_rows() {
    let (data, _) = generate_setting1::<f64>(&SettingConfig::new(80, 60, 19)).unwrap();
    let model = fit_superpc(&data, &FitConfig::with_seed(8)).unwrap();
    let keep = model.selected_features.clone().unwrap();
    assert!([10, 25, 50].contains(&keep.len()));
    for j in 0..60 {
        if !keep.contains(&j) {
            assert!(model.directions.columns().row(j).iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn single_precision_pipeline_runs() {
    let (data, _) = generate_setting1::<f32>(&SettingConfig::new(60, 20, 9)).unwrap();
    let model = fit(&data, &FitConfig::with_seed(9)).unwrap();
    assert!(model.gamma.iter().all(|v| v.is_finite()));
    assert!((1..=10).contains(&model.k_star));
}

#[test]
fn penalty_grid_shape() {
    let g = FitConfig::default().penalty_grid(2.0);
    assert_eq!(g.len(), 30);
    assert_eq!(g[0], 2.0);
    assert!((g[29] - 2e-3).abs() < 1e-15);
    assert!(g.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(FitConfig::default().penalty_grid(0.0), vec![0.0]);
}
