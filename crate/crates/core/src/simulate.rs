//! Data-generating processes with known ground truth.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{FunctionalDataset, Grid};
use crate::error::{Result, SpcrError};
use crate::rng::{rng_from_seed, SpcrRng};
use crate::scalar::Scalar;
use crate::spectral::{population_cross_moment, top_k_eigen};

/// Number of true supervised directions in the sparse setting.
pub const TRUE_DIMENSION: usize = 3;

/// Shared configuration of both simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingConfig {
    pub n: usize,
    pub p: usize,
    pub grid_len: usize,
    pub seed: u64,
    pub rho: f64,
    pub gp_scale: f64,
    /// Adds the Gaussian-process error; disable to get `Y = Xᵀβ` exactly.
    pub gp_noise: bool,
}

impl SettingConfig {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            grid_len: 101,
            seed,
            rho: 0.25,
            gp_scale: 5.0,
            gp_noise: true,
        }
    }

    pub fn with_grid_len(mut self, grid_len: usize) -> Self {
        self.grid_len = grid_len;
        self
    }

    fn validate(&self, min_p: usize) -> Result<()> {
        if self.n < 2 {
            return Err(SpcrError::InvalidParameter(format!(
                "n = {} must be at least 2",
                self.n
            )));
        }
        if self.p < min_p {
            return Err(SpcrError::InvalidParameter(format!(
                "p = {} must be at least {min_p}",
                self.p
            )));
        }
        if self.grid_len < 2 {
            return Err(SpcrError::InvalidParameter(
                "grid needs at least 2 points".into(),
            ));
        }
        if !(self.gp_scale > 0.0) {
            return Err(SpcrError::InvalidParameter(
                "gp_scale must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn grid<T: Scalar>(&self) -> Result<Grid<T>> {
        Grid::uniform(self.grid_len, T::zero(), T::one())
    }
}

/// True model quantities on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T: Scalar> {
    /// Sparse true directions (p×3); absent in the dense setting.
    pub v_star: Option<DMatrix<T>>,
    /// `γ(t)` on the grid (3×L); absent in the dense setting.
    pub gamma: Option<DMatrix<T>>,
    /// Population unpenalized directions `Σ_x⁻¹U` (p×3), `U` the top
    /// eigenvectors of the population cross-moment; absent in the dense setting.
    /// Spans the same space as `v_star` but mixes its columns.
    pub v_population: Option<DMatrix<T>>,
    /// `β(t)` on the grid (p×L).
    pub beta: DMatrix<T>,
    pub sigma_x: DMatrix<T>,
}

/// `Σ_{jk} = ρ^{|j-k|}`.
pub fn ar_covariance<T: Scalar>(p: usize, rho: f64) -> Result<DMatrix<T>> {
    if !(rho.abs() < 1.0) {
        return Err(SpcrError::InvalidParameter(format!(
            "|rho| = {} must be < 1",
            rho.abs()
        )));
    }
    if p == 0 {
        return Err(SpcrError::InvalidParameter("p must be at least 1".into()));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        T::cst(rho.powi(i.abs_diff(j) as i32))
    }))
}

/// Squared-exponential kernel `exp(-scale·(t1 - t2)²)`.
pub fn gp_kernel(t1: f64, t2: f64, scale: f64) -> f64 {
    (-scale * (t1 - t2).powi(2)).exp()
}

/// Lower Cholesky factor of the kernel matrix on `points`, adding diagonal
/// jitter from 1e-10 upward (doubling) until the factorization succeeds.
fn kernel_factor(points: &[f64], scale: f64) -> Result<DMatrix<f64>> {
    let len = points.len();
    let kernel = DMatrix::from_fn(len, len, |a, b| gp_kernel(points[a], points[b], scale));
    let mut jitter = 1e-10;
    while jitter <= 1e-6 * (1.0 + 1e-12) {
        let mut k = kernel.clone();
        for i in 0..len {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = k.cholesky() {
            return Ok(chol.l());
        }
        jitter *= 2.0;
    }
    Err(SpcrError::Numerical(
        "kernel matrix not factorizable with jitter up to 1e-6".into(),
    ))
}

fn standard_normal_matrix(rng: &mut SpcrRng, rows: usize, cols: usize) -> DMatrix<f64> {
    // row-major draw order so that a prefix of rows is stable under n changes
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// `n` zero-mean Gaussian-process curves on the grid (n×L).
pub fn sample_gaussian_process<T: Scalar>(
    grid: &Grid<T>,
    n: usize,
    scale: f64,
    seed: u64,
) -> Result<DMatrix<T>> {
    let mut rng = rng_from_seed(seed);
    let draws = gp_draws(&to_f64(grid.points()), n, scale, &mut rng)?;
    Ok(cast_matrix(&draws))
}

fn gp_draws(points: &[f64], n: usize, scale: f64, rng: &mut SpcrRng) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(SpcrError::InvalidParameter(
            "need at least one curve".into(),
        ));
    }
    let factor = kernel_factor(points, scale)?;
    let z = standard_normal_matrix(rng, n, points.len());
    Ok(z * factor.transpose())
}

fn to_f64<T: Scalar>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

pub(crate) fn cast_matrix<T: Scalar>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::cst)
}

/// The three coefficient curves of the sparse setting at time `t`.
pub fn setting1_gamma(t: f64) -> [f64; 3] {
    [
        2.0 * (PI * t).cos(),
        3.0 * (2.0 * PI * t).cos(),
        5.0 * (3.0 * PI * t).cos() + 3.0 * (3.0 * PI * t).sin().powi(2),
    ]
}

/// `β_j(t) = cos{πt(j+20)/10}·15/j²` with 1-based `j`.
pub fn setting2_beta(j: usize, t: f64) -> f64 {
    let j = j as f64;
    (PI * t * (j + 20.0) / 10.0).cos() * 15.0 / (j * j)
}

/// Sparse truth: pairs of ones on rows {1,2}, {3,4} and {p-1,p}.
pub fn setting1_v_star(p: usize) -> Result<DMatrix<f64>> {
    if p < 6 {
        return Err(SpcrError::InvalidParameter(format!(
            "p = {p} must be at least 6"
        )));
    }
    let mut v = DMatrix::zeros(p, TRUE_DIMENSION);
    v[(0, 0)] = 1.0;
    v[(1, 0)] = 1.0;
    v[(2, 1)] = 1.0;
    v[(3, 1)] = 1.0;
    v[(p - 2, 2)] = 1.0;
    v[(p - 1, 2)] = 1.0;
    Ok(v)
}

struct Draw {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

fn draw(config: &SettingConfig, beta: &DMatrix<f64>) -> Result<Draw> {
    let sigma = ar_covariance::<f64>(config.p, config.rho)?;
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| SpcrError::Numerical("AR covariance not positive definite".into()))?;
    let points = to_f64(config.grid::<f64>()?.points());
    let mut rng = rng_from_seed(config.seed);
    let x = standard_normal_matrix(&mut rng, config.n, config.p) * chol.l().transpose();
    let mut y = &x * beta;
    if config.gp_noise {
        y += gp_draws(&points, config.n, config.gp_scale, &mut rng)?;
    }
    Ok(Draw { x, y, sigma })
}

fn assemble<T: Scalar>(draw: &Draw, config: &SettingConfig) -> Result<FunctionalDataset<T>> {
    FunctionalDataset::new(cast_matrix(&draw.x), cast_matrix(&draw.y), config.grid()?)
}

/// Sparse, exactly rank-three setting.
pub fn generate_setting1<T: Scalar>(
    config: &SettingConfig,
) -> Result<(FunctionalDataset<T>, GroundTruth<T>)> {
    config.validate(6)?;
    let v_star = setting1_v_star(config.p)?;
    let points = to_f64(config.grid::<f64>()?.points());
    let gamma = DMatrix::from_fn(TRUE_DIMENSION, points.len(), |k, l| {
        setting1_gamma(points[l])[k]
    });
    let beta = &v_star * &gamma;
    let d = draw(config, &beta)?;
    let v_population =
        population_directions(&d.sigma, &beta, &config.grid::<f64>()?, TRUE_DIMENSION)?;
    let truth = GroundTruth {
        v_star: Some(cast_matrix(&v_star)),
        v_population: Some(cast_matrix(&v_population)),
        gamma: Some(cast_matrix(&gamma)),
        beta: cast_matrix(&beta),
        sigma_x: cast_matrix(&d.sigma),
    };
    Ok((assemble(&d, config)?, truth))
}

/// `Σ_x⁻¹U` for the top-`k` eigenvectors `U` of `∫ Σ_x β(t) β(t)ᵀ Σ_x dt`.
pub fn population_directions(
    sigma_x: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    grid: &Grid<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    let moment = population_cross_moment(sigma_x, beta, grid)?;
    let u = top_k_eigen(&moment, k)?.vectors;
    let chol = sigma_x
        .clone()
        .cholesky()
        .ok_or_else(|| SpcrError::Numerical("covariance not positive definite".into()))?;
    Ok(chol.solve(&u))
}

/// Dense setting with no sparse low-rank truth.
pub fn generate_setting2<T: Scalar>(
    config: &SettingConfig,
) -> Result<(FunctionalDataset<T>, GroundTruth<T>)> {
    config.validate(1)?;
    let points = to_f64(config.grid::<f64>()?.points());
    let beta = DMatrix::from_fn(config.p, points.len(), |j, l| {
        setting2_beta(j + 1, points[l])
    });
    let d = draw(config, &beta)?;
    let truth = GroundTruth {
        v_star: None,
        v_population: None,
        gamma: None,
        beta: cast_matrix(&beta),
        sigma_x: cast_matrix(&d.sigma),
    };
    Ok((assemble(&d, config)?, truth))
}

/// Adds i.i.d. `N(0, noise_var)` errors to every sampled response value.
pub fn add_measurement_error<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    noise_var: f64,
    seed: u64,
) -> Result<FunctionalDataset<T>> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(SpcrError::InvalidParameter(format!(
            "noise variance {noise_var} must be positive"
        )));
    }
    let normal = Normal::new(0.0, noise_var.sqrt())
        .map_err(|e| SpcrError::InvalidParameter(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let mut y = dataset.y().clone();
    for i in 0..y.nrows() {
        for l in 0..y.ncols() {
            y[(i, l)] += T::cst(normal.sample(&mut rng));
        }
    }
    dataset.with_responses(y)
}
