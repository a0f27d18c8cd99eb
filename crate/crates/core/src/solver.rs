//! Penalized supervised direction estimation.
//!
//! Every estimator here reduces to independent column problems of the form
//! `min_v ½ vᵀ G v − cᵀ v + λ‖v‖₁` with a PSD Gram matrix `G` and a
//! correlate `c`, solved by cyclic coordinate descent on the covariance form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SpcrError};
use crate::linalg::sorted_symmetric_eigen;
use crate::scalar::Scalar;
use crate::spectral::{matrix_power, top_k_eigen, MatrixExponent};

/// Records whether direction columns are scaled to unit `Σ̂_x`-norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    SigmaXUnit,
}

/// A `p×K` matrix of direction columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMatrix<T: Scalar> {
    columns: DMatrix<T>,
    normalization: Normalization,
}

impl<T: Scalar> DirectionMatrix<T> {
    pub fn new(columns: DMatrix<T>, normalization: Normalization) -> Result<Self> {
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(SpcrError::Numerical(
                "direction matrix has non-finite entries".into(),
            ));
        }
        Ok(Self {
            columns,
            normalization,
        })
    }

    pub fn raw(columns: DMatrix<T>) -> Result<Self> {
        Self::new(columns, Normalization::Raw)
    }

    pub fn zeros(p: usize, k: usize) -> Self {
        Self {
            columns: DMatrix::zeros(p, k),
            normalization: Normalization::Raw,
        }
    }

    pub fn columns(&self) -> &DMatrix<T> {
        &self.columns
    }

    pub fn into_columns(self) -> DMatrix<T> {
        self.columns
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn p(&self) -> usize {
        self.columns.nrows()
    }

    pub fn k(&self) -> usize {
        self.columns.ncols()
    }

    /// The first `k` columns.
    pub fn truncate(&self, k: usize) -> Self {
        Self {
            columns: self.columns.columns(0, k.min(self.k())).into_owned(),
            normalization: self.normalization,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.columns.iter().all(|v| *v == T::zero())
    }

    /// Indices of columns with at least one nonzero entry.
    pub fn nonzero_columns(&self) -> Vec<usize> {
        (0..self.k())
            .filter(|&k| self.columns.column(k).iter().any(|v| *v != T::zero()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T: Scalar> {
    /// Budget of full coordinate sweeps per column.
    pub max_iterations: usize,
    /// Stop when no coefficient moves by more than this in a sweep.
    pub tolerance: T,
    pub warm_start: Option<DirectionMatrix<T>>,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: T::tol(1e-8),
            warm_start: None,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(SpcrError::InvalidConfig(
                "max_iterations must be >= 1".into(),
            ));
        }
        if !(self.tolerance > T::zero()) {
            return Err(SpcrError::InvalidConfig("tolerance must be > 0".into()));
        }
        Ok(())
    }

    fn without_warm_start(&self) -> Self {
        Self {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            warm_start: None,
        }
    }
}

/// KKT tolerance used to certify a converged solve.
pub fn kkt_tolerance<T: Scalar>() -> T {
    T::tol(1e-6)
}

/// `sign(z)·max(|z| − λ, 0)`.
pub fn soft_threshold<T: Scalar>(z: T, lambda: T) -> T {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        T::zero()
    }
}

/// `½ vᵀ G v − cᵀ v + λ‖v‖₁`.
pub fn lasso_objective<T: Scalar>(
    gram: &DMatrix<T>,
    c: &DVector<T>,
    v: &DVector<T>,
    lambda: T,
) -> T {
    let quad = v.dot(&(gram * v));
    let l1 = v.iter().fold(T::zero(), |acc, x| acc + x.abs());
    T::cst(0.5) * quad - c.dot(v) + lambda * l1
}

/// Largest violation of the KKT conditions of the column problem at `v`.
pub fn kkt_residual<T: Scalar>(gram: &DMatrix<T>, c: &DVector<T>, v: &DVector<T>, lambda: T) -> T {
    let g = c - gram * v;
    g.iter().zip(v.iter()).fold(T::zero(), |worst, (&gj, &vj)| {
        let viol = if vj == T::zero() {
            (gj.abs() - lambda).max(T::zero())
        } else {
            (gj - lambda * vj.signum()).abs()
        };
        worst.max(viol)
    })
}

/// Result of one column solve.
#[derive(Debug, Clone)]
pub struct LassoSolution<T: Scalar> {
    pub coefficients: DVector<T>,
    pub sweeps: usize,
    pub kkt_residual: T,
    /// Objective after each sweep, when requested.
    pub objective_trace: Option<Vec<T>>,
}

/// Cyclic coordinate descent on `½ vᵀ G v − cᵀ v + λ‖v‖₁`.
///
/// The gradient `c − G v` is updated incrementally and recomputed exactly
/// whenever the coefficient-change criterion is met; the solve only returns
/// once that exact gradient passes the KKT check.
pub fn solve_lasso_column<T: Scalar>(
    gram: &DMatrix<T>,
    c: &DVector<T>,
    lambda: T,
    init: Option<&DVector<T>>,
    max_iterations: usize,
    tolerance: T,
    record_objective: bool,
) -> Result<LassoSolution<T>> {
    let p = gram.nrows();
    if gram.ncols() != p || c.len() != p {
        return Err(SpcrError::Dimension(format!(
            "gram {}x{} with correlate of length {}",
            gram.nrows(),
            gram.ncols(),
            c.len()
        )));
    }
    if lambda < T::zero() || !lambda.is_finite() {
        return Err(SpcrError::InvalidParameter(
            "penalty must be finite and >= 0".into(),
        ));
    }
    if let Some(j) = (0..p).find(|&j| !(gram[(j, j)] > T::zero())) {
        return Err(SpcrError::Precondition(format!(
            "non-positive diagonal entry at {j}"
        )));
    }
    let mut v = match init {
        Some(w) if w.len() == p => w.clone(),
        Some(w) => {
            return Err(SpcrError::Dimension(format!(
                "warm start of length {} for p = {p}",
                w.len()
            )));
        }
        None => DVector::zeros(p),
    };
    let mut g = c - gram * &v;
    let kkt_tol = kkt_tolerance::<T>();
    let mut tol = tolerance;
    let mut trace = record_objective.then(Vec::new);
    let mut last_change = T::zero();
    for sweep in 1..=max_iterations {
        let mut max_change = T::zero();
        for j in 0..p {
            let d = gram[(j, j)];
            let old = v[j];
            let new = soft_threshold(g[j] + d * old, lambda) / d;
            let delta = new - old;
            if delta != T::zero() {
                v[j] = new;
                g.axpy(-delta, &gram.column(j), T::one());
                max_change = max_change.max(delta.abs());
            }
        }
        if let Some(t) = trace.as_mut() {
            t.push(lasso_objective(gram, c, &v, lambda));
        }
        last_change = max_change;
        if !max_change.is_finite() {
            return Err(SpcrError::Numerical("coordinate descent diverged".into()));
        }
        if max_change < tol {
            g = c - gram * &v;
            let residual = kkt_residual(gram, c, &v, lambda);
            if residual <= kkt_tol {
                return Ok(LassoSolution {
                    coefficients: v,
                    sweeps: sweep,
                    kkt_residual: residual,
                    objective_trace: trace,
                });
            }
            tol *= T::cst(0.1);
        }
    }
    Err(SpcrError::Convergence {
        iterations: max_iterations,
        last_change: last_change.to_f64_lossy(),
        rows: p,
        cols: 1,
        last_iterate: v.iter().map(|x| x.to_f64_lossy()).collect(),
    })
}

/// Solves every column of `correlates` against `gram`, in parallel.
fn solve_columns<T: Scalar>(
    gram: &DMatrix<T>,
    correlates: &DMatrix<T>,
    lambda: T,
    config: &SolverConfig<T>,
) -> Result<DMatrix<T>> {
    config.validate()?;
    let (p, k) = correlates.shape();
    if gram.nrows() != p || gram.ncols() != p {
        return Err(SpcrError::Dimension(format!(
            "gram {}x{} for {p} rows of correlates",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if let Some(w) = &config.warm_start {
        if w.p() != p || w.k() < k {
            return Err(SpcrError::Dimension(format!(
                "warm start is {}x{}, need {p}x{k}",
                w.p(),
                w.k()
            )));
        }
    }
    let results: Vec<Result<LassoSolution<T>>> = (0..k)
        .into_par_iter()
        .map(|col| {
            let c = correlates.column(col).into_owned();
            let init = config
                .warm_start
                .as_ref()
                .map(|w| w.columns().column(col).into_owned());
            solve_lasso_column(
                gram,
                &c,
                lambda,
                init.as_ref(),
                config.max_iterations,
                config.tolerance,
                false,
            )
        })
        .collect();
    let mut out = DMatrix::zeros(p, k);
    let mut failure: Option<(usize, f64)> = None;
    for (col, res) in results.into_iter().enumerate() {
        match res {
            Ok(sol) => out.set_column(col, &sol.coefficients),
            Err(SpcrError::Convergence {
                iterations,
                last_change,
                last_iterate,
                ..
            }) => {
                for (j, x) in last_iterate.iter().enumerate() {
                    out[(j, col)] = T::cst(*x);
                }
                let worst = failure.map_or(last_change, |(_, c)| c.max(last_change));
                failure = Some((iterations, worst));
            }
            Err(e) => return Err(e),
        }
    }
    if let Some((iterations, last_change)) = failure {
        return Err(SpcrError::Convergence {
            iterations,
            last_change,
            rows: p,
            cols: k,
            last_iterate: out.iter().map(|x| x.to_f64_lossy()).collect(),
        });
    }
    Ok(out)
}

/// Penalized supervised directions: column `k` minimizes
/// `½ vᵀ Σ̂_x v − û_kᵀ v + λ‖v‖₁`.
pub fn fit_directions<T: Scalar>(
    sigma_x: &DMatrix<T>,
    u_hat: &DMatrix<T>,
    lambda: T,
    config: &SolverConfig<T>,
) -> Result<DirectionMatrix<T>> {
    DirectionMatrix::raw(solve_columns(sigma_x, u_hat, lambda, config)?)
}

/// Solves along a penalty path, warm-starting each problem from the previous
/// successful solution. Failures are reported per penalty value.
pub fn fit_directions_path<T: Scalar>(
    sigma_x: &DMatrix<T>,
    u_hat: &DMatrix<T>,
    lambdas: &[T],
    config: &SolverConfig<T>,
) -> Vec<Result<DirectionMatrix<T>>> {
    let mut current = config.clone();
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let res = fit_directions(sigma_x, u_hat, lambda, &current);
        if let Ok(d) = &res {
            current.warm_start = Some(d.clone());
        }
        out.push(res);
    }
    out
}

/// `V = Σ̂_x⁻¹ Û` by a direct solve.
pub fn fit_directions_unpenalized<T: Scalar>(
    sigma_x: &DMatrix<T>,
    u_hat: &DMatrix<T>,
) -> Result<DirectionMatrix<T>> {
    let p = sigma_x.nrows();
    if sigma_x.ncols() != p || u_hat.nrows() != p {
        return Err(SpcrError::Dimension(format!(
            "sigma_x {}x{} with u_hat {}x{}",
            sigma_x.nrows(),
            sigma_x.ncols(),
            u_hat.nrows(),
            u_hat.ncols()
        )));
    }
    let v = match sigma_x.clone().cholesky() {
        Some(chol) => chol.solve(u_hat),
        None => sigma_x
            .clone()
            .lu()
            .solve(u_hat)
            .ok_or_else(|| SpcrError::Numerical("covariance is singular".into()))?,
    };
    DirectionMatrix::raw(v)
}

/// Correlates `Σ̂_x^{1/2} ŝ_k` of the alternative estimator, where `ŝ_k` are
/// the top eigenvectors of `Σ̂_x^{-1/2} Σ̂_xy Σ̂_x^{-1/2}`.
pub fn spcra_correlates<T: Scalar>(
    sigma_x: &DMatrix<T>,
    sigma_xy: &DMatrix<T>,
    k: usize,
) -> Result<DMatrix<T>> {
    if sigma_xy.shape() != sigma_x.shape() {
        return Err(SpcrError::Dimension(
            "sigma_x and sigma_xy shapes differ".into(),
        ));
    }
    let inv_half = matrix_power(sigma_x, MatrixExponent::NegHalf)?;
    let half = matrix_power(sigma_x, MatrixExponent::Half)?;
    let whitened = &inv_half * sigma_xy * &inv_half;
    let s = top_k_eigen(&whitened, k)?.vectors;
    Ok(half * s)
}

/// Alternative estimator: ℓ1 regression of the whitened eigenvectors on
/// `Σ̂_x^{1/2}`.
pub fn fit_directions_spcra<T: Scalar>(
    sigma_x: &DMatrix<T>,
    sigma_xy: &DMatrix<T>,
    k: usize,
    lambda: T,
    config: &SolverConfig<T>,
) -> Result<DirectionMatrix<T>> {
    let c = spcra_correlates(sigma_x, sigma_xy, k)?;
    DirectionMatrix::raw(solve_columns(sigma_x, &c, lambda, config)?)
}

/// Exact supervised directions: `w_k = Σ_x^{-1/2} q_k` with `q_k` the
/// descending eigenvectors of `Σ_x^{-1/2} Σ_xy Σ_x^{-1/2}`.
pub fn sequential_generalized_eigen<T: Scalar>(
    sigma_xy: &DMatrix<T>,
    sigma_x: &DMatrix<T>,
    k: usize,
) -> Result<DirectionMatrix<T>> {
    let p = sigma_x.nrows();
    if sigma_x.ncols() != p || sigma_xy.shape() != sigma_x.shape() {
        return Err(SpcrError::Dimension(
            "sigma_x and sigma_xy must be square of equal size".into(),
        ));
    }
    if k == 0 || k > p {
        return Err(SpcrError::InvalidParameter(format!(
            "K = {k} outside 1..={p}"
        )));
    }
    let (values, _) = sorted_symmetric_eigen(sigma_x);
    let smallest = values[p - 1];
    if !(smallest > T::eps() * values[0].abs() * T::from_usize_lossy(p)) {
        return Err(SpcrError::Precondition(format!(
            "sigma_x is not positive definite (smallest eigenvalue {smallest:e})"
        )));
    }
    let inv_half = matrix_power(sigma_x, MatrixExponent::NegHalf)?;
    let q = top_k_eigen(&(&inv_half * sigma_xy * &inv_half), k)?.vectors;
    let mut w = inv_half * q;
    // one Σ_x-Gram-Schmidt pass removes rounding drift before certification
    for j in 0..k {
        for i in 0..j {
            let wi = w.column(i).into_owned();
            let proj = wi.dot(&(sigma_x * w.column(j)));
            w.column_mut(j).axpy(-proj, &wi, T::one());
        }
        let wj = w.column(j).into_owned();
        let norm = wj.dot(&(sigma_x * &wj)).sqrt();
        w.column_mut(j).scale_mut(T::one() / norm);
    }
    let gram = w.transpose() * sigma_x * &w;
    let err = (gram - DMatrix::identity(k, k)).amax();
    if !(err <= T::tol(1e-8)) {
        return Err(SpcrError::Numerical(format!(
            "generalized eigenvectors not sigma_x-orthonormal (error {err:e})"
        )));
    }
    DirectionMatrix::new(w, Normalization::SigmaXUnit)
}

/// `wᵀ Σ_xy w / wᵀ Σ_x w`.
pub fn rayleigh_quotient<T: Scalar>(
    w: &DVector<T>,
    sigma_xy: &DMatrix<T>,
    sigma_x: &DMatrix<T>,
) -> Result<T> {
    if w.len() != sigma_x.nrows() || sigma_x.shape() != sigma_xy.shape() {
        return Err(SpcrError::Dimension(
            "direction length does not match matrices".into(),
        ));
    }
    let den = w.dot(&(sigma_x * w));
    if !(den > T::zero()) {
        return Err(SpcrError::InvalidDirection(
            "wᵀ Σ_x w is not positive".into(),
        ));
    }
    Ok(w.dot(&(sigma_xy * w)) / den)
}

impl<T: Scalar> SolverConfig<T> {
    /// Copy with the warm start replaced.
    pub fn with_warm_start(&self, warm: Option<DirectionMatrix<T>>) -> Self {
        let mut c = self.without_warm_start();
        c.warm_start = warm;
        c
    }
}
