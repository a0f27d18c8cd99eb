//! Natural cubic smoothing splines with knots at the grid points.
//!
//! Uses the Reinsch formulation: with `Q` the L×(L-2) second-difference
//! matrix and `R` the (L-2)×(L-2) tridiagonal Gram matrix of the B-spline
//! second derivatives, the fit is `g = y - λ·Q·γ` where
//! `(R + λ·QᵀQ)·γ = Qᵀy`. The pentadiagonal system is factored once per
//! `λ` as `L·D·Lᵀ`; the band of its inverse gives the trace of the smoother.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataset::{FunctionalDataset, Grid};
use crate::error::{Result, SpcrError};
use crate::scalar::Scalar;

/// Number of candidate smoothing parameters in the GCV search.
pub const GCV_GRID_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit<T: Scalar> {
    pub lambda_s: T,
    pub fitted: Vec<T>,
    pub gcv: T,
    pub edf: T,
}

/// Band storage of the system, its factorization and the penalty structure.
struct ReinschSystem<T: Scalar> {
    len: usize,
    // columns of Q: (sub, mid, sup) entries at rows c, c+1, c+2
    q_lo: Vec<T>,
    q_mid: Vec<T>,
    q_hi: Vec<T>,
    // R bands
    r0: Vec<T>,
    r1: Vec<T>,
    // QᵀQ bands
    c0: Vec<T>,
    c1: Vec<T>,
    c2: Vec<T>,
}

struct Factor<T: Scalar> {
    d: Vec<T>,
    l1: Vec<T>,
    l2: Vec<T>,
}

impl<T: Scalar> ReinschSystem<T> {
    fn new(grid: &Grid<T>) -> Result<Self> {
        let len = grid.len();
        if len < 4 {
            return Err(SpcrError::InsufficientPoints {
                needed: 4,
                got: len,
            });
        }
        let t = grid.points();
        let h: Vec<T> = (0..len - 1).map(|i| t[i + 1] - t[i]).collect();
        let m = len - 2;
        let q_lo: Vec<T> = (0..m).map(|c| T::one() / h[c]).collect();
        let q_hi: Vec<T> = (0..m).map(|c| T::one() / h[c + 1]).collect();
        let q_mid: Vec<T> = (0..m).map(|c| -q_lo[c] - q_hi[c]).collect();
        let third = T::cst(1.0 / 3.0);
        let sixth = T::cst(1.0 / 6.0);
        let r0: Vec<T> = (0..m).map(|c| (h[c] + h[c + 1]) * third).collect();
        let r1: Vec<T> = (0..m.saturating_sub(1)).map(|c| h[c + 1] * sixth).collect();
        let c0: Vec<T> = (0..m)
            .map(|c| q_lo[c] * q_lo[c] + q_mid[c] * q_mid[c] + q_hi[c] * q_hi[c])
            .collect();
        let c1: Vec<T> = (0..m.saturating_sub(1))
            .map(|c| q_mid[c] * q_lo[c + 1] + q_hi[c] * q_mid[c + 1])
            .collect();
        let c2: Vec<T> = (0..m.saturating_sub(2))
            .map(|c| q_hi[c] * q_lo[c + 2])
            .collect();
        Ok(Self {
            len,
            q_lo,
            q_mid,
            q_hi,
            r0,
            r1,
            c0,
            c1,
            c2,
        })
    }

    fn m(&self) -> usize {
        self.len - 2
    }

    fn factor(&self, lambda: T) -> Result<Factor<T>> {
        let m = self.m();
        let mut d = vec![T::zero(); m];
        let mut l1 = vec![T::zero(); m];
        let mut l2 = vec![T::zero(); m];
        for j in 0..m {
            let mut dj = self.r0[j] + lambda * self.c0[j];
            if j >= 1 {
                dj -= l1[j - 1] * l1[j - 1] * d[j - 1];
            }
            if j >= 2 {
                dj -= l2[j - 2] * l2[j - 2] * d[j - 2];
            }
            if !(dj > T::zero()) || !dj.is_finite() {
                return Err(SpcrError::Numerical(format!(
                    "smoothing system not positive definite at pivot {j}"
                )));
            }
            d[j] = dj;
            if j + 1 < m {
                let mut b1 = self.r1[j] + lambda * self.c1[j];
                if j >= 1 {
                    b1 -= l1[j - 1] * d[j - 1] * l2[j - 1];
                }
                l1[j] = b1 / dj;
            }
            if j + 2 < m {
                l2[j] = lambda * self.c2[j] / dj;
            }
        }
        Ok(Factor { d, l1, l2 })
    }

    fn qt_mul(&self, y: &[T]) -> Vec<T> {
        (0..self.m())
            .map(|c| self.q_lo[c] * y[c] + self.q_mid[c] * y[c + 1] + self.q_hi[c] * y[c + 2])
            .collect()
    }

    fn q_mul(&self, g: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.len];
        for c in 0..self.m() {
            out[c] += self.q_lo[c] * g[c];
            out[c + 1] += self.q_mid[c] * g[c];
            out[c + 2] += self.q_hi[c] * g[c];
        }
        out
    }

    fn solve(&self, f: &Factor<T>, rhs: &[T]) -> Vec<T> {
        let m = self.m();
        let mut z = rhs.to_vec();
        for j in 0..m {
            if j >= 1 {
                z[j] = z[j] - f.l1[j - 1] * z[j - 1];
            }
            if j >= 2 {
                z[j] = z[j] - f.l2[j - 2] * z[j - 2];
            }
        }
        for j in 0..m {
            z[j] /= f.d[j];
        }
        for j in (0..m).rev() {
            if j + 1 < m {
                z[j] = z[j] - f.l1[j] * z[j + 1];
            }
            if j + 2 < m {
                z[j] = z[j] - f.l2[j] * z[j + 2];
            }
        }
        z
    }

    /// Trace of the smoother matrix, `L - λ·tr(B⁻¹QᵀQ)`, from the inverse band.
    fn edf(&self, lambda: T, f: &Factor<T>) -> T {
        let m = self.m();
        let mut s0 = vec![T::zero(); m];
        let mut s1 = vec![T::zero(); m];
        let mut s2 = vec![T::zero(); m];
        for i in (0..m).rev() {
            let a = if i + 1 < m { f.l1[i] } else { T::zero() };
            let b = if i + 2 < m { f.l2[i] } else { T::zero() };
            let s0_next = if i + 1 < m { s0[i + 1] } else { T::zero() };
            let s1_next = if i + 1 < m { s1[i + 1] } else { T::zero() };
            let s0_next2 = if i + 2 < m { s0[i + 2] } else { T::zero() };
            s2[i] = -a * s1_next - b * s0_next2;
            s1[i] = -a * s0_next - b * s1_next;
            s0[i] = T::one() / f.d[i] - a * s1[i] - b * s2[i];
        }
        let two = T::cst(2.0);
        let mut tr = T::zero();
        for i in 0..m {
            tr += s0[i] * self.c0[i];
            if i + 1 < m {
                tr += two * s1[i] * self.c1[i];
            }
            if i + 2 < m {
                tr += two * s2[i] * self.c2[i];
            }
        }
        T::from_usize_lossy(self.len) - lambda * tr
    }

    fn fit(&self, values: &[T], lambda: T) -> Result<SplineFit<T>> {
        let len_t = T::from_usize_lossy(self.len);
        if lambda == T::zero() {
            // interpolation: no residual, so the GCV ratio is taken as zero
            return Ok(SplineFit {
                lambda_s: lambda,
                fitted: values.to_vec(),
                gcv: T::zero(),
                edf: len_t,
            });
        }
        let f = self.factor(lambda)?;
        let gamma = self.solve(&f, &self.qt_mul(values));
        let correction = self.q_mul(&gamma);
        let fitted: Vec<T> = values
            .iter()
            .zip(&correction)
            .map(|(&y, &c)| y - lambda * c)
            .collect();
        if fitted.iter().any(|v| !v.is_finite()) {
            return Err(SpcrError::Numerical(
                "non-finite smoothing spline fit".into(),
            ));
        }
        let rss = values
            .iter()
            .zip(&fitted)
            .fold(T::zero(), |acc, (&y, &g)| acc + (y - g) * (y - g));
        let two = T::cst(2.0);
        let edf = self.edf(lambda, &f).max(two).min(len_t);
        let denom = len_t - edf;
        let gcv = if denom > T::zero() {
            len_t * rss / (denom * denom)
        } else {
            T::zero()
        };
        Ok(SplineFit {
            lambda_s: lambda,
            fitted,
            gcv,
            edf,
        })
    }
}

/// The candidate smoothing parameters searched by GCV on `grid`.
pub fn gcv_lambda_grid<T: Scalar>(grid: &Grid<T>) -> Vec<T> {
    let span = grid.span().to_f64_lossy();
    let scale = span * span * span;
    let (lo, hi) = ((1e-9f64).ln(), (1e3f64).ln());
    (0..GCV_GRID_SIZE)
        .map(|i| {
            let frac = i as f64 / (GCV_GRID_SIZE - 1) as f64;
            T::cst((lo + frac * (hi - lo)).exp() * scale)
        })
        .collect()
}

/// Smooths one curve; `lambda_s = None` selects the parameter by GCV.
pub fn smooth_curve<T: Scalar>(
    values: &[T],
    grid: &Grid<T>,
    lambda_s: Option<T>,
) -> Result<SplineFit<T>> {
    if values.len() != grid.len() {
        return Err(SpcrError::Dimension(format!(
            "curve has {} values, grid has {}",
            values.len(),
            grid.len()
        )));
    }
    let system = ReinschSystem::new(grid)?;
    match lambda_s {
        Some(l) if l < T::zero() => Err(SpcrError::InvalidParameter(
            "smoothing parameter must be >= 0".into(),
        )),
        Some(l) => system.fit(values, l),
        None => {
            let mut best: Option<SplineFit<T>> = None;
            for lambda in gcv_lambda_grid(grid) {
                let fit = system.fit(values, lambda)?;
                if best.as_ref().is_none_or(|b| fit.gcv < b.gcv) {
                    best = Some(fit);
                }
            }
            best.ok_or_else(|| SpcrError::Numerical("empty GCV search".into()))
        }
    }
}

/// Replaces every response curve by its smoothing-spline fit.
pub fn smooth_dataset<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    lambda_s: Option<T>,
) -> Result<FunctionalDataset<T>> {
    if dataset.n() == 0 {
        return Err(SpcrError::EmptyDataset);
    }
    let grid = dataset.grid();
    let rows: Vec<Vec<T>> = (0..dataset.n())
        .into_par_iter()
        .map(|i| {
            let curve: Vec<T> = dataset.y().row(i).iter().copied().collect();
            smooth_curve(&curve, grid, lambda_s).map(|f| f.fitted)
        })
        .collect::<Result<_>>()?;
    let y = DMatrix::from_fn(dataset.n(), dataset.grid_len(), |i, l| rows[i][l]);
    dataset.with_responses(y)
}
