//! Paired scalar covariates and response curves on a shared time grid.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpcrError};
use crate::scalar::Scalar;

/// Time points of the response curves with their trapezoid quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Scalar> {
    points: DVector<T>,
    weights: DVector<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(points: DVector<T>) -> Result<Self> {
        let weights = trapezoid_weights(points.as_slice())?;
        Ok(Self { points, weights })
    }

    /// `len` equally spaced points from `start` to `end` inclusive.
    pub fn uniform(len: usize, start: T, end: T) -> Result<Self> {
        if len < 2 {
            return Err(SpcrError::InvalidGrid(format!(
                "need at least 2 points, got {len}"
            )));
        }
        let step = (end - start) / T::from_usize_lossy(len - 1);
        let points = DVector::from_fn(len, |l, _| {
            if l + 1 == len {
                end
            } else {
                start + step * T::from_usize_lossy(l)
            }
        });
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &DVector<T> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn start(&self) -> T {
        self.points[0]
    }

    pub fn end(&self) -> T {
        self.points[self.len() - 1]
    }

    pub fn span(&self) -> T {
        self.end() - self.start()
    }

    /// Quadrature of a curve sampled on this grid.
    pub fn integrate(&self, values: &[T]) -> Result<T> {
        integrate_curve(values, self)
    }
}

/// Composite trapezoid weights for strictly increasing `points`.
pub fn trapezoid_weights<T: Scalar>(points: &[T]) -> Result<DVector<T>> {
    let len = points.len();
    if len < 2 {
        return Err(SpcrError::InvalidGrid(format!(
            "need at least 2 points, got {len}"
        )));
    }
    if let Some(i) = points.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(SpcrError::InvalidGrid(format!(
            "points not strictly increasing at index {}",
            i + 1
        )));
    }
    let half = T::cst(0.5);
    Ok(DVector::from_fn(len, |l, _| {
        if l == 0 {
            (points[1] - points[0]) * half
        } else if l + 1 == len {
            (points[len - 1] - points[len - 2]) * half
        } else {
            (points[l + 1] - points[l - 1]) * half
        }
    }))
}

pub fn integrate_curve<T: Scalar>(values: &[T], grid: &Grid<T>) -> Result<T> {
    if values.len() != grid.len() {
        return Err(SpcrError::Dimension(format!(
            "curve has {} values, grid has {} points",
            values.len(),
            grid.len()
        )));
    }
    Ok(values
        .iter()
        .zip(grid.weights.iter())
        .fold(T::zero(), |acc, (&v, &w)| acc + v * w))
}

/// Covariates `x` (n×p) and response curves `y` (n×L, one curve per row).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset<T: Scalar> {
    x: DMatrix<T>,
    y: DMatrix<T>,
    grid: Grid<T>,
    centered: bool,
    x_means: DVector<T>,
    y_means: DVector<T>,
}

impl<T: Scalar> FunctionalDataset<T> {
    /// Builds a raw (uncentered) dataset.
    pub fn new(x: DMatrix<T>, y: DMatrix<T>, grid: Grid<T>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(SpcrError::Dimension(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if y.ncols() != grid.len() {
            return Err(SpcrError::Dimension(format!(
                "Y has {} columns but the grid has {} points",
                y.ncols(),
                grid.len()
            )));
        }
        let p = x.ncols();
        let len = grid.len();
        Ok(Self {
            x,
            y,
            grid,
            centered: false,
            x_means: DVector::zeros(p),
            y_means: DVector::zeros(len),
        })
    }

    /// Wraps data the caller asserts is already centered, with the means
    /// that were removed.
    pub fn from_centered(
        x: DMatrix<T>,
        y: DMatrix<T>,
        grid: Grid<T>,
        x_means: DVector<T>,
        y_means: DVector<T>,
    ) -> Result<Self> {
        let mut d = Self::new(x, y, grid)?;
        if x_means.len() != d.p() || y_means.len() != d.grid_len() {
            return Err(SpcrError::Dimension(
                "mean vectors do not match data".into(),
            ));
        }
        d.centered = true;
        d.x_means = x_means;
        d.y_means = y_means;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<T> {
        &self.y
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn x_means(&self) -> &DVector<T> {
        &self.x_means
    }

    pub fn y_means(&self) -> &DVector<T> {
        &self.y_means
    }

    /// Same covariates and grid with new response curves; centering state is
    /// reset to raw.
    pub fn with_responses(&self, y: DMatrix<T>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.grid.clone())
    }

    /// Rows `rows` of the raw data, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows.iter());
        let y = self.y.select_rows(rows.iter());
        Self {
            x,
            y,
            grid: self.grid.clone(),
            centered: false,
            x_means: DVector::zeros(self.p()),
            y_means: DVector::zeros(self.grid_len()),
        }
    }

    /// Keeps the covariate columns `cols` only.
    pub fn select_covariates(&self, cols: &[usize]) -> Self {
        Self {
            x: self.x.select_columns(cols.iter()),
            y: self.y.clone(),
            grid: self.grid.clone(),
            centered: self.centered,
            x_means: self.x_means.select_rows(cols.iter()),
            y_means: self.y_means.clone(),
        }
    }

    /// Consumes the dataset, returning `(x, y, grid)`.
    pub fn into_parts(self) -> (DMatrix<T>, DMatrix<T>, Grid<T>) {
        (self.x, self.y, self.grid)
    }

    /// Centered copy; see [`center`].
    pub fn centered(&self) -> Result<Self> {
        center(self)
    }
}

pub(crate) fn column_means<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    let n = T::from_usize_lossy(m.nrows());
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

pub(crate) fn subtract_row_vector<T: Scalar>(m: &mut DMatrix<T>, means: &DVector<T>) {
    for (mut col, &mu) in m.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-mu);
    }
}

/// Removes column means of `X` and pointwise means of `Y`, recording both.
///
/// A dataset that is already centered is returned unchanged, so centering is
/// idempotent and the original means are preserved.
pub fn center<T: Scalar>(dataset: &FunctionalDataset<T>) -> Result<FunctionalDataset<T>> {
    if dataset.n() == 0 {
        return Err(SpcrError::EmptyDataset);
    }
    if dataset.centered {
        return Ok(dataset.clone());
    }
    let x_means = column_means(&dataset.x);
    let y_means = column_means(&dataset.y);
    let mut x = dataset.x.clone();
    let mut y = dataset.y.clone();
    subtract_row_vector(&mut x, &x_means);
    subtract_row_vector(&mut y, &y_means);
    Ok(FunctionalDataset {
        x,
        y,
        grid: dataset.grid.clone(),
        centered: true,
        x_means,
        y_means,
    })
}
