//! File formats: CSV matrices, JSON dataset manifests and model files.
//!
//! Every writer goes through a temporary file in the destination directory
//! followed by a rename, so readers never observe a partial file. Outputs
//! carry no timestamps and are byte-identical for identical inputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{FunctionalDataset, Grid};
use crate::error::{Result, SpcrError};
use crate::scalar::Scalar;
use crate::simulate::GroundTruth;
use crate::solver::{DirectionMatrix, Normalization};
use crate::spcr::{FitConfig, Method, SpcrModel};

/// Format tag of model files.
pub const MODEL_FORMAT: &str = "spcr-model/1";

/// Where an output came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub seed: Option<u64>,
    /// SHA-256 of the JSON-serialized configuration, hex encoded.
    pub config_hash: String,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, seed: Option<u64>, config: &C) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            seed,
            config_hash: config_hash(config)?,
        })
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| SpcrError::Parse(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn io_err(path: &Path, source: std::io::Error) -> SpcrError {
    if source.kind() == std::io::ErrorKind::NotFound {
        SpcrError::MissingFile(path.display().to_string())
    } else {
        SpcrError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_err(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| SpcrError::Parse(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| SpcrError::Parse(format!("{}: {e}", path.display())))
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV text of a matrix with header `{prefix}1,…,{prefix}c`.
pub fn matrix_to_csv<T: Scalar>(m: &DMatrix<T>, prefix: &str) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format_float(m[(i, j)].to_f64_lossy()))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv<T: Scalar>(path: &Path, m: &DMatrix<T>, prefix: &str) -> Result<()> {
    write_atomic(path, matrix_to_csv(m, prefix).as_bytes())
}

/// Reads a headed numeric CSV into a dense matrix.
pub fn read_matrix_csv<T: Scalar>(path: &Path) -> Result<DMatrix<T>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let ncols = reader
        .headers()
        .map_err(|e| SpcrError::Parse(format!("{}: {e}", path.display())))?
        .len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SpcrError::Parse(format!("{}: {e}", path.display())))?;
        if record.len() != ncols {
            return Err(SpcrError::Parse(format!(
                "{}: row {} has {} fields, header has {ncols}",
                path.display(),
                line + 1,
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                SpcrError::Parse(format!(
                    "{}: row {}: bad number {field:?}",
                    path.display(),
                    line + 1
                ))
            })?;
            values.push(T::cst(v));
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

fn write_vector_csv<T: Scalar>(path: &Path, v: &DVector<T>, name: &str) -> Result<()> {
    let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let mut text = matrix_to_csv(&m, name);
    text.replace_range(..text.find('\n').unwrap_or(0), name);
    write_atomic(path, text.as_bytes())
}

fn read_vector_csv<T: Scalar>(path: &Path) -> Result<DVector<T>> {
    let m: DMatrix<T> = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(SpcrError::Parse(format!(
            "{}: expected a single column",
            path.display()
        )));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// JSON manifest naming the files of a dataset, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub x: String,
    pub y: String,
    pub grid: String,
    pub centered: bool,
    /// Means removed by centering; present only for centered datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_means: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_means: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes `x.csv`, `y.csv`, `grid.csv` (and means if centered) plus
/// `dataset.json` into `dir`; returns the manifest path.
pub fn write_dataset<T: Scalar>(
    dir: &Path,
    ds: &FunctionalDataset<T>,
    provenance: Option<Provenance>,
) -> Result<PathBuf> {
    write_matrix_csv(&dir.join("x.csv"), ds.x(), "x")?;
    write_matrix_csv(&dir.join("y.csv"), ds.y(), "y")?;
    write_vector_csv(&dir.join("grid.csv"), ds.grid().points(), "t")?;
    let (x_means, y_means) = if ds.is_centered() {
        write_vector_csv(&dir.join("x_means.csv"), ds.x_means(), "mean")?;
        write_vector_csv(&dir.join("y_means.csv"), ds.y_means(), "mean")?;
        (
            Some("x_means.csv".to_string()),
            Some("y_means.csv".to_string()),
        )
    } else {
        (None, None)
    };
    let manifest = DatasetManifest {
        x: "x.csv".into(),
        y: "y.csv".into(),
        grid: "grid.csv".into(),
        centered: ds.is_centered(),
        x_means,
        y_means,
        provenance,
    };
    let path = dir.join("dataset.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a dataset from its manifest.
pub fn read_dataset<T: Scalar>(manifest_path: &Path) -> Result<FunctionalDataset<T>> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    let base = base_dir(manifest_path);
    let grid = Grid::new(read_vector_csv(&base.join(&manifest.grid))?)?;
    let x = read_matrix_csv(&base.join(&manifest.x))?;
    let y = read_matrix_csv(&base.join(&manifest.y))?;
    if !manifest.centered {
        return FunctionalDataset::new(x, y, grid);
    }
    let (Some(xm), Some(ym)) = (&manifest.x_means, &manifest.y_means) else {
        return Err(SpcrError::Parse(format!(
            "{}: centered dataset without mean files",
            manifest_path.display()
        )));
    };
    let x_means = read_vector_csv(&base.join(xm))?;
    let y_means = read_vector_csv(&base.join(ym))?;
    FunctionalDataset::from_centered(x, y, grid, x_means, y_means)
}

/// `truth.json`: paths of the ground-truth matrices written next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub setting: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_population: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
    pub beta: String,
    pub sigma_x: String,
    pub grid: String,
}

pub fn write_truth<T: Scalar>(dir: &Path, setting: u8, truth: &GroundTruth<T>) -> Result<PathBuf> {
    let mut manifest = TruthManifest {
        setting,
        v_star: None,
        v_population: None,
        gamma: None,
        beta: "beta.csv".into(),
        sigma_x: "sigma_x.csv".into(),
        grid: "grid.csv".into(),
    };
    if let Some(v) = &truth.v_star {
        write_matrix_csv(&dir.join("v_star.csv"), v, "v")?;
        manifest.v_star = Some("v_star.csv".into());
    }
    if let Some(v) = &truth.v_population {
        write_matrix_csv(&dir.join("v_population.csv"), v, "v")?;
        manifest.v_population = Some("v_population.csv".into());
    }
    if let Some(g) = &truth.gamma {
        write_matrix_csv(&dir.join("gamma.csv"), g, "t")?;
        manifest.gamma = Some("gamma.csv".into());
    }
    write_matrix_csv(&dir.join("beta.csv"), &truth.beta, "t")?;
    write_matrix_csv(&dir.join("sigma_x.csv"), &truth.sigma_x, "x")?;
    let path = dir.join("truth.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Direction matrices recorded in a truth manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthDirections<T: Scalar> {
    pub v_star: Option<DMatrix<T>>,
    pub v_population: Option<DMatrix<T>>,
}

pub fn read_truth_directions<T: Scalar>(manifest_path: &Path) -> Result<TruthDirections<T>> {
    let manifest: TruthManifest = read_json(manifest_path)?;
    let dir = base_dir(manifest_path);
    let load = |name: Option<String>| name.map(|v| read_matrix_csv(&dir.join(v))).transpose();
    Ok(TruthDirections {
        v_star: load(manifest.v_star)?,
        v_population: load(manifest.v_population)?,
    })
}

/// Serialized form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub method: Method,
    pub p: usize,
    pub grid_len: usize,
    pub k_star: usize,
    pub lambda_star: f64,
    pub bandwidth: Option<usize>,
    pub selected_features: Option<Vec<usize>>,
    pub normalization: Normalization,
    /// Row `j` holds the loadings of covariate `j` on each direction.
    pub directions: Vec<Vec<f64>>,
    /// Row `k` holds `γ̂_k` on the grid.
    pub gamma: Vec<Vec<f64>>,
    pub x_means: Vec<f64>,
    pub y_means: Vec<f64>,
    pub grid: Vec<f64>,
    pub config: FitConfig,
    pub provenance: Provenance,
}

fn rows_of<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.to_f64_lossy()).collect())
        .collect()
}

fn from_rows<T: Scalar>(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<T>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(SpcrError::Parse(format!(
            "{what}: ragged rows, expected {ncols} columns"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| {
        T::cst(rows[i][j])
    }))
}

fn to_vec<T: Scalar>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

impl ModelFile {
    pub fn from_model<T: Scalar>(
        model: &SpcrModel<T>,
        config: &FitConfig,
        provenance: Provenance,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            method: model.method,
            p: model.p(),
            grid_len: model.grid.len(),
            k_star: model.k_star,
            lambda_star: model.lambda_star.to_f64_lossy(),
            bandwidth: model.bandwidth,
            selected_features: model.selected_features.clone(),
            normalization: model.directions.normalization(),
            directions: rows_of(model.directions.columns()),
            gamma: rows_of(&model.gamma),
            x_means: to_vec(&model.x_means),
            y_means: to_vec(&model.y_means),
            grid: to_vec(model.grid.points()),
            config: config.clone(),
            provenance,
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<SpcrModel<T>> {
        if self.format != MODEL_FORMAT {
            return Err(SpcrError::Parse(format!(
                "unsupported model format {:?}",
                self.format
            )));
        }
        if self.directions.len() != self.p
            || self.gamma.len() != self.k_star
            || self.grid.len() != self.grid_len
        {
            return Err(SpcrError::Parse(
                "model dimensions disagree with stored arrays".into(),
            ));
        }
        let directions = from_rows::<T>(&self.directions, self.k_star, "directions")?;
        let gamma = from_rows::<T>(&self.gamma, self.grid_len, "gamma")?;
        let cast = |v: &[f64]| DVector::from_iterator(v.len(), v.iter().map(|&x| T::cst(x)));
        let model = SpcrModel {
            method: self.method,
            directions: DirectionMatrix::new(directions, self.normalization)?,
            gamma,
            k_star: self.k_star,
            lambda_star: T::cst(self.lambda_star),
            bandwidth: self.bandwidth,
            selected_features: self.selected_features.clone(),
            x_means: cast(&self.x_means),
            y_means: cast(&self.y_means),
            grid: Grid::new(cast(&self.grid))?,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model<T: Scalar>(
    path: &Path,
    model: &SpcrModel<T>,
    config: &FitConfig,
    provenance: Provenance,
) -> Result<()> {
    write_json(path, &ModelFile::from_model(model, config, provenance))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<SpcrModel<T>> {
    read_json::<ModelFile>(path)?.to_model()
}
