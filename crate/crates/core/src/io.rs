//! CSV matrix files with `NA` for missing cells, JSON artifacts and run manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::CoupledData;
use crate::evaluation::TruthView;
use crate::likelihood::LinkKind;
use crate::penalty::PenaltySpec;
use crate::simulation::{SimGroundTruth, SimParams};
use crate::solver::ModelFit;
use crate::error::{GscaError, Result};

pub const MISSING: &str = "NA";

/// Shortest decimal text that parses back to exactly the same `f64`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else if v.is_finite() {
        format!("{v:e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A matrix with column names and optional missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub names: Vec<String>,
    pub values: Array2<f64>,
    /// `true` where the cell holds a number.
    pub observed: Array2<bool>,
}

impl MatrixFile {
    pub fn dense(names: Vec<String>, values: Array2<f64>) -> Self {
        let observed = Array2::from_elem(values.dim(), true);
        Self { names, values, observed }
    }

    pub fn with_default_names(prefix: &str, values: Array2<f64>, observed: Option<Array2<bool>>) -> Self {
        let names = default_names(prefix, values.ncols());
        let observed = observed.unwrap_or_else(|| Array2::from_elem(values.dim(), true));
        Self { names, values, observed }
    }
}

pub fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}

fn data_error(path: &Path, msg: impl std::fmt::Display) -> GscaError {
    GscaError::InvalidData(format!("{}: {msg}", path.display()))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixFile> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() {
        return Err(data_error(path, "no columns"));
    }
    let mut values = Vec::new();
    let mut observed = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != names.len() {
            return Err(data_error(path, format!("row {} has {} fields, expected {}", r + 1, record.len(), names.len())));
        }
        for (c, cell) in record.iter().enumerate() {
            if cell == MISSING {
                values.push(0.0);
                observed.push(false);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| data_error(path, format!("row {}, column {}: cannot parse {cell:?}", r + 1, names[c])))?;
                values.push(v);
                observed.push(true);
            }
        }
        rows += 1;
    }
    let cols = names.len();
    Ok(MatrixFile {
        names,
        values: Array2::from_shape_vec((rows, cols), values).expect("row lengths checked"),
        observed: Array2::from_shape_vec((rows, cols), observed).expect("row lengths checked"),
    })
}

pub fn write_matrix(path: impl AsRef<Path>, file: &MatrixFile) -> Result<()> {
    write_matrix_parts(path, &file.names, file.values.view(), Some(file.observed.view()))
}

/// Writes `values` with a header row; cells with `observed == false` become `NA`.
pub fn write_matrix_parts(
    path: impl AsRef<Path>,
    names: &[String],
    values: ArrayView2<'_, f64>,
    observed: Option<ArrayView2<'_, bool>>,
) -> Result<()> {
    if names.len() != values.ncols() {
        return Err(GscaError::ShapeMismatch(format!(
            "{} column names for {} columns",
            names.len(),
            values.ncols()
        )));
    }
    if let Some(q) = observed {
        if q.dim() != values.dim() {
            return Err(GscaError::ShapeMismatch("mask and values differ in shape".into()));
        }
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(names)?;
    let mut row = Vec::with_capacity(values.ncols());
    for i in 0..values.nrows() {
        row.clear();
        for j in 0..values.ncols() {
            let seen = observed.map_or(true, |q| q[[i, j]]);
            row.push(if seen { format_f64(values[[i, j]]) } else { MISSING.to_owned() });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a dense matrix with generated column names.
pub fn write_dense(path: impl AsRef<Path>, prefix: &str, values: ArrayView2<'_, f64>) -> Result<()> {
    write_matrix_parts(path, &default_names(prefix, values.ncols()), values, None)
}

/// Writes a vector as a one-column CSV.
pub fn write_vector(path: impl AsRef<Path>, name: &str, values: ArrayView1<'_, f64>) -> Result<()> {
    let col = values.to_owned().into_shape_with_order((values.len(), 1)).expect("contiguous");
    write_matrix_parts(path, &[name.to_owned()], col.view(), None)
}

/// Reads the binary and quantitative blocks and checks they describe the same samples.
pub fn read_coupled(x1: impl AsRef<Path>, x2: impl AsRef<Path>) -> Result<(CoupledData, Vec<String>, Vec<String>)> {
    let (p1, p2) = (x1.as_ref(), x2.as_ref());
    let m1 = read_matrix(p1)?;
    let m2 = read_matrix(p2)?;
    if m1.values.nrows() != m2.values.nrows() {
        return Err(GscaError::InvalidData(format!(
            "{} has {} rows but {} has {}",
            p1.display(),
            m1.values.nrows(),
            p2.display(),
            m2.values.nrows()
        )));
    }
    for ((v, &q), idx) in m1.values.iter().zip(m1.observed.iter()).zip(0..) {
        if q && *v != 0.0 && *v != 1.0 {
            let (i, j) = (idx / m1.values.ncols(), idx % m1.values.ncols());
            return Err(data_error(p1, format!("binary value {v} at row {}, column {}", i + 1, m1.names[j])));
        }
    }
    let data = CoupledData::new(m1.values, m2.values, m1.observed, m2.observed)?;
    Ok((data, m1.names, m2.names))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Serializes rows of a tidy table with a header derived from the row type.
pub fn write_table<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    /// Input path to SHA-256 digest.
    pub input_digests: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn new(command: &str, parameters: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_owned(),
            parameters,
            seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            input_digests: BTreeMap::new(),
            outputs: Vec::new(),
            elapsed_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.input_digests.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        let name = path
            .as_ref()
            .file_name()
            .map_or_else(|| path.as_ref().display().to_string(), |n| n.to_string_lossy().into_owned());
        self.outputs.push(name);
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(Self::FILE_NAME);
        write_json(&path, self)?;
        Ok(path)
    }
}

/// Serializable summary of a fit; matrices go to separate CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub penalty: Option<PenaltySpec>,
    pub exact_rank: Option<usize>,
    pub link: LinkKind,
    pub eps_f: f64,
    pub sigma2: f64,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub mu: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warned_saturated: bool,
}

impl FitRecord {
    pub fn new(fit: &ModelFit, eps_f: f64) -> Self {
        Self {
            penalty: fit.penalty,
            exact_rank: fit.exact_rank,
            link: fit.link,
            eps_f,
            sigma2: fit.sigma2,
            rank: fit.rank(),
            singular_values: fit.singular_values.clone(),
            mu: fit.mu.to_vec(),
            loss_trace: fit.loss_trace.clone(),
            iterations: fit.iterations,
            converged: fit.converged,
            warned_saturated: fit.warned_saturated,
        }
    }
}

/// Writes `fit.json`, `mu.csv`, `Z.csv`, `A.csv`, `B1.csv` and `B2.csv`.
pub fn write_fit(dir: impl AsRef<Path>, fit: &ModelFit, eps_f: f64, names: &[String]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    let p = dir.join("fit.json");
    write_json(&p, &FitRecord::new(fit, eps_f))?;
    out.push(p);
    let p = dir.join("mu.csv");
    write_vector(&p, "mu", fit.mu.view())?;
    out.push(p);
    let p = dir.join("Z.csv");
    let z_names = if names.len() == fit.z.ncols() { names.to_vec() } else { default_names("V", fit.z.ncols()) };
    write_matrix_parts(&p, &z_names, fit.z.view(), None)?;
    out.push(p);
    for (name, m) in [("A.csv", &fit.a), ("B1.csv", &fit.b1), ("B2.csv", &fit.b2)] {
        let p = dir.join(name);
        write_dense(&p, "comp", m.view())?;
        out.push(p);
    }
    Ok(out)
}

/// Scalar description of a simulated truth, stored as `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub params: SimParams,
    pub c1: f64,
    pub c2: f64,
    pub d: Vec<f64>,
    pub snr1_realized: f64,
    pub snr2_realized: f64,
    /// Binary columns of the generated block that were kept.
    pub kept_binary_columns: Vec<usize>,
    pub j1: usize,
}

/// Writes the simulated data and every ground-truth quantity.
pub fn write_simulation(dir: impl AsRef<Path>, truth: &SimGroundTruth, kept: &[usize]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let names1 = default_names("bin", truth.j1());
    let names2 = default_names("num", truth.x2.ncols());
    let all: Vec<String> = names1.iter().chain(&names2).cloned().collect();
    let mut out = Vec::new();
    let mut put = |name: &str, names: &[String], m: ArrayView2<'_, f64>| -> Result<()> {
        let p = dir.join(name);
        write_matrix_parts(&p, names, m, None)?;
        out.push(p);
        Ok(())
    };
    put("X1.csv", &names1, truth.x1.view())?;
    put("X2.csv", &names2, truth.x2.view())?;
    put("Theta_true.csv", &all, truth.theta().view())?;
    put("Z_true.csv", &all, truth.z.view())?;
    put("X1_star.csv", &names1, truth.x1_star.view())?;
    put("E.csv", &all, truth.noise().view())?;
    let comps = default_names("comp", truth.u.ncols());
    put("U.csv", &comps, truth.u.view())?;
    put("V1.csv", &comps, truth.v1.view())?;
    put("V2.csv", &comps, truth.v2.view())?;
    let p = dir.join("mu_true.csv");
    write_vector(&p, "mu", truth.mu.view())?;
    out.push(p);
    let record = TruthRecord {
        params: truth.params.clone(),
        c1: truth.c1,
        c2: truth.c2,
        d: truth.d.clone(),
        snr1_realized: truth.snr1_realized,
        snr2_realized: truth.snr2_realized,
        kept_binary_columns: kept.to_vec(),
        j1: truth.j1(),
    };
    let p = dir.join("truth.json");
    write_json(&p, &record)?;
    out.push(p);
    Ok(out)
}

/// Ground truth read back from a simulation directory.
#[derive(Debug, Clone)]
pub struct LoadedTruth {
    pub record: TruthRecord,
    pub mu: Array1<f64>,
    pub z: Array2<f64>,
}

impl LoadedTruth {
    pub fn view(&self) -> TruthView<'_> {
        TruthView {
            mu: self.mu.view(),
            z: self.z.view(),
            j1: self.record.j1,
        }
    }
}

pub fn read_truth(dir: impl AsRef<Path>) -> Result<LoadedTruth> {
    let dir = dir.as_ref();
    let record: TruthRecord = read_json(dir.join("truth.json"))?;
    let z = read_matrix(dir.join("Z_true.csv"))?.values;
    let mu = read_matrix(dir.join("mu_true.csv"))?.values.column(0).to_owned();
    if mu.len() != z.ncols() || record.j1 > z.ncols() {
        return Err(GscaError::InvalidData(format!("{}: inconsistent truth files", dir.display())));
    }
    Ok(LoadedTruth { record, mu, z })
}
