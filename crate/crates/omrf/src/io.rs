//! File formats: dataset and edge-list CSV, chain CSV plus JSON sidecar.
//!
//! Every writer goes through [`atomic_write`].

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use omrf_core::estimate::GraphStructure;
use omrf_core::linalg::Matrix;
use omrf_core::model::{Dataset, ModelSpec, ParamVector};
use omrf_core::rescale::RescalingRecord;
use omrf_core::samplers::{Chain, Method};
use serde::{Deserialize, Serialize};

use crate::config::{ModelSection, RunConfig};
use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::write(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::write(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::write(path, e))?;
    tmp.persist(path).map_err(|e| Error::write(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Parses a dataset: header row, one integer column per variable, cells in `0..=m`.
///
/// `p` and `m` are checked against `model` when given; otherwise `m` is the
/// largest observed category (at least 1).
pub fn parse_dataset<R: Read>(
    reader: R,
    origin: &Path,
    model: &ModelSection,
    enum_cap: Option<u64>,
) -> Result<(Dataset, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::format(origin, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let p = header.len();
    if let Some(want) = model.p {
        if want != p {
            return Err(Error::format(origin, format!("expected {want} columns, found {p}")));
        }
    }
    let mut values = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(origin, e))?;
        if record.len() != p {
            return Err(Error::format(
                origin,
                format!("row {} has {} cells, expected {p}", r + 1, record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: u8 = cell.trim().parse().map_err(|_| {
                Error::format(
                    origin,
                    format!(
                        "row {}, column '{}': '{cell}' is not a category in 0..=254",
                        r + 1,
                        header[c]
                    ),
                )
            })?;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::format(origin, "dataset has no rows"));
    }
    let observed = values.iter().copied().max().unwrap_or(0).max(1) as usize;
    let m = model.m.unwrap_or(observed);
    let mut spec = ModelSpec::new(p, m)?;
    if let Some(cap) = enum_cap {
        spec = spec.with_enum_cap(cap);
    }
    Ok((Dataset::new(spec, values)?, header))
}

pub fn read_dataset(path: &Path, cfg: &RunConfig) -> Result<(Dataset, Vec<String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::read(path, e))?;
    parse_dataset(std::io::BufReader::new(file), path, &cfg.model, cfg.enum_cap)
}

pub fn default_column_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("V{i}")).collect()
}

pub fn dataset_csv(data: &Dataset, names: &[String]) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for row in data.rows() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Edge list with 1-based node indices under an `i,j` header.
pub fn structure_csv(structure: &GraphStructure) -> String {
    let mut out = String::from("i,j\n");
    for &(a, b) in structure.edges() {
        let _ = writeln!(out, "{},{}", a + 1, b + 1);
    }
    out
}

pub fn read_structure(path: &Path, p: usize) -> Result<GraphStructure> {
    let file = std::fs::File::open(path).map_err(|e| Error::read(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut edges = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e))?;
        let node = |k: usize| -> Result<usize> {
            let raw = record.get(k).unwrap_or("").trim();
            match raw.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(Error::format(
                    path,
                    format!("row {}: '{raw}' is not a 1-based node index", r + 1),
                )),
            }
        };
        if record.len() != 2 {
            return Err(Error::format(path, format!("row {} must have two columns", r + 1)));
        }
        edges.push((node(0)?, node(1)?));
    }
    Ok(GraphStructure::new(p, edges)?)
}

/// Summary of the step-size trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Summary {
    pub initial: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
}

impl Sigma2Summary {
    fn of(trace: &[f64]) -> Option<Self> {
        let (&first, &last) = (trace.first()?, trace.last()?);
        Some(Self {
            initial: first,
            last,
            min: trace.iter().copied().fold(f64::INFINITY, f64::min),
            max: trace.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// JSON companion of a chain CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSidecar {
    pub method: Method,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub parameters: Vec<String>,
    pub iterations: usize,
    pub burn_in: usize,
    pub retained: usize,
    pub acceptance_rate: f64,
    /// One `1` (accepted) or `0` per iteration, burn-in included.
    pub accept_trace: String,
    pub sigma2: Option<Sigma2Summary>,
    pub wall_time_seconds: Option<f64>,
    pub theta_star: Option<ParamVector>,
    pub rescaling: Option<RescalingRecord>,
    pub shift: Option<Vec<f64>>,
    pub rescaling_updates: usize,
    pub nonfinite_proposals: usize,
    pub warnings: Vec<String>,
    pub config: Option<RunConfig>,
}

impl ChainSidecar {
    pub fn new(chain: &Chain, data: &Dataset, config: Option<&RunConfig>) -> Self {
        let spec = data.spec();
        Self {
            method: chain.method,
            seed: chain.seed,
            n: data.n(),
            p: spec.p(),
            m: spec.m(),
            parameters: spec.param_names(),
            iterations: chain.accept_trace.len(),
            burn_in: chain.burn_in,
            retained: chain.len(),
            acceptance_rate: chain.acceptance_rate(),
            accept_trace: chain.accept_trace.iter().map(|&a| if a { '1' } else { '0' }).collect(),
            sigma2: Sigma2Summary::of(&chain.sigma2_trace),
            wall_time_seconds: chain.wall_time_seconds,
            theta_star: chain.theta_star.clone(),
            rescaling: chain.rescaling.clone(),
            shift: chain.shift.clone(),
            rescaling_updates: chain.rescaling_updates,
            nonfinite_proposals: chain.nonfinite_proposals,
            warnings: chain.warnings.clone(),
            config: config.cloned(),
        }
    }
}

/// Draws as CSV, columns named by parameter; values use shortest round-trip formatting.
pub fn draws_csv(draws: &Matrix, names: &[String]) -> String {
    let mut out = String::with_capacity(draws.nrows() * draws.ncols() * 20);
    out.push_str(&names.join(","));
    out.push('\n');
    for r in 0..draws.nrows() {
        for c in 0..draws.ncols() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", draws[(r, c)]);
        }
        out.push('\n');
    }
    out
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `<stem>.csv` and `<stem>.json`; returns the CSV path.
pub fn write_chain(
    dir: &Path,
    stem: &str,
    chain: &Chain,
    data: &Dataset,
    config: Option<&RunConfig>,
) -> Result<PathBuf> {
    let csv_path = dir.join(format!("{stem}.csv"));
    atomic_write(
        &csv_path,
        draws_csv(&chain.draws, &data.spec().param_names()).as_bytes(),
    )?;
    write_json(&sidecar_path(&csv_path), &ChainSidecar::new(chain, data, config))?;
    Ok(csv_path)
}

pub fn read_draws(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let file = std::fs::File::open(path).map_err(|e| Error::read(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::format(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let d = names.len();
    let mut values = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e))?;
        if record.len() != d {
            return Err(Error::format(
                path,
                format!("row {} has {} cells, expected {d}", r + 1, record.len()),
            ));
        }
        for cell in record.iter() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {}: '{cell}' is not a number", r + 1)))?;
            values.push(v);
        }
    }
    let rows = values.len() / d.max(1);
    Ok((names, Matrix::from_row_slice(rows, d, &values)))
}

/// Reads a chain CSV and its sidecar. The step-size trace is not stored, so
/// `sigma2_trace` holds the last recorded value at every iteration.
pub fn read_chain(path: &Path) -> Result<(Chain, ChainSidecar)> {
    let (names, draws) = read_draws(path)?;
    let side_path = sidecar_path(path);
    let side: ChainSidecar = read_json(&side_path)?;
    if names != side.parameters {
        return Err(Error::format(path, "column names do not match the sidecar"));
    }
    if draws.nrows() != side.retained {
        return Err(Error::format(
            path,
            format!("{} rows but the sidecar records {}", draws.nrows(), side.retained),
        ));
    }
    let accept_trace: Vec<bool> = side.accept_trace.chars().map(|c| c == '1').collect();
    let last = side.sigma2.map_or(f64::NAN, |s| s.last);
    let chain = Chain {
        method: side.method,
        draws,
        pseudo_draws: None,
        sigma2_trace: vec![last; accept_trace.len()],
        accept_trace,
        burn_in: side.burn_in,
        seed: side.seed,
        theta_star: side.theta_star.clone(),
        rescaling: side.rescaling.clone(),
        shift: side.shift.clone(),
        rescaling_updates: side.rescaling_updates,
        nonfinite_proposals: side.nonfinite_proposals,
        warnings: side.warnings.clone(),
        wall_time_seconds: side.wall_time_seconds,
    };
    Ok((chain, side))
}
