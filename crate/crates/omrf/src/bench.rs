//! Benchmark grid: conditions x replicates x methods, each compared to the
//! exact chain. Cells run in parallel, results land in a condition-indexed
//! tree, and a manifest makes interrupted runs resumable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use omrf_core::estimate::GraphStructure;
use omrf_core::metrics::{build_report, Condition, MetricsReport};
use omrf_core::model::{Dataset, ModelSpec, ParamRole, ParamVector, PriorSpec};
use omrf_core::samplers::{sample_method, Chain, McBudget, Method, SamplerConfig};
use omrf_core::simulate::{derive_seed, run_simulation_plan, SimulationPlan, StructureParams, StructureType};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BenchmarkSection, RunConfig};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
const REPORT_FILE: &str = "report.json";
const TRUTH_FILE: &str = "truth.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub structure: StructureType,
    pub p: usize,
    pub n: usize,
    pub replicate: usize,
}

impl CellSpec {
    pub fn condition_label(&self) -> String {
        format!("{}_p{}_n{}", self.structure, self.p, self.n)
    }

    pub fn id(&self) -> String {
        format!("{}/rep{:03}", self.condition_label(), self.replicate)
    }

    pub fn seed(&self, base: u64) -> u64 {
        let code = match self.structure {
            StructureType::Smallworld => 0,
            StructureType::Random => 1,
            StructureType::Full => 2,
        };
        derive_seed(base, &[code, self.p as u64, self.n as u64, self.replicate as u64])
    }
}

/// All cells of the grid in a fixed order.
pub fn grid_cells(grid: &BenchmarkSection) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for &structure in &grid.structures {
        for &p in &grid.p {
            for &n in &grid.n {
                for replicate in 0..grid.replicates {
                    cells.push(CellSpec {
                        structure,
                        p,
                        n,
                        replicate,
                    });
                }
            }
        }
    }
    cells
}

/// Generating model of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub true_theta: ParamVector,
    pub structure: GraphStructure,
    /// Parameter indices of interactions absent from the structure.
    pub absent: Vec<usize>,
}

impl CellTruth {
    fn new(spec: &ModelSpec, true_theta: ParamVector, structure: GraphStructure) -> Self {
        let absent = spec
            .interaction_indices()
            .filter(|&k| match spec.role(k) {
                ParamRole::Interaction { i, j } => !structure.contains(i, j),
                ParamRole::Threshold { .. } => false,
            })
            .collect();
        Self {
            true_theta,
            structure,
            absent,
        }
    }
}

pub struct CellOutcome {
    pub cell: CellSpec,
    pub data: Dataset,
    pub truth: CellTruth,
    pub exact: Chain,
    pub chains: Vec<Chain>,
    pub report: MetricsReport,
}

/// Settings shared by every cell.
#[derive(Clone, Debug)]
pub struct CellSettings {
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub prior: PriorSpec,
    pub methods: Vec<Method>,
    pub structure: StructureParams,
    pub gibbs_sweeps: usize,
    pub mc: McBudget,
}

impl CellSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.seed,
            sampler: cfg.sampler,
            prior: cfg.prior,
            methods: cfg.benchmark.methods.clone(),
            structure: cfg.benchmark.structure,
            gibbs_sweeps: cfg.benchmark.gibbs_sweeps,
            mc: cfg.mc_budget(),
        }
    }
}

fn timed(method: Method, data: &Dataset, prior: &PriorSpec, cfg: &SamplerConfig, mc: &McBudget) -> Result<Chain> {
    let start = Instant::now();
    let mut chain = sample_method(method, data, prior, cfg, Some(mc))?;
    chain.wall_time_seconds = Some(start.elapsed().as_secs_f64());
    Ok(chain)
}

/// Simulates the cell's dataset, runs the exact chain and every method, and
/// compares them.
pub fn run_cell(cell: CellSpec, source: &Dataset, settings: &CellSettings) -> Result<CellOutcome> {
    let seed = cell.seed(settings.seed);
    let plan = SimulationPlan {
        n: cell.n,
        p: cell.p,
        structure_type: cell.structure,
        k_str: 1,
        k_sample: 1,
        structure: settings.structure,
        gibbs_sweeps: settings.gibbs_sweeps,
        fit_prior: None,
        seed,
    };
    let sim = run_simulation_plan(&plan, source)?.remove(0);
    let spec = *sim.data.spec();
    let truth = CellTruth::new(&spec, sim.true_theta, sim.structure);
    let data = sim.data;

    let run = |stream: u64, method: Method| -> Result<Chain> {
        let cfg = SamplerConfig {
            seed: derive_seed(seed, &[1, stream]),
            ..settings.sampler
        };
        timed(method, &data, &settings.prior, &cfg, &settings.mc)
    };
    let exact = run(0, Method::Exact)?;
    let chains = settings
        .methods
        .iter()
        .enumerate()
        .map(|(k, &m)| run(k as u64 + 1, m))
        .collect::<Result<Vec<_>>>()?;
    let condition = Condition {
        n: cell.n,
        p: cell.p,
        m: spec.m(),
        structure: Some(cell.structure.to_string()),
        replicate: Some(cell.replicate),
    };
    let report = build_report(&chains, &exact, &spec, &settings.prior, condition)?;
    Ok(CellOutcome {
        cell,
        data,
        truth,
        exact,
        chains,
        report,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub cell: CellSpec,
    pub seed: u64,
    pub status: CellStatus,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub grid: BenchmarkSection,
    pub sampler: SamplerConfig,
    pub cells: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig) -> Self {
        let cells = grid_cells(&cfg.benchmark)
            .into_iter()
            .map(|cell| ManifestEntry {
                id: cell.id(),
                cell,
                seed: cell.seed(cfg.seed),
                status: CellStatus::Pending,
                error: None,
            })
            .collect();
        Self {
            seed: cfg.seed,
            grid: cfg.benchmark.clone(),
            sampler: cfg.sampler,
            cells,
        }
    }

    fn same_design(&self, other: &Manifest) -> bool {
        self.seed == other.seed && self.grid == other.grid && self.sampler == other.sampler
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BenchmarkSummary {
    pub ran: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn cell_dir(out: &Path, cell: &CellSpec) -> PathBuf {
    out.join(cell.condition_label())
        .join(format!("rep{:03}", cell.replicate))
}

fn write_cell(out: &Path, outcome: &CellOutcome) -> Result<()> {
    let dir = cell_dir(out, &outcome.cell);
    write_json(&dir.join(TRUTH_FILE), &outcome.truth)?;
    write_json(&dir.join(REPORT_FILE), &outcome.report)
}

/// Runs every pending cell of the grid on `threads` workers (0 = all cores).
pub fn run_benchmark(
    cfg: &RunConfig,
    source: &Dataset,
    out: &Path,
    threads: usize,
    resume: bool,
) -> Result<BenchmarkSummary> {
    let manifest_path = out.join(MANIFEST_FILE);
    let fresh = Manifest::new(cfg);
    let mut manifest = fresh.clone();
    if resume && manifest_path.exists() {
        let old: Manifest = read_json(&manifest_path)?;
        if !old.same_design(&fresh) {
            return Err(Error::Usage(format!(
                "{} was written for a different grid, seed or sampler; rerun without --resume",
                manifest_path.display()
            )));
        }
        manifest = old;
    }
    let mut summary = BenchmarkSummary::default();
    let mut todo = Vec::new();
    for (k, entry) in manifest.cells.iter_mut().enumerate() {
        let done = entry.status == CellStatus::Done && cell_dir(out, &entry.cell).join(REPORT_FILE).exists();
        if done {
            summary.skipped += 1;
        } else {
            entry.status = CellStatus::Pending;
            entry.error = None;
            todo.push(k);
        }
    }
    write_json(&manifest_path, &manifest)?;

    let settings = CellSettings::from_config(cfg);
    let shared = Mutex::new((manifest, summary));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<()>> = pool.install(|| {
        todo.par_iter()
            .map(|&k| {
                let cell = shared.lock().unwrap().0.cells[k].cell;
                let outcome = run_cell(cell, source, &settings).and_then(|o| write_cell(out, &o));
                let mut guard = shared.lock().unwrap();
                let (manifest, summary) = &mut *guard;
                match &outcome {
                    Ok(()) => {
                        manifest.cells[k].status = CellStatus::Done;
                        summary.ran += 1;
                    }
                    Err(e) => {
                        log::warn!("cell {} failed: {e}", manifest.cells[k].id);
                        manifest.cells[k].status = CellStatus::Failed;
                        manifest.cells[k].error = Some(e.to_string());
                        summary.failed += 1;
                    }
                }
                write_json(&manifest_path, manifest)
            })
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    let (manifest, summary) = shared.into_inner().unwrap();
    write_aggregate(out, &manifest)?;
    Ok(summary)
}

/// Type-7 (linear interpolation) sample quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub condition: String,
    pub method: String,
    pub metric: String,
    pub subset: String,
    pub count: usize,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

type Key = (String, String, String, String);

fn subset_of(spec: &ModelSpec, truth: &CellTruth, k: usize) -> &'static str {
    if !spec.role(k).is_interaction() {
        "thresholds"
    } else if truth.absent.contains(&k) {
        "absent_edges"
    } else {
        "present_edges"
    }
}

/// Collects per-parameter and per-chain values from one cell.
fn collect_cell(
    cond: &str,
    report: &MetricsReport,
    truth: &CellTruth,
    into: &mut BTreeMap<Key, Vec<f64>>,
) -> Result<()> {
    let spec = ModelSpec::new(report.condition.p, report.condition.m)?;
    let mut push = |method: &str, metric: &str, subset: &str, v: Option<f64>| {
        if let Some(v) = v.filter(|v| v.is_finite()) {
            let subsets: &[&str] = if subset == "chain" {
                &["chain"]
            } else {
                &[subset, "all"]
            };
            for &s in subsets {
                into.entry((cond.to_string(), method.to_string(), metric.to_string(), s.to_string()))
                    .or_default()
                    .push(v);
            }
        }
    };
    for r in std::iter::once(&report.exact).chain(&report.methods) {
        let method = r.method.as_str();
        push(method, "acceptance_rate", "chain", Some(r.acceptance_rate));
        push(method, "wall_time_seconds", "chain", r.wall_time_seconds);
        for (k, pm) in r.parameters.iter().enumerate() {
            let subset = subset_of(&spec, truth, k);
            let exact_bf = report.exact.parameters[k].log_bf;
            push(method, "eta", subset, pm.eta);
            push(method, "sd_ratio", subset, pm.sd_ratio);
            push(method, "log_bf", subset, pm.log_bf);
            push(method, "ess", subset, pm.ess);
            if r.method != Method::Exact {
                push(
                    method,
                    "log_bf_error",
                    subset,
                    pm.log_bf.zip(exact_bf).map(|(a, b)| (a - b).abs()),
                );
            }
        }
    }
    Ok(())
}

pub fn aggregate_rows(out: &Path, manifest: &Manifest) -> Result<Vec<AggregateRow>> {
    let mut values: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut cells: Vec<&ManifestEntry> = manifest.cells.iter().filter(|e| e.status == CellStatus::Done).collect();
    cells.sort_by(|a, b| a.id.cmp(&b.id));
    for entry in cells {
        let dir = cell_dir(out, &entry.cell);
        let report: MetricsReport = read_json(&dir.join(REPORT_FILE))?;
        let truth: CellTruth = read_json(&dir.join(TRUTH_FILE))?;
        collect_cell(&entry.cell.condition_label(), &report, &truth, &mut values)?;
    }
    Ok(values
        .into_iter()
        .map(|((condition, method, metric, subset), mut v)| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            AggregateRow {
                condition,
                method,
                metric,
                subset,
                count: v.len(),
                median: quantile(&v, 0.5),
                q05: quantile(&v, 0.05),
                q95: quantile(&v, 0.95),
            }
        })
        .collect())
}

pub fn write_aggregate(out: &Path, manifest: &Manifest) -> Result<()> {
    let rows = aggregate_rows(out, manifest)?;
    let path = out.join(AGGREGATE_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(|e| Error::format(&path, e))?;
    }
    if rows.is_empty() {
        w.write_record([
            "condition",
            "method",
            "metric",
            "subset",
            "count",
            "median",
            "q05",
            "q95",
        ])
        .map_err(|e| Error::format(&path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(&path, e))?;
    atomic_write(&path, &bytes)
}
