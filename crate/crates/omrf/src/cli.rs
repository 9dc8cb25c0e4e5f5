//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use omrf_core::estimate::{mple, EstimateResult, GraphStructure};
use omrf_core::metrics::{build_report, Condition, MetricsReport};
use omrf_core::model::Dataset;
use omrf_core::rescale::{curvature_bundle, ghw_standard_errors};
use omrf_core::samplers::{calibrate_pseudo_chain, sample_method, Chain, Method};
use omrf_core::simulate::{Provenance, SimulatedDataset};
use rayon::prelude::*;
use serde::Serialize;

use crate::bench::{run_benchmark, BenchmarkSummary};
use crate::config::{RunConfig, SimulationSection, ENUM_CAP_ENV};
use crate::error::{Error, Result};
use crate::io::{self, read_chain, read_dataset, write_chain, write_json, ChainSidecar};
use crate::source::{bundled_source, dichotomize, source_names};

#[derive(Debug, Parser)]
#[command(
    name = "omrf",
    version,
    about = "Bayesian inference for ordinal Markov random fields"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Skip benchmark cells already completed in the manifest.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate datasets from the configured plan.
    Simulate {
        /// Source dataset; the bundled source when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Maximum pseudo-likelihood fit, optionally constrained to a structure.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Edge-list CSV; absent interactions are fixed at zero.
        #[arg(long)]
        structure: Option<PathBuf>,
    },
    /// Sample a posterior with the configured method.
    Sample {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Post-hoc calibration of a pseudo-posterior chain.
    Calibrate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pseudo chain CSV (with its JSON sidecar).
        #[arg(long)]
        chain: Option<PathBuf>,
        /// ph-ghw, ph-mch or ph-rm.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Compare chains against an exact chain.
    Metrics {
        #[arg(long)]
        exact: Option<PathBuf>,
        #[arg(long = "chain")]
        chains: Vec<PathBuf>,
    },
    /// Run the condition grid.
    Benchmark {
        /// Source dataset; the bundled source when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Loads, overrides and validates the configuration.
pub fn load_config(global: &GlobalArgs, env_cap: Option<&str>) -> Result<RunConfig> {
    let cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = cfg.normalized(global.seed, env_cap)?;
    if let Some(out) = &global.out {
        cfg.io.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.io.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn pick(cli: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    cli.or_else(|| configured.clone())
        .ok_or_else(|| Error::Usage(format!("no {what} given (flag or config io section)")))
}

fn load_data(cfg: &mut RunConfig, flag: Option<PathBuf>) -> Result<Dataset> {
    let path = pick(flag, &cfg.io.data, "dataset")?;
    cfg.io.data = Some(path.clone());
    Ok(read_dataset(&path, cfg)?.0)
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

fn load_source(cfg: &mut RunConfig, flag: Option<PathBuf>, dichotomize_at: Option<u8>) -> Result<Dataset> {
    if flag.is_some() {
        cfg.io.data = flag;
    }
    let source = match &cfg.io.data {
        Some(path) => read_dataset(path, cfg)?.0,
        None => bundled_source(cfg.enum_cap)?,
    };
    match dichotomize_at {
        Some(t) => dichotomize(&source, t),
        None => Ok(source),
    }
}

#[derive(Debug, Serialize)]
struct SimulationRecord<'a> {
    provenance: &'a Provenance,
    true_theta: &'a [f64],
    parameters: Vec<String>,
    /// 1-based node pairs.
    edges: Vec<(usize, usize)>,
    source_columns: Vec<String>,
    plan: &'a SimulationSection,
    config: &'a RunConfig,
}

pub fn cmd_simulate(mut cfg: RunConfig, data: Option<PathBuf>, threads: Option<usize>) -> Result<Vec<PathBuf>> {
    let section = cfg
        .simulation
        .clone()
        .ok_or_else(|| Error::Usage("config has no simulation section".into()))?;
    let source = load_source(&mut cfg, data, section.dichotomize_at)?;
    let names = match &cfg.io.data {
        Some(path) => read_dataset(path, &cfg)?.1,
        None => source_names(),
    };
    let plan = section.plan(cfg.seed);
    plan.validate(&source)?;
    let pool = thread_pool(threads)?;
    let sims: Vec<Vec<SimulatedDataset>> = pool.install(|| {
        (0..plan.k_str)
            .into_par_iter()
            .map(|i| {
                let cell = plan.structure_cell(&source, i)?;
                (0..plan.k_sample)
                    .into_par_iter()
                    .map(|j| plan.sample_cell(&cell, j))
                    .collect::<omrf_core::Result<Vec<_>>>()
            })
            .collect::<omrf_core::Result<Vec<_>>>()
    })?;
    let out = out_dir(&cfg);
    let mut written = Vec::new();
    for sim in sims.iter().flatten() {
        let prov = &sim.provenance;
        let stem = format!("sim_s{:03}_k{:03}", prov.structure_index, prov.sample_index);
        let columns: Vec<String> = prov.columns.iter().map(|&c| names[c].clone()).collect();
        let csv_path = out.join(format!("{stem}.csv"));
        io::atomic_write(&csv_path, io::dataset_csv(&sim.data, &columns).as_bytes())?;
        let record = SimulationRecord {
            provenance: prov,
            true_theta: &sim.true_theta,
            parameters: sim.data.spec().param_names(),
            edges: sim.structure.edges().iter().map(|&(a, b)| (a + 1, b + 1)).collect(),
            source_columns: columns,
            plan: &section,
            config: &cfg,
        };
        let json_path = out.join(format!("{stem}.json"));
        write_json(&json_path, &record)?;
        written.push(csv_path);
        written.push(json_path);
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct FitRecord<'a> {
    n: usize,
    parameters: Vec<String>,
    estimate: &'a EstimateResult,
    /// Sandwich standard errors; zero for coordinates fixed by the structure.
    standard_errors: Option<Vec<f64>>,
    /// 1-based node pairs of the constraining structure.
    structure: Option<Vec<(usize, usize)>>,
    config: &'a RunConfig,
}

pub fn cmd_fit(mut cfg: RunConfig, data: Option<PathBuf>, structure: Option<PathBuf>) -> Result<PathBuf> {
    let data = load_data(&mut cfg, data)?;
    if structure.is_some() {
        cfg.io.structure = structure;
    }
    let graph = match &cfg.io.structure {
        Some(path) => Some(io::read_structure(path, data.p())?),
        None => None,
    };
    let fit = mple(&data, graph.as_ref(), None)?;
    let spec = data.spec();
    let free: Vec<usize> = (0..spec.n_thresholds())
        .chain(
            graph
                .clone()
                .unwrap_or_else(|| GraphStructure::full(data.p()))
                .free_interactions(spec),
        )
        .collect();
    let standard_errors = curvature_bundle(&data, &fit.theta_star, None)
        .and_then(|b| ghw_standard_errors(&b, &free))
        .map_err(|e| log::warn!("standard errors unavailable: {e}"))
        .ok();
    let record = FitRecord {
        n: data.n(),
        parameters: spec.param_names(),
        estimate: &fit,
        standard_errors,
        structure: graph.map(|g| g.edges().iter().map(|&(a, b)| (a + 1, b + 1)).collect()),
        config: &cfg,
    };
    let path = out_dir(&cfg).join("fit.json");
    write_json(&path, &record)?;
    if !fit.converged {
        return Err(Error::Core(omrf_core::Error::Numerical(format!(
            "fit did not converge ({}); partial result written to {}",
            fit.notes.join("; "),
            path.display()
        ))));
    }
    Ok(path)
}

pub fn cmd_sample(mut cfg: RunConfig, data: Option<PathBuf>, method: Option<Method>) -> Result<(PathBuf, Chain)> {
    if let Some(m) = method {
        cfg.method = m;
    }
    let data = load_data(&mut cfg, data)?;
    let mc = cfg.mc_budget();
    let start = Instant::now();
    let mut chain = sample_method(cfg.method, &data, &cfg.prior, &cfg.sampler, Some(&mc))?;
    chain.wall_time_seconds = Some(start.elapsed().as_secs_f64());
    for w in &chain.warnings {
        log::warn!("{w}");
    }
    log::info!(
        "{}: acceptance rate {:.3} over {} retained draws",
        cfg.method,
        chain.acceptance_rate(),
        chain.len()
    );
    let path = write_chain(
        &out_dir(&cfg),
        &format!("chain_{}", cfg.method),
        &chain,
        &data,
        Some(&cfg),
    )?;
    Ok((path, chain))
}

pub fn cmd_calibrate(
    mut cfg: RunConfig,
    data: Option<PathBuf>,
    chain_path: Option<PathBuf>,
    method: Option<Method>,
) -> Result<(PathBuf, Chain)> {
    let method = method.unwrap_or(match cfg.method {
        m @ (Method::PhGhw | Method::PhMch | Method::PhRm) => m,
        _ => Method::PhGhw,
    });
    cfg.method = method;
    let data = load_data(&mut cfg, data)?;
    let chain_path = pick(chain_path, &cfg.io.chains.first().cloned(), "pseudo chain")?;
    cfg.io.chains = vec![chain_path.clone()];
    let (pseudo, side) = read_chain(&chain_path)?;
    if side.method != Method::Pseudo {
        return Err(Error::Usage(format!(
            "{} holds a {} chain; calibration needs a pseudo chain",
            chain_path.display(),
            side.method
        )));
    }
    let start = Instant::now();
    let mut chain = calibrate_pseudo_chain(method, pseudo, &data, &cfg.prior, Some(&cfg.mc_budget()))?;
    let sampling = side.wall_time_seconds.unwrap_or(0.0);
    chain.wall_time_seconds = Some(sampling + start.elapsed().as_secs_f64());
    let path = write_chain(&out_dir(&cfg), &format!("chain_{method}"), &chain, &data, Some(&cfg))?;
    Ok((path, chain))
}

fn load_chain_checked(path: &Path, reference: Option<&ChainSidecar>) -> Result<(Chain, ChainSidecar)> {
    let (chain, side) = read_chain(path)?;
    if let Some(r) = reference {
        if (r.p, r.m) != (side.p, side.m) {
            return Err(Error::Usage(format!(
                "{} has layout p = {}, m = {} but the exact chain has p = {}, m = {}",
                path.display(),
                side.p,
                side.m,
                r.p,
                r.m
            )));
        }
    }
    Ok((chain, side))
}

pub fn cmd_metrics(mut cfg: RunConfig, exact: Option<PathBuf>, chains: Vec<PathBuf>) -> Result<MetricsReport> {
    let exact_path = pick(exact, &cfg.io.exact_chain, "exact chain")?;
    if !exact_path.exists() {
        return Err(Error::Usage(format!(
            "exact chain {} does not exist",
            exact_path.display()
        )));
    }
    cfg.io.exact_chain = Some(exact_path.clone());
    if !chains.is_empty() {
        cfg.io.chains = chains;
    }
    let (exact, side) = load_chain_checked(&exact_path, None)?;
    let method_chains = cfg
        .io
        .chains
        .iter()
        .map(|p| load_chain_checked(p, Some(&side)).map(|(c, _)| c))
        .collect::<Result<Vec<_>>>()?;
    let spec = omrf_core::model::ModelSpec::new(side.p, side.m)?;
    let condition = Condition {
        n: side.n,
        p: side.p,
        m: side.m,
        structure: None,
        replicate: None,
    };
    let report = build_report(&method_chains, &exact, &spec, &cfg.prior, condition)?;
    let out = out_dir(&cfg);
    write_json(&out.join("report.json"), &report)?;
    write_long_csv(&out.join("report.csv"), &report)?;
    write_json(&out.join("config.json"), &cfg)?;
    Ok(report)
}

pub fn write_long_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in report.long_rows() {
        w.serialize(&row).map_err(|e| Error::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e))?;
    io::atomic_write(path, &bytes)
}

pub fn cmd_benchmark(
    mut cfg: RunConfig,
    data: Option<PathBuf>,
    threads: Option<usize>,
    resume: bool,
) -> Result<BenchmarkSummary> {
    let threshold = cfg.benchmark.dichotomize_at;
    let source = load_source(&mut cfg, data, threshold)?;
    let out = out_dir(&cfg);
    write_json(&out.join("config.json"), &cfg)?;
    run_benchmark(&cfg, &source, &out, threads.unwrap_or(0), resume)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let env_cap = std::env::var(ENUM_CAP_ENV).ok();
    let cfg = load_config(&cli.global, env_cap.as_deref())?;
    let threads = cli.global.threads;
    match cli.command {
        Command::Simulate { data } => {
            let files = cmd_simulate(cfg, data, threads)?;
            println!("wrote {} files", files.len());
        }
        Command::Fit { data, structure } => {
            let path = cmd_fit(cfg, data, structure)?;
            println!("wrote {}", path.display());
        }
        Command::Sample { data, method } => {
            let (path, chain) = cmd_sample(cfg, data, method)?;
            println!(
                "{}: acceptance rate {:.3}, {} draws, wrote {}",
                chain.method,
                chain.acceptance_rate(),
                chain.len(),
                path.display()
            );
        }
        Command::Calibrate { data, chain, method } => {
            let (path, chain) = cmd_calibrate(cfg, data, chain, method)?;
            println!("{}: wrote {}", chain.method, path.display());
        }
        Command::Metrics { exact, chains } => {
            let report = cmd_metrics(cfg, exact, chains)?;
            println!("compared {} chains against the exact chain", report.methods.len());
        }
        Command::Benchmark { data } => {
            let s = cmd_benchmark(cfg, data, threads, cli.global.resume)?;
            println!("cells run: {}, skipped: {}, failed: {}", s.ran, s.skipped, s.failed);
        }
    }
    Ok(())
}
