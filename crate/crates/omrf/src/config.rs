//! JSON run configuration.
//!
//! Every section has defaults; [`RunConfig::normalized`] applies the
//! cross-section rules so the echoed document reproduces the run exactly.

use std::path::{Path, PathBuf};

use omrf_core::estimate::RobbinsMonroSchedule;
use omrf_core::model::{ModelSpec, PriorSpec};
use omrf_core::samplers::{McBudget, Method, SamplerConfig};
use omrf_core::simulate::{derive_seed, SimulationPlan, StructureParams, StructureType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable overriding the enumeration cap.
pub const ENUM_CAP_ENV: &str = "MRF_ENUM_CAP";

const MC_STREAM: u64 = 0x6d63;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Number of variables; inferred from the data when absent.
    #[serde(default)]
    pub p: Option<usize>,
    /// Highest category; inferred from the data when absent.
    #[serde(default)]
    pub m: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    /// Dataset CSV. The bundled source is used by `simulate` when absent.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Edge-list CSV constraining `fit`.
    #[serde(default)]
    pub structure: Option<PathBuf>,
    /// Reference chain for `metrics`.
    #[serde(default)]
    pub exact_chain: Option<PathBuf>,
    /// Chains compared by `metrics`, or the pseudo chain for `calibrate`.
    #[serde(default)]
    pub chains: Vec<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Monte Carlo budgets: `inner` per DMH/AdaDMH iteration, `outer` for the
/// one-off Robbins-Monro and Hessian estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSamples {
    #[serde(default = "default_inner")]
    pub inner: usize,
    #[serde(default = "default_outer")]
    pub outer: usize,
}

fn default_inner() -> usize {
    25_000
}
fn default_outer() -> usize {
    100_000
}

impl Default for McSamples {
    fn default() -> Self {
        Self {
            inner: default_inner(),
            outer: default_outer(),
        }
    }
}

/// Simulation plan without its seed, which comes from the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n: usize,
    pub p: usize,
    pub structure_type: StructureType,
    #[serde(default = "default_k")]
    pub k_str: usize,
    #[serde(default = "default_k")]
    pub k_sample: usize,
    #[serde(default)]
    pub structure: StructureParams,
    #[serde(default = "default_sweeps")]
    pub gibbs_sweeps: usize,
    #[serde(default)]
    pub fit_prior: Option<PriorSpec>,
    /// Recode source categories `>= t` as 1 and the rest as 0 before planning.
    #[serde(default)]
    pub dichotomize_at: Option<u8>,
}

fn default_k() -> usize {
    10
}
fn default_sweeps() -> usize {
    100
}

impl SimulationSection {
    pub fn plan(&self, seed: u64) -> SimulationPlan {
        SimulationPlan {
            n: self.n,
            p: self.p,
            structure_type: self.structure_type,
            k_str: self.k_str,
            k_sample: self.k_sample,
            structure: self.structure,
            gibbs_sweeps: self.gibbs_sweeps,
            fit_prior: self.fit_prior,
            seed,
        }
    }
}

/// Condition grid for `benchmark`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    #[serde(default = "default_structures")]
    pub structures: Vec<StructureType>,
    #[serde(default = "default_ps")]
    pub p: Vec<usize>,
    #[serde(default = "default_ns")]
    pub n: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Methods compared against the exact chain.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub structure: StructureParams,
    #[serde(default = "default_sweeps")]
    pub gibbs_sweeps: usize,
    #[serde(default = "default_dichotomize")]
    pub dichotomize_at: Option<u8>,
}

fn default_structures() -> Vec<StructureType> {
    vec![StructureType::Smallworld, StructureType::Random, StructureType::Full]
}
fn default_ps() -> Vec<usize> {
    vec![4, 6]
}
fn default_ns() -> Vec<usize> {
    vec![500, 1000]
}
fn default_replicates() -> usize {
    20
}
fn default_methods() -> Vec<Method> {
    vec![Method::Pseudo, Method::Core, Method::Adacore, Method::PhGhw]
}
fn default_dichotomize() -> Option<u8> {
    Some(2)
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            structures: default_structures(),
            p: default_ps(),
            n: default_ns(),
            replicates: default_replicates(),
            methods: default_methods(),
            structure: StructureParams::default(),
            gibbs_sweeps: default_sweeps(),
            dichotomize_at: default_dichotomize(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub prior: PriorSpec,
    /// `sampler.seed` and `sampler.inner_gibbs_iters` are overwritten from
    /// `seed` and `mc_samples.inner`.
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub io: IoSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mc_samples: McSamples,
    #[serde(default)]
    pub robbins_monro: RobbinsMonroSchedule,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    /// Exclusive cap on enumerated states; `MRF_ENUM_CAP` overrides it.
    #[serde(default)]
    pub enum_cap: Option<u64>,
}

fn default_method() -> Method {
    Method::Pseudo
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config parses")
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(origin, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
        Self::from_json(&text, path)
    }

    /// Applies overrides and cross-section rules, then validates.
    pub fn normalized(mut self, seed: Option<u64>, env_cap: Option<&str>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(raw) = env_cap {
            let cap = raw
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Usage(format!("{ENUM_CAP_ENV} must be a positive integer, got '{raw}'")))?;
            self.enum_cap = Some(cap);
        }
        self.sampler.seed = self.seed;
        self.sampler.inner_gibbs_iters = self.mc_samples.inner;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.sampler.validate()?;
        if self.mc_samples.inner == 0 || self.mc_samples.outer == 0 {
            return Err(Error::Usage("mc_samples must be positive".into()));
        }
        if self.enum_cap == Some(0) {
            return Err(Error::Usage("enum_cap must be positive".into()));
        }
        let b = &self.benchmark;
        if b.structures.is_empty() || b.p.is_empty() || b.n.is_empty() || b.replicates == 0 {
            return Err(Error::Usage("benchmark grid must not be empty".into()));
        }
        Ok(())
    }

    /// Applies the configured enumeration cap to `spec`.
    pub fn apply_cap(&self, spec: ModelSpec) -> ModelSpec {
        match self.enum_cap {
            Some(cap) => spec.with_enum_cap(cap),
            None => spec,
        }
    }

    pub fn mc_budget(&self) -> McBudget {
        McBudget {
            samples: self.mc_samples.outer,
            seed: derive_seed(self.seed, &[MC_STREAM]),
            schedule: self.robbins_monro,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
