//! Graph structures, Gibbs synthesis of datasets, and the study-design pipeline
//! that turns a source dataset into simulated datasets with known parameters.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{mple, GraphStructure};
use crate::linalg::Matrix;
use crate::model::{
    accumulate_state_stats, conditional_from_rest, interaction_matrix, Dataset, ModelSpec, ParamVector, PriorSpec,
};

/// Sweeps discarded before recording when chains start from a uniform random state.
pub const UNIFORM_INIT_BURN_IN: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureType {
    Smallworld,
    Random,
    Full,
}

impl core::str::FromStr for StructureType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smallworld" => Ok(Self::Smallworld),
            "random" => Ok(Self::Random),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown structure type '{other}'"))),
        }
    }
}

impl core::fmt::Display for StructureType {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Smallworld => "smallworld",
            Self::Random => "random",
            Self::Full => "full",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureParams {
    /// Edge inclusion probability for random graphs.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Per-edge rewiring probability for small-world graphs.
    #[serde(default = "default_rewire")]
    pub rewire_prob: f64,
    /// Ring-lattice degree for small-world graphs; even.
    #[serde(default = "default_ring_degree")]
    pub ring_degree: usize,
}

fn default_density() -> f64 {
    0.3
}
fn default_rewire() -> f64 {
    0.1
}
fn default_ring_degree() -> usize {
    2
}

impl Default for StructureParams {
    fn default() -> Self {
        Self {
            density: default_density(),
            rewire_prob: default_rewire(),
            ring_degree: default_ring_degree(),
        }
    }
}

/// Generates a graph of the requested type on `p` nodes.
pub fn gen_structure<R: Rng + ?Sized>(
    kind: StructureType,
    p: usize,
    params: &StructureParams,
    rng: &mut R,
) -> Result<GraphStructure> {
    if p < 2 {
        return Err(Error::Config(format!("structures need p >= 2, got {p}")));
    }
    match kind {
        StructureType::Full => Ok(GraphStructure::full(p)),
        StructureType::Random => {
            let density = params.density;
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::Config(format!("density must be in (0, 1], got {density}")));
            }
            let mut edges = Vec::new();
            for i in 0..p {
                for j in (i + 1)..p {
                    if rng.random::<f64>() < density {
                        edges.push((i, j));
                    }
                }
            }
            GraphStructure::new(p, edges)
        }
        StructureType::Smallworld => watts_strogatz(p, params.ring_degree, params.rewire_prob, rng),
    }
}

fn watts_strogatz<R: Rng + ?Sized>(p: usize, k: usize, beta: f64, rng: &mut R) -> Result<GraphStructure> {
    if k == 0 || !k.is_multiple_of(2) || k >= p {
        return Err(Error::Config(format!(
            "ring degree must be even, positive and < p, got {k}"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!(
            "rewire probability must be in [0, 1], got {beta}"
        )));
    }
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..p {
        for s in 1..=k / 2 {
            edges.insert(key(i, (i + s) % p));
        }
    }
    for s in 1..=k / 2 {
        for i in 0..p {
            let old = key(i, (i + s) % p);
            if !edges.contains(&old) || rng.random::<f64>() >= beta {
                continue;
            }
            let candidates: Vec<usize> = (0..p).filter(|&t| t != i && !edges.contains(&key(i, t))).collect();
            if candidates.is_empty() {
                continue;
            }
            let target = candidates[rng.random_range(0..candidates.len())];
            edges.remove(&old);
            edges.insert(key(i, target));
        }
    }
    GraphStructure::new(p, edges.into_iter().collect())
}

/// Single-site Gibbs sampler for the full conditionals of an ordinal MRF.
#[derive(Clone, Debug)]
pub struct GibbsSampler {
    spec: ModelSpec,
    thresholds: Vec<f64>,
    interactions: Vec<f64>,
}

impl GibbsSampler {
    pub fn new(theta: &[f64], spec: &ModelSpec) -> Result<Self> {
        spec.check_params(theta)?;
        Ok(Self {
            spec: *spec,
            thresholds: theta[..spec.n_thresholds()].to_vec(),
            interactions: interaction_matrix(spec, theta),
        })
    }

    /// One full pass resampling every variable of `x` in order.
    #[inline]
    pub fn sweep<R: Rng + ?Sized>(&self, x: &mut [u8], probs: &mut [f64], rng: &mut R) {
        let (p, m) = (self.spec.p(), self.spec.m());
        for i in 0..p {
            let w = &self.interactions[i * p..(i + 1) * p];
            let rest: f64 = w.iter().zip(x.iter()).map(|(a, &b)| a * b as f64).sum();
            conditional_from_rest(&self.thresholds[i * m..(i + 1) * m], rest, probs);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = m;
            for (h, &pr) in probs.iter().enumerate() {
                acc += pr;
                if u < acc {
                    pick = h;
                    break;
                }
            }
            x[i] = pick as u8;
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
}

/// Starting states for Gibbs chains.
#[derive(Clone, Copy, Debug)]
pub enum GibbsInit<'a> {
    /// Row `r` starts at row `r mod n` of the dataset.
    Data(&'a Dataset),
    /// Independent uniform categories, followed by [`UNIFORM_INIT_BURN_IN`] sweeps.
    Uniform,
}

fn initial_state<R: Rng + ?Sized>(spec: &ModelSpec, init: GibbsInit<'_>, r: usize, rng: &mut R) -> Vec<u8> {
    match init {
        GibbsInit::Data(d) => d.row(r % d.n()).to_vec(),
        GibbsInit::Uniform => (0..spec.p()).map(|_| rng.random_range(0..=spec.m() as u8)).collect(),
    }
}

fn check_init(spec: &ModelSpec, init: GibbsInit<'_>) -> Result<()> {
    if let GibbsInit::Data(d) = init {
        if d.p() != spec.p() || d.spec().m() > spec.m() {
            return Err(Error::Validation("initial dataset does not match the model".into()));
        }
    }
    Ok(())
}

/// Draws `n` rows, each from an independent Gibbs chain run for `sweeps` passes.
pub fn gibbs_synthesize<R: Rng + ?Sized>(
    theta: &[f64],
    spec: &ModelSpec,
    n: usize,
    sweeps: usize,
    init: GibbsInit<'_>,
    rng: &mut R,
) -> Result<Dataset> {
    if sweeps == 0 || n == 0 {
        return Err(Error::Config("gibbs_synthesize needs n >= 1 and sweeps >= 1".into()));
    }
    check_init(spec, init)?;
    let gibbs = GibbsSampler::new(theta, spec)?;
    let burn = if matches!(init, GibbsInit::Uniform) {
        UNIFORM_INIT_BURN_IN
    } else {
        0
    };
    let mut probs = vec![0.0; spec.m() + 1];
    let mut values = Vec::with_capacity(n * spec.p());
    for r in 0..n {
        let mut x = initial_state(spec, init, r, rng);
        for _ in 0..burn + sweeps {
            gibbs.sweep(&mut x, &mut probs, rng);
        }
        values.extend_from_slice(&x);
    }
    Dataset::new(*spec, values)
}

/// Monte Carlo moments of single-state sufficient statistics.
#[derive(Clone, Debug)]
pub struct McMoments {
    pub mean: Vec<f64>,
    pub cov: Option<Matrix>,
    pub draws: usize,
}

/// Estimates `E[s(x)]` (and optionally `Cov[s(x)]`) from `draws` Gibbs states.
///
/// Draws come from `min(draws, max_chains)` parallel chains. With data
/// initialization, chain `c` starts at data row `c mod n`; with uniform
/// initialization, every chain is burned in first. Each chain records its
/// state after every sweep.
pub fn gibbs_stat_moments<R: Rng + ?Sized>(
    gibbs: &GibbsSampler,
    draws: usize,
    max_chains: usize,
    init: GibbsInit<'_>,
    with_cov: bool,
    rng: &mut R,
) -> Result<McMoments> {
    let spec = *gibbs.spec();
    if draws == 0 {
        return Err(Error::Config("Monte Carlo sample size must be positive".into()));
    }
    check_init(&spec, init)?;
    let d = spec.dim();
    let chains = draws.min(max_chains.max(1));
    let burn = if matches!(init, GibbsInit::Uniform) {
        UNIFORM_INIT_BURN_IN
    } else {
        0
    };
    let mut probs = vec![0.0; spec.m() + 1];
    let mut states: Vec<Vec<u8>> = (0..chains).map(|c| initial_state(&spec, init, c, rng)).collect();
    for x in states.iter_mut() {
        for _ in 0..burn {
            gibbs.sweep(x, &mut probs, rng);
        }
    }

    // Sums of statistics over recorded states; second moments accumulated as
    // raw sums then centred once at the end.
    let mut sum = vec![0.0; d];
    let mut second = if with_cov { Some(Matrix::zeros(d, d)) } else { None };
    let mut s = vec![0.0; d];
    let mut nz: Vec<usize> = Vec::with_capacity(d);
    let mut recorded = 0;
    'outer: loop {
        for x in states.iter_mut() {
            if recorded == draws {
                break 'outer;
            }
            gibbs.sweep(x, &mut probs, rng);
            s.iter_mut().for_each(|v| *v = 0.0);
            accumulate_state_stats(&spec, x, 1.0, &mut s);
            nz.clear();
            nz.extend((0..d).filter(|&k| s[k] != 0.0));
            for &a in &nz {
                sum[a] += s[a];
            }
            if let Some(sec) = second.as_mut() {
                for &a in &nz {
                    for &b in &nz {
                        sec[(a, b)] += s[a] * s[b];
                    }
                }
            }
            recorded += 1;
        }
    }
    let total = recorded as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / total).collect();
    let cov = second.map(|mut sec| {
        let denom = (total - 1.0).max(1.0);
        for a in 0..d {
            for b in 0..d {
                sec[(a, b)] = (sec[(a, b)] - total * mean[a] * mean[b]) / denom;
            }
        }
        sec
    });
    Ok(McMoments {
        mean,
        cov,
        draws: recorded,
    })
}

/// Derives an independent 64-bit seed from a base seed and a stream of indices.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut z = base ^ 0x9E37_79B9_7F4A_7C15;
    for &s in stream {
        z = splitmix(z ^ splitmix(s.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    splitmix(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationPlan {
    /// Sample size of every simulated dataset.
    pub n: usize,
    /// Number of variables drawn from the source.
    pub p: usize,
    pub structure_type: StructureType,
    #[serde(default = "default_k")]
    pub k_str: usize,
    #[serde(default = "default_k")]
    pub k_sample: usize,
    #[serde(default)]
    pub structure: StructureParams,
    #[serde(default = "default_gibbs_sweeps")]
    pub gibbs_sweeps: usize,
    /// Optional prior used when fitting the generating parameters.
    #[serde(default)]
    pub fit_prior: Option<PriorSpec>,
    pub seed: u64,
}

fn default_k() -> usize {
    10
}
fn default_gibbs_sweeps() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub structure_index: usize,
    pub sample_index: usize,
    pub structure_seed: u64,
    pub sample_seed: u64,
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
    pub fit_converged: bool,
    pub structure_attempts: usize,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SimulatedDataset {
    pub data: Dataset,
    pub true_theta: ParamVector,
    pub structure: GraphStructure,
    pub provenance: Provenance,
}

/// A fitted generating model for one structure cell of a plan.
#[derive(Clone, Debug)]
pub struct StructureCell {
    pub index: usize,
    pub structure: GraphStructure,
    pub submatrix: Dataset,
    pub theta: ParamVector,
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
    pub seed: u64,
    pub converged: bool,
    pub attempts: usize,
    pub notes: Vec<String>,
}

impl SimulationPlan {
    pub fn validate(&self, source: &Dataset) -> Result<()> {
        if self.n == 0 || self.k_str == 0 || self.k_sample == 0 || self.gibbs_sweeps == 0 {
            return Err(Error::Config("plan sizes must all be positive".into()));
        }
        if self.p < 2 || self.p > source.p() {
            return Err(Error::Config(format!(
                "network size {} must be in 2..={} (source columns)",
                self.p,
                source.p()
            )));
        }
        Ok(())
    }

    /// Fits the generating parameters for structure `i`.
    pub fn structure_cell(&self, source: &Dataset, i: usize) -> Result<StructureCell> {
        self.validate(source)?;
        let seed = derive_seed(self.seed, &[0, i as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut notes = Vec::new();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let structure = gen_structure(self.structure_type, self.p, &self.structure, &mut rng)?;
            let rows: Vec<usize> = (0..self.n).map(|_| rng.random_range(0..source.n())).collect();
            let mut columns: Vec<usize> = (0..source.p()).collect();
            columns.shuffle(&mut rng);
            columns.truncate(self.p);
            let sub = source.select(&rows, &columns)?;
            let fit = mple(&sub, Some(&structure), self.fit_prior.as_ref())?;
            if fit.converged || attempt == 2 {
                if !fit.converged {
                    notes.push(format!(
                        "structure {i}: MPLE did not converge after resampling (gradient norm {:.3e})",
                        fit.final_gradient_norm
                    ));
                }
                return Ok(StructureCell {
                    index: i,
                    structure,
                    submatrix: sub,
                    theta: fit.theta_star,
                    rows,
                    columns,
                    seed,
                    converged: fit.converged,
                    attempts: attempt,
                    notes,
                });
            }
            notes.push(format!("structure {i}: MPLE did not converge, structure resampled"));
        }
    }

    /// Synthesizes dataset `j` of a fitted structure cell.
    pub fn sample_cell(&self, cell: &StructureCell, j: usize) -> Result<SimulatedDataset> {
        let seed = derive_seed(self.seed, &[1, cell.index as u64, j as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = *cell.submatrix.spec();
        let data = gibbs_synthesize(
            &cell.theta,
            &spec,
            self.n,
            self.gibbs_sweeps,
            GibbsInit::Data(&cell.submatrix),
            &mut rng,
        )?;
        Ok(SimulatedDataset {
            data,
            true_theta: cell.theta.clone(),
            structure: cell.structure.clone(),
            provenance: Provenance {
                structure_index: cell.index,
                sample_index: j,
                structure_seed: cell.seed,
                sample_seed: seed,
                rows: cell.rows.clone(),
                columns: cell.columns.clone(),
                fit_converged: cell.converged,
                structure_attempts: cell.attempts,
                notes: cell.notes.clone(),
            },
        })
    }
}

/// Runs the whole plan sequentially; results are ordered by (structure, sample).
pub fn run_simulation_plan(plan: &SimulationPlan, source: &Dataset) -> Result<Vec<SimulatedDataset>> {
    plan.validate(source)?;
    let mut out = Vec::with_capacity(plan.k_str * plan.k_sample);
    for i in 0..plan.k_str {
        let cell = plan.structure_cell(source, i)?;
        for j in 0..plan.k_sample {
            out.push(plan.sample_cell(&cell, j)?);
        }
    }
    Ok(out)
}
