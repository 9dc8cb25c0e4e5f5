//! Point estimators: (constrained) maximum pseudo-likelihood, pseudo MAP,
//! Robbins-Monro full-likelihood optimization and the Monte Carlo Hessian.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, cholesky_solve, symmetrize, Matrix};
use crate::model::{sufficient_statistics, Dataset, ModelSpec, ParamVector, PriorSpec, PseudoLikelihood, StatKind};
use crate::simulate::{derive_seed, gibbs_stat_moments, GibbsInit, GibbsSampler};

/// Undirected graph on `p` nodes; edges stored sorted as `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStructure {
    p: usize,
    edges: Vec<(usize, usize)>,
}

impl GraphStructure {
    /// Builds a structure, normalizing pair order and dropping duplicates.
    pub fn new(p: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut out = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::Validation(format!("self-loop on node {a}")));
            }
            if a >= p || b >= p {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) has a node index >= p = {p}"
                )));
            }
            out.push(if a < b { (a, b) } else { (b, a) });
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self { p, edges: out })
    }

    pub fn full(p: usize) -> Self {
        let edges = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
        Self { p, edges }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).is_ok()
    }

    /// Parameter indices of interactions that are present.
    pub fn free_interactions(&self, spec: &ModelSpec) -> Vec<usize> {
        self.edges.iter().map(|&(i, j)| spec.interaction_index(i, j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_star: ParamVector,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// Gradient-norm tolerance; `None` for stochastic estimators with a fixed budget.
    pub tolerance: Option<f64>,
    /// Newton decrement `g'(-H)^{-1}g` per iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decrements: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const NEWTON_TOLERANCE: f64 = 1e-8;
pub const NEWTON_MAX_ITER: usize = 200;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const ROUNDING_SLOPE: f64 = 1e-13;
/// Parameters beyond this magnitude indicate separation.
pub const DIVERGENCE_BOUND: f64 = 1e3;
/// Per-observation curvature below which an unpenalized optimum is treated as separated.
const SEPARATION_CURVATURE: f64 = 1e-7;

/// Maximum pseudo-likelihood estimate; with a prior this is the pseudo MAP.
///
/// Interactions absent from `structure` are held at exactly zero.
pub fn mple(data: &Dataset, structure: Option<&GraphStructure>, prior: Option<&PriorSpec>) -> Result<EstimateResult> {
    let spec = *data.spec();
    if data.n() == 0 {
        return Err(Error::Validation("estimation needs at least one observation".into()));
    }
    if let Some(g) = structure {
        if g.p() != spec.p() {
            return Err(Error::DimensionMismatch {
                expected: spec.p(),
                found: g.p(),
            });
        }
    }
    if let Some(pr) = prior {
        pr.validate()?;
    }
    let free: Vec<usize> = match structure {
        None => (0..spec.dim()).collect(),
        Some(g) => {
            let mut f: Vec<usize> = (0..spec.n_thresholds()).collect();
            f.extend(g.free_interactions(&spec));
            f.sort_unstable();
            f
        }
    };
    newton(&PseudoLikelihood::new(data), &free, prior, vec![0.0; spec.dim()])
}

/// Pseudo-likelihood MAP under the given prior.
pub fn map_pseudo(data: &Dataset, prior: &PriorSpec) -> Result<EstimateResult> {
    mple(data, None, Some(prior))
}

fn objective(pl: &PseudoLikelihood, prior: Option<&PriorSpec>, theta: &[f64]) -> f64 {
    let mut v = pl.log_likelihood(theta);
    if let Some(pr) = prior {
        v += pr.log_density(pl.spec(), theta);
    }
    v
}

fn newton(
    pl: &PseudoLikelihood,
    free: &[usize],
    prior: Option<&PriorSpec>,
    mut theta: Vec<f64>,
) -> Result<EstimateResult> {
    let spec = *pl.spec();
    let k = free.len();
    let mut decrements = Vec::new();
    let mut notes = Vec::new();
    let mut value = objective(pl, prior, &theta);
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < NEWTON_MAX_ITER {
        let c = pl.curvature(&theta);
        let mut grad = c.gradient;
        let mut hess = c.hessian;
        if let Some(pr) = prior {
            pr.add_gradient(&spec, &theta, &mut grad);
            for (a, h) in pr.curvature(&spec).into_iter().enumerate() {
                hess[(a, a)] += h;
            }
        }
        let g = Matrix::from_fn(k, 1, |a, _| grad[free[a]]);
        grad_norm = g.norm();
        if !grad_norm.is_finite() {
            return Err(Error::Numerical("non-finite pseudo-likelihood gradient".into()));
        }
        if grad_norm <= NEWTON_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;

        let neg_h = Matrix::from_fn(k, k, |a, b| -hess[(free[a], free[b])]);
        let step = match cholesky_lower(&neg_h, "negative pseudo Hessian") {
            Ok((l, _)) => cholesky_solve(&l, &g)?,
            Err(_) => {
                if notes.is_empty() {
                    notes.push(String::from("singular Hessian encountered; gradient steps used"));
                }
                g.clone()
            }
        };
        let slope = g.dot(&step);
        decrements.push(slope);

        let mut t = 1.0;
        let mut accepted = false;
        let mut trial = theta.clone();
        if slope <= ROUNDING_SLOPE * (1.0 + value.abs()) {
            // Predicted gain is below the resolution of the objective; the
            // Armijo test is meaningless here, so take the full Newton step.
            for (a, &idx) in free.iter().enumerate() {
                trial[idx] = theta[idx] + step[a];
            }
            value = objective(pl, prior, &trial);
            theta = trial;
            continue;
        }
        for _ in 0..MAX_HALVINGS {
            for (a, &idx) in free.iter().enumerate() {
                trial[idx] = theta[idx] + t * step[a];
            }
            let v = objective(pl, prior, &trial);
            if v.is_finite() && v >= value + ARMIJO_C * t * slope {
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            notes.push(format!("line search stalled at iteration {iterations}"));
            break;
        }
        theta = trial;
        if theta.iter().any(|v| v.abs() > DIVERGENCE_BOUND) {
            notes.push(String::from(
                "parameters diverged (data separation); supply a prior to regularize",
            ));
            break;
        }
    }
    if converged && prior.is_none() && k > 0 {
        // A vanishing curvature direction at the optimum means the likelihood
        // keeps increasing towards infinity along it.
        let hess = pl.curvature(&theta).hessian;
        let neg_h = Matrix::from_fn(k, k, |a, b| -hess[(free[a], free[b])]);
        if crate::linalg::min_eigenvalue(&neg_h) < SEPARATION_CURVATURE * pl.n() as f64 {
            converged = false;
            notes.push(String::from(
                "pseudo-likelihood is flat along some direction (data separation); supply a prior to regularize",
            ));
        }
    }
    if !converged && iterations == NEWTON_MAX_ITER && notes.is_empty() {
        notes.push(format!("no convergence within {NEWTON_MAX_ITER} iterations"));
    }
    Ok(EstimateResult {
        theta_star: ParamVector(theta),
        converged,
        iterations,
        final_gradient_norm: grad_norm,
        tolerance: Some(NEWTON_TOLERANCE),
        decrements,
        notes,
    })
}

/// Step sequence `a_k = a0 / (k + offset)` for Robbins-Monro.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobbinsMonroSchedule {
    #[serde(default = "default_rm_iterations")]
    pub iterations: usize,
    /// Gain numerator; `None` means `1/n`.
    #[serde(default)]
    pub a0: Option<f64>,
    #[serde(default = "default_rm_offset")]
    pub offset: f64,
}

fn default_rm_iterations() -> usize {
    100
}
fn default_rm_offset() -> f64 {
    100.0
}

impl Default for RobbinsMonroSchedule {
    fn default() -> Self {
        Self {
            iterations: default_rm_iterations(),
            a0: None,
            offset: default_rm_offset(),
        }
    }
}

/// Chains used for Monte Carlo moments in the estimators.
const MC_MAX_CHAINS: usize = 100;

/// Stochastic-approximation ascent on the full log-likelihood (plus log-prior).
///
/// Expected statistics at each iterate come from `mc_samples` Gibbs states
/// started at the observed rows.
pub fn robbins_monro(
    data: &Dataset,
    prior: Option<&PriorSpec>,
    init: &[f64],
    mc_samples: usize,
    schedule: &RobbinsMonroSchedule,
    seed: u64,
) -> Result<EstimateResult> {
    let spec = *data.spec();
    spec.check_params(init)?;
    if data.n() == 0 {
        return Err(Error::Validation("estimation needs at least one observation".into()));
    }
    if mc_samples == 0 {
        return Err(Error::Config("Robbins-Monro needs mc_samples >= 1".into()));
    }
    let n = data.n() as f64;
    let a0 = schedule.a0.unwrap_or(1.0 / n);
    if !(a0 >= 0.0 && a0.is_finite()) || !(schedule.offset > 0.0) {
        return Err(Error::Config(
            "Robbins-Monro gain must be non-negative and offset positive".into(),
        ));
    }
    let observed = sufficient_statistics(data, StatKind::Full).values;
    let mut theta = init.to_vec();
    let mut grad_norm = f64::NAN;
    let mut notes = Vec::new();
    let mut diverged = false;
    let mut iterations = 0;
    for k in 0..schedule.iterations {
        let gain = a0 / (k as f64 + schedule.offset);
        let gibbs = GibbsSampler::new(&theta, &spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k as u64]));
        let mc = gibbs_stat_moments(
            &gibbs,
            mc_samples,
            MC_MAX_CHAINS,
            GibbsInit::Data(data),
            false,
            &mut rng,
        )?;
        let mut grad: Vec<f64> = observed.iter().zip(&mc.mean).map(|(s, e)| s - n * e).collect();
        if let Some(pr) = prior {
            pr.add_gradient(&spec, &theta, &mut grad);
        }
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += gain * g;
        }
        iterations = k + 1;
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_BOUND {
            diverged = true;
            notes.push(format!(
                "Robbins-Monro diverged at iteration {iterations} (|theta| = {norm:.3e})"
            ));
            break;
        }
    }
    notes.push(format!(
        "schedule: {} iterations, a0 = {a0:.6e}, offset = {}, {mc_samples} Gibbs draws per iteration",
        schedule.iterations, schedule.offset
    ));
    Ok(EstimateResult {
        theta_star: ParamVector(theta),
        converged: !diverged,
        iterations,
        final_gradient_norm: grad_norm,
        tolerance: None,
        decrements: Vec::new(),
        notes,
    })
}

#[derive(Clone, Debug)]
pub struct McHessian {
    /// `-n Cov_MC[s(x)]`.
    pub hessian: Matrix,
    pub warning: Option<String>,
}

/// Monte Carlo estimate of the full log-likelihood Hessian at `theta`.
pub fn monte_carlo_hessian(
    theta: &[f64],
    spec: &ModelSpec,
    n: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<McHessian> {
    spec.check_params(theta)?;
    if mc_samples < 2 {
        return Err(Error::Config("Monte Carlo Hessian needs at least 2 draws".into()));
    }
    let d = spec.dim();
    let warning = (mc_samples < 2 * d).then(|| {
        format!(
            "Monte Carlo Hessian uses {mc_samples} draws for {d} parameters (fewer than 2d); estimate may be singular"
        )
    });
    let gibbs = GibbsSampler::new(theta, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mc = gibbs_stat_moments(&gibbs, mc_samples, MC_MAX_CHAINS, GibbsInit::Uniform, true, &mut rng)?;
    let mut hessian = mc.cov.expect("covariance requested") * -(n as f64);
    symmetrize(&mut hessian);
    Ok(McHessian { hessian, warning })
}
