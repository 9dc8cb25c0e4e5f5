//! MCMC samplers for the ordinal MRF posterior and its approximations.

pub mod kernel;
pub mod targets;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::map_pseudo;
use crate::linalg::{cholesky_lower, Matrix};
use crate::model::{Dataset, ParamVector, PriorSpec};
use crate::rescale::{
    build_rescaling, curvature_bundle, ghw_covariance, update_rescaling, RescaleVariant, RescalingMatrix,
    RescalingRecord,
};
use kernel::{adapt_sigma2, fisher_mala_step, refresh_preconditioner, target_log_ratio, KernelState, Target};
use targets::{CoreTarget, DmhTarget, EmpiricalTarget, ExactTarget, PseudoTarget};

pub use kernel::{Eval, Preconditioner, StepOutcome};

/// Inference methods known to the runner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Pseudo,
    Core,
    CoreRm,
    CoreMch,
    Adacore,
    Dmh,
    Adadmh,
    Empirical,
    PhRm,
    PhGhw,
    PhMch,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::Exact,
        Method::Pseudo,
        Method::Core,
        Method::CoreRm,
        Method::CoreMch,
        Method::Adacore,
        Method::Dmh,
        Method::Adadmh,
        Method::Empirical,
        Method::PhRm,
        Method::PhGhw,
        Method::PhMch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Pseudo => "pseudo",
            Method::Core => "core",
            Method::CoreRm => "core-rm",
            Method::CoreMch => "core-mch",
            Method::Adacore => "adacore",
            Method::Dmh => "dmh",
            Method::Adadmh => "adadmh",
            Method::Empirical => "empirical",
            Method::PhRm => "ph-rm",
            Method::PhGhw => "ph-ghw",
            Method::PhMch => "ph-mch",
        }
    }

    /// Default initial `sigma^2`: small for targets on the full-likelihood scale.
    pub fn default_sigma2(&self) -> f64 {
        match self {
            Method::Exact | Method::Dmh | Method::Adadmh | Method::Empirical => 0.001,
            _ => 1.0,
        }
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaCoreConfig {
    #[serde(default = "default_xi")]
    pub xi: f64,
    /// Trigger threshold; `None` means `3 / sqrt(n)`.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_xi() -> f64 {
    0.05
}
fn default_epsilon() -> f64 {
    1e-12
}

impl Default for AdaCoreConfig {
    fn default() -> Self {
        Self {
            xi: default_xi(),
            tau: None,
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Total iterations including burn-in.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
    /// `None` picks the method default.
    #[serde(default)]
    pub sigma2_init: Option<f64>,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    /// Gibbs states per auxiliary simulation (DMH, AdaDMH).
    #[serde(default = "default_inner")]
    pub inner_gibbs_iters: usize,
    /// Accepted moves between Fisher-factor refreshes during burn-in.
    #[serde(default = "default_refresh")]
    pub fisher_refresh: usize,
    #[serde(default)]
    pub adacore: AdaCoreConfig,
}

fn default_iterations() -> usize {
    25_000
}
fn default_burn_in() -> usize {
    5_000
}
fn default_target_accept() -> f64 {
    0.574
}
fn default_inner() -> usize {
    25_000
}
fn default_refresh() -> usize {
    50
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            burn_in: default_burn_in(),
            seed: 0,
            sigma2_init: None,
            target_accept: default_target_accept(),
            inner_gibbs_iters: default_inner(),
            fisher_refresh: default_refresh(),
            adacore: AdaCoreConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "need 0 < burn_in < iterations, got burn_in = {}, iterations = {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        if let Some(s) = self.sigma2_init {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("sigma2_init must be positive".into()));
            }
        }
        if self.inner_gibbs_iters == 0 || self.fisher_refresh == 0 {
            return Err(Error::Config(
                "inner_gibbs_iters and fisher_refresh must be positive".into(),
            ));
        }
        let a = &self.adacore;
        if !(a.xi > 0.0 && a.xi <= 1.0) || !(a.epsilon > 0.0) || a.tau.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("adacore settings must be positive (xi in (0, 1])".into()));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations - self.burn_in
    }

    fn sigma2(&self, method: Method) -> f64 {
        self.sigma2_init.unwrap_or_else(|| method.default_sigma2())
    }
}

/// Output of one sampler run.
#[derive(Clone, Debug)]
pub struct Chain {
    pub method: Method,
    /// Retained posterior draws, one row per post-burn-in iteration.
    ///
    /// For the rescaled methods these are `A (theta - theta*) + theta*`, the
    /// calibrated posterior.
    pub draws: Matrix,
    /// Rescaled methods: the matching pseudo-posterior draws `theta(beta)`.
    pub pseudo_draws: Option<Matrix>,
    pub accept_trace: Vec<bool>,
    pub sigma2_trace: Vec<f64>,
    pub burn_in: usize,
    pub seed: u64,
    pub theta_star: Option<ParamVector>,
    pub rescaling: Option<RescalingRecord>,
    /// Translation added to empirical draws.
    pub shift: Option<Vec<f64>>,
    pub rescaling_updates: usize,
    pub nonfinite_proposals: usize,
    pub warnings: Vec<String>,
    /// Filled in by callers that measure time.
    pub wall_time_seconds: Option<f64>,
}

impl Chain {
    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.column(k).iter().copied().collect()
    }

    /// Post-burn-in acceptance rate.
    pub fn acceptance_rate(&self) -> f64 {
        let post = &self.accept_trace[self.burn_in.min(self.accept_trace.len())..];
        if post.is_empty() {
            return 0.0;
        }
        post.iter().filter(|&&a| a).count() as f64 / post.len() as f64
    }

    pub fn mean(&self) -> Vec<f64> {
        let s = self.len().max(1) as f64;
        (0..self.dim()).map(|k| self.draws.column(k).sum() / s).collect()
    }

    pub fn sd(&self) -> Vec<f64> {
        let means = self.mean();
        let s = self.len();
        (0..self.dim())
            .map(|k| {
                let ss: f64 = self
                    .draws
                    .column(k)
                    .iter()
                    .map(|v| (v - means[k]) * (v - means[k]))
                    .sum();
                (ss / (s.max(2) - 1) as f64).sqrt()
            })
            .collect()
    }

    fn new(method: Method, cfg: &SamplerConfig, run: KernelRun) -> Self {
        Self {
            method,
            draws: run.draws,
            pseudo_draws: None,
            accept_trace: run.accept,
            sigma2_trace: run.sigma2,
            burn_in: cfg.burn_in,
            seed: cfg.seed,
            theta_star: None,
            rescaling: None,
            shift: None,
            rescaling_updates: 0,
            nonfinite_proposals: run.nonfinite,
            warnings: run.warnings,
            wall_time_seconds: None,
        }
    }
}

struct KernelRun {
    draws: Matrix,
    accept: Vec<bool>,
    sigma2: Vec<f64>,
    nonfinite: usize,
    warnings: Vec<String>,
}

/// Hook run after each burn-in step; returns `true` when it replaced the target
/// geometry so the preconditioner must be rebuilt.
type BurnInHook<'h, T> =
    dyn FnMut(&mut T, &mut KernelState, usize, &StepOutcome, &mut Vec<String>) -> Result<bool> + 'h;

// Streams for target-internal randomness: proposals use the iteration index,
// preconditioner refreshes use the high bit.
const REFRESH_STREAM: u64 = 1 << 62;

fn run_kernel<T: Target>(
    target: &mut T,
    start: Vec<f64>,
    cfg: &SamplerConfig,
    sigma2_init: f64,
    hook: Option<&mut BurnInHook<'_, T>>,
) -> Result<KernelRun> {
    cfg.validate()?;
    let d = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut warnings = Vec::new();
    let eval = target.evaluate(&start, u64::MAX)?;
    if !eval.is_finite() {
        return Err(Error::Numerical("target is not finite at the starting point".into()));
    }
    let pre = refresh_preconditioner(&*target, &start, REFRESH_STREAM, None, &mut warnings);
    let mut state = KernelState {
        x: start,
        eval,
        pre,
        sigma2: sigma2_init,
    };
    let mut hook = hook;
    let retained = cfg.retained();
    let mut draws = Matrix::zeros(retained, d);
    let mut accept = Vec::with_capacity(cfg.iterations);
    let mut sigma2 = Vec::with_capacity(cfg.iterations);
    let mut nonfinite = 0;
    let mut accepted_since_refresh = 0;
    for s in 0..cfg.iterations {
        let out = fisher_mala_step(&*target, &mut state, s as u64, &mut rng)?;
        nonfinite += out.nonfinite as usize;
        accept.push(out.accepted);
        sigma2.push(state.sigma2);
        if s < cfg.burn_in {
            state.sigma2 = adapt_sigma2(state.sigma2, out.accept_prob, cfg.target_accept, s + 1);
            let mut rebuild = false;
            if let Some(h) = hook.as_deref_mut() {
                rebuild = h(target, &mut state, s, &out, &mut warnings)?;
            }
            accepted_since_refresh += out.accepted as usize;
            if rebuild || accepted_since_refresh >= cfg.fisher_refresh {
                accepted_since_refresh = 0;
                state.pre = refresh_preconditioner(
                    &*target,
                    &state.x,
                    REFRESH_STREAM + s as u64,
                    Some(&state.pre),
                    &mut warnings,
                );
            }
        } else {
            for k in 0..d {
                draws[(s - cfg.burn_in, k)] = state.x[k];
            }
        }
    }
    if nonfinite > 0 {
        warnings.push(format!(
            "{nonfinite} proposals had non-finite target values and were rejected"
        ));
    }
    Ok(KernelRun {
        draws,
        accept,
        sigma2,
        nonfinite,
        warnings,
    })
}

fn start_point(data: &Dataset, prior: &PriorSpec) -> Result<ParamVector> {
    let fit = map_pseudo(data, prior)?;
    if !fit.converged {
        return Err(Error::Numerical(format!(
            "pseudo posterior mode did not converge: {}",
            fit.notes.join("; ")
        )));
    }
    Ok(fit.theta_star)
}

pub fn sample_pseudo(data: &Dataset, prior: &PriorSpec, cfg: &SamplerConfig) -> Result<Chain> {
    let star = start_point(data, prior)?;
    let mut target = PseudoTarget::new(data, prior);
    let run = run_kernel(&mut target, star.0.clone(), cfg, cfg.sigma2(Method::Pseudo), None)?;
    let mut chain = Chain::new(Method::Pseudo, cfg, run);
    chain.theta_star = Some(star);
    Ok(chain)
}

pub fn sample_exact(data: &Dataset, prior: &PriorSpec, cfg: &SamplerConfig) -> Result<Chain> {
    let mut target = ExactTarget::new(data, prior)?;
    let star = start_point(data, prior)?;
    let run = run_kernel(&mut target, star.0.clone(), cfg, cfg.sigma2(Method::Exact), None)?;
    let mut chain = Chain::new(Method::Exact, cfg, run);
    chain.theta_star = Some(star);
    Ok(chain)
}

fn attach_scales(chain: &mut Chain, rescaling: &RescalingMatrix) {
    // Kernel draws are on the beta scale; recover theta(beta) alongside.
    let mut theta_draws = chain.draws.clone();
    if !rescaling.is_identity() {
        for r in 0..chain.len() {
            let row: Vec<f64> = chain.draws.row(r).iter().copied().collect();
            for (k, v) in rescaling.inverse(&row).into_iter().enumerate() {
                theta_draws[(r, k)] = v;
            }
        }
    }
    chain.pseudo_draws = Some(theta_draws);
    chain.theta_star = Some(rescaling.theta_star.clone());
    chain.rescaling = Some(rescaling.to_record());
}

/// Samples `beta` whose pulled-back density is the pseudo posterior; the
/// `beta` draws are reported.
pub fn sample_core(
    data: &Dataset,
    prior: &PriorSpec,
    rescaling: &RescalingMatrix,
    cfg: &SamplerConfig,
) -> Result<Chain> {
    sample_core_as(Method::Core, data, prior, rescaling, cfg)
}

pub fn sample_core_as(
    method: Method,
    data: &Dataset,
    prior: &PriorSpec,
    rescaling: &RescalingMatrix,
    cfg: &SamplerConfig,
) -> Result<Chain> {
    if rescaling.dim() != data.spec().dim() {
        return Err(Error::DimensionMismatch {
            expected: data.spec().dim(),
            found: rescaling.dim(),
        });
    }
    let mut target = CoreTarget::new(data, prior, rescaling.clone());
    let start = rescaling.theta_star.0.clone();
    let run = run_kernel(&mut target, start, cfg, cfg.sigma2(method), None)?;
    let mut chain = Chain::new(method, cfg, run);
    attach_scales(&mut chain, rescaling);
    chain.warnings.extend(rescaling.notes.iter().cloned());
    Ok(chain)
}

/// Relative Frobenius change `|a - b|_F / (|b|_F + eps)`.
pub fn relative_change(a: &Matrix, b: &Matrix, eps: f64) -> f64 {
    (a - b).norm() / (b.norm() + eps)
}

/// Exponential moving average update.
pub fn ema(prev: f64, value: f64, xi: f64) -> f64 {
    (1.0 - xi) * prev + xi * value
}

/// CoRe with the rescaling matrix re-estimated during burn-in whenever the
/// smoothed relative change of the curvature factor exceeds `tau`.
pub fn sample_adacore(data: &Dataset, prior: &PriorSpec, cfg: &SamplerConfig) -> Result<Chain> {
    cfg.validate()?;
    let star = start_point(data, prior)?;
    let initial = build_rescaling(data, &star, Some(prior), RescaleVariant::Ghw, None)?;
    let mut target = CoreTarget::new(data, prior, initial.clone());
    let ada = cfg.adacore;
    let tau = ada.tau.unwrap_or(3.0 / (data.n() as f64).sqrt());
    let d = star.len();

    let theta_factor = |t: &CoreTarget, theta: &[f64]| t.pseudo().fisher_factor(theta, 0);
    let mut r_prev = theta_factor(&target, &star)?;
    let mut r_cur = r_prev.clone();
    let mut smoothed = 0.0;
    let mut sum = vec![0.0; d];
    let mut updates = 0usize;

    let mut hook = |t: &mut CoreTarget,
                    state: &mut KernelState,
                    s: usize,
                    out: &StepOutcome,
                    warnings: &mut Vec<String>|
     -> Result<bool> {
        let theta = t.rescaling().inverse(&state.x);
        for (acc, v) in sum.iter_mut().zip(&theta) {
            *acc += v;
        }
        if out.accepted {
            match theta_factor(t, &theta) {
                Ok(r) => r_cur = r,
                Err(e) => {
                    let msg = format!("curvature factor unavailable at an accepted state: {e}");
                    if !warnings.contains(&msg) {
                        warnings.push(msg);
                    }
                }
            }
        }
        let delta = relative_change(&r_cur, &r_prev, ada.epsilon);
        r_prev = r_cur.clone();
        smoothed = ema(smoothed, delta, ada.xi);
        if smoothed <= tau {
            return Ok(false);
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / (s + 1) as f64).collect();
        match update_rescaling(&mean, &star, data, Some(prior)) {
            Ok(next) => {
                t.set_rescaling(next);
                state.eval = t.evaluate(&state.x, u64::MAX - 1)?;
                updates += 1;
                Ok(true)
            }
            Err(e) => {
                let msg = format!("rescaling update failed, previous matrix kept: {e}");
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
                Ok(false)
            }
        }
    };
    let run = run_kernel(
        &mut target,
        star.0.clone(),
        cfg,
        cfg.sigma2(Method::Adacore),
        Some(&mut hook),
    )?;
    let final_rescaling = target.rescaling().clone();
    let mut chain = Chain::new(Method::Adacore, cfg, run);
    attach_scales(&mut chain, &final_rescaling);
    chain.rescaling_updates = updates;
    chain.warnings.extend(initial.notes.iter().cloned());
    Ok(chain)
}

/// Fisher-MALA with auxiliary Gibbs data replacing the partition function.
pub fn sample_dmh(data: &Dataset, prior: &PriorSpec, cfg: &SamplerConfig) -> Result<Chain> {
    let star = start_point(data, prior)?;
    let mut target = DmhTarget::new(data, prior, cfg.inner_gibbs_iters, cfg.seed ^ 0xD311);
    let run = run_kernel(&mut target, star.0.clone(), cfg, cfg.sigma2(Method::Dmh), None)?;
    let mut chain = Chain::new(Method::Dmh, cfg, run);
    chain.theta_star = Some(star);
    Ok(chain)
}

/// Blended random-walk covariance `(2.38^2/d) [(1-l) S0 + l S + 1e-8 I]`.
pub fn adadmh_proposal_covariance(base: &Matrix, learned: &Matrix, lambda: f64) -> Matrix {
    let d = base.nrows();
    let scale = 2.38 * 2.38 / d as f64;
    (base * (1.0 - lambda) + learned * lambda + Matrix::identity(d, d) * 1e-8) * scale
}

/// Running mean and covariance (Welford).
#[derive(Clone, Debug)]
struct RunningCov {
    n: usize,
    mean: Vec<f64>,
    m2: Matrix,
}

impl RunningCov {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: Matrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let d = x.len();
        let delta: Vec<f64> = (0..d).map(|k| x[k] - self.mean[k]).collect();
        for k in 0..d {
            self.mean[k] += delta[k] / self.n as f64;
        }
        for a in 0..d {
            for b in 0..d {
                self.m2[(a, b)] += delta[a] * (x[b] - self.mean[b]);
            }
        }
    }

    fn covariance(&self) -> Matrix {
        if self.n < 2 {
            return Matrix::zeros(self.m2.nrows(), self.m2.ncols());
        }
        let mut c = &self.m2 / (self.n - 1) as f64;
        crate::linalg::symmetrize(&mut c);
        c
    }
}

/// Adaptive random-walk exchange sampler, blending the sandwich covariance
/// into the running covariance of past draws over burn-in.
pub fn sample_adadmh(data: &Dataset, prior: &PriorSpec, cfg: &SamplerConfig) -> Result<Chain> {
    cfg.validate()?;
    let star = start_point(data, prior)?;
    let d = star.len();
    let bundle = curvature_bundle(data, &star, Some(prior))?;
    let base = ghw_covariance(&bundle)?;
    let target = DmhTarget::new(data, prior, cfg.inner_gibbs_iters, cfg.seed ^ 0xADA0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut warnings = Vec::new();

    let mut x = star.0.clone();
    let mut log_density = target.partial_log_density(&x);
    let mut running = RunningCov::new(d);
    let mut chol = cholesky_lower(
        &adadmh_proposal_covariance(&base, &base, 0.0),
        "AdaDMH proposal covariance",
    )?
    .0;
    let mut draws = Matrix::zeros(cfg.retained(), d);
    let mut accept = Vec::with_capacity(cfg.iterations);
    let mut sigma2 = Vec::with_capacity(cfg.iterations);
    for s in 0..cfg.iterations {
        if s < cfg.burn_in {
            let lambda = (s as f64 / cfg.burn_in as f64).min(1.0);
            let cov = adadmh_proposal_covariance(&base, &running.covariance(), lambda);
            match cholesky_lower(&cov, "AdaDMH proposal covariance") {
                Ok((l, _)) => chol = l,
                Err(e) => {
                    let msg = format!("proposal covariance update failed, previous kept: {e}");
                    if !warnings.contains(&msg) {
                        warnings.push(msg);
                    }
                }
            }
        }
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let proposal: Vec<f64> = (0..d)
            .map(|a| x[a] + (0..=a).map(|b| chol[(a, b)] * z[b]).sum::<f64>())
            .collect();
        let u: f64 = rng.random();
        let prop_eval = target.evaluate(&proposal, s as u64)?;
        let cur_eval = Eval {
            log_density,
            gradient: Vec::new(),
            aux_stats: None,
        };
        let log_alpha = target_log_ratio(&x, &cur_eval, &proposal, &prop_eval);
        let ok = log_alpha.is_finite() || log_alpha == f64::INFINITY;
        let accepted = ok && u.ln() < log_alpha;
        if accepted {
            x = proposal;
            log_density = prop_eval.log_density;
        }
        accept.push(accepted);
        sigma2.push(1.0);
        if s < cfg.burn_in {
            running.push(&x);
        } else {
            for k in 0..d {
                draws[(s - cfg.burn_in, k)] = x[k];
            }
        }
    }
    let run = KernelRun {
        draws,
        accept,
        sigma2,
        nonfinite: 0,
        warnings,
    };
    let mut chain = Chain::new(Method::Adadmh, cfg, run);
    chain.theta_star = Some(star);
    Ok(chain)
}

/// Half-sample mode (Bickel and Fruehwirth) of a sample.
pub fn half_sample_mode(values: &[f64]) -> Result<f64> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "half-sample mode needs finite, nonempty input".into(),
        ));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut lo = 0;
    let mut len = v.len();
    while len > 3 {
        let h = len.div_ceil(2);
        let mut best = lo;
        let mut width = f64::INFINITY;
        for i in lo..=lo + len - h {
            let w = v[i + h - 1] - v[i];
            if w < width {
                width = w;
                best = i;
            }
        }
        lo = best;
        len = h;
    }
    Ok(match len {
        1 => v[lo],
        2 => 0.5 * (v[lo] + v[lo + 1]),
        _ => {
            let (a, b, c) = (v[lo], v[lo + 1], v[lo + 2]);
            if b - a < c - b {
                0.5 * (a + b)
            } else if b - a > c - b {
                0.5 * (b + c)
            } else {
                b
            }
        }
    })
}

/// Empirical-likelihood posterior, recentred so each coordinate's mode sits at
/// the pseudo posterior mode.
pub fn sample_empirical(data: &Dataset, prior: &PriorSpec, cfg: &SamplerConfig) -> Result<Chain> {
    let star = start_point(data, prior)?;
    let mut target = EmpiricalTarget::new(data, prior);
    let run = run_kernel(&mut target, star.0.clone(), cfg, cfg.sigma2(Method::Empirical), None)?;
    let mut chain = Chain::new(Method::Empirical, cfg, run);
    let mut shift = Vec::with_capacity(star.len());
    for k in 0..star.len() {
        let mode = half_sample_mode(&chain.column(k))?;
        let delta = star[k] - mode;
        for r in 0..chain.len() {
            chain.draws[(r, k)] += delta;
        }
        shift.push(delta);
    }
    chain.shift = Some(shift);
    chain.theta_star = Some(star);
    Ok(chain)
}

/// Settings shared by the Monte Carlo rescaling variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McBudget {
    pub samples: usize,
    pub seed: u64,
    pub schedule: crate::estimate::RobbinsMonroSchedule,
}

/// Post-hoc calibrated pseudo chain.
pub fn sample_post_hoc(
    method: Method,
    data: &Dataset,
    prior: &PriorSpec,
    cfg: &SamplerConfig,
    mc: Option<&McBudget>,
) -> Result<Chain> {
    if !matches!(method, Method::PhGhw | Method::PhMch | Method::PhRm) {
        return Err(Error::Config(format!("{method} is not a post-hoc method")));
    }
    calibrate_pseudo_chain(method, sample_pseudo(data, prior, cfg)?, data, prior, mc)
}

/// Post-hoc calibration of an existing pseudo-posterior chain.
///
/// The chain's recorded mode is used as `theta*`; it is recomputed when absent.
pub fn calibrate_pseudo_chain(
    method: Method,
    mut chain: Chain,
    data: &Dataset,
    prior: &PriorSpec,
    mc: Option<&McBudget>,
) -> Result<Chain> {
    use crate::rescale::{post_hoc_calibrate, Center, McSettings};
    let (variant, center) = match method {
        Method::PhGhw => (RescaleVariant::Ghw, Center::Mean),
        Method::PhMch => (RescaleVariant::Mch, Center::Mean),
        Method::PhRm => (RescaleVariant::Rm, Center::Mode),
        other => return Err(Error::Config(format!("{other} is not a post-hoc method"))),
    };
    if chain.dim() != data.spec().dim() {
        return Err(Error::DimensionMismatch {
            expected: data.spec().dim(),
            found: chain.dim(),
        });
    }
    let star = match chain.theta_star.clone() {
        Some(s) => s,
        None => start_point(data, prior)?,
    };
    let settings = mc.map(|m| McSettings {
        samples: m.samples,
        seed: m.seed,
        schedule: m.schedule,
    });
    let mut rescaling = build_rescaling(data, &star, Some(prior), variant, settings.as_ref())?;
    if variant == RescaleVariant::Rm {
        // Centre at the Robbins-Monro optimum.
        rescaling.theta_star = rescaling.target_point.clone();
        let shift: Vec<f64> = (0..star.len()).map(|k| rescaling.theta_star[k] - star[k]).collect();
        for r in 0..chain.len() {
            for (k, s) in shift.iter().enumerate() {
                chain.draws[(r, k)] += s;
            }
        }
    }
    let pseudo = chain.draws.clone();
    chain.draws = post_hoc_calibrate(&pseudo, &rescaling, center)?;
    chain.pseudo_draws = Some(pseudo);
    chain.method = method;
    chain.warnings.extend(rescaling.notes.iter().cloned());
    chain.rescaling = Some(rescaling.to_record());
    Ok(chain)
}

/// Runs any method with default rescaling settings.
pub fn sample_method(
    method: Method,
    data: &Dataset,
    prior: &PriorSpec,
    cfg: &SamplerConfig,
    mc: Option<&McBudget>,
) -> Result<Chain> {
    match method {
        Method::Exact => sample_exact(data, prior, cfg),
        Method::Pseudo => sample_pseudo(data, prior, cfg),
        Method::Core | Method::CoreRm | Method::CoreMch => {
            let star = start_point(data, prior)?;
            let variant = match method {
                Method::Core => RescaleVariant::Ghw,
                Method::CoreRm => RescaleVariant::Rm,
                _ => RescaleVariant::Mch,
            };
            let settings = mc.map(|m| crate::rescale::McSettings {
                samples: m.samples,
                seed: m.seed,
                schedule: m.schedule,
            });
            let rescaling = build_rescaling(data, &star, Some(prior), variant, settings.as_ref())?;
            sample_core_as(method, data, prior, &rescaling, cfg)
        }
        Method::Adacore => sample_adacore(data, prior, cfg),
        Method::Dmh => sample_dmh(data, prior, cfg),
        Method::Adadmh => sample_adadmh(data, prior, cfg),
        Method::Empirical => sample_empirical(data, prior, cfg),
        Method::PhRm | Method::PhGhw | Method::PhMch => sample_post_hoc(method, data, prior, cfg, mc),
    }
    .map(|mut c| {
        c.warnings.dedup();
        c
    })
}

impl Method {
    pub fn needs_monte_carlo(&self) -> bool {
        matches!(self, Method::CoreRm | Method::CoreMch | Method::PhRm | Method::PhMch)
    }

    pub fn label(&self) -> String {
        self.as_str().to_string()
    }
}
