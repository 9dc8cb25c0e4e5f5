//! Fisher-preconditioned Metropolis-adjusted Langevin kernel.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, solve_lower, spd_inverse, Matrix};
use crate::model::dot;

/// A target evaluation at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Eval {
    /// Unnormalized log density (for auxiliary-variable targets, the part that
    /// does not involve the partition function).
    pub log_density: f64,
    pub gradient: Vec<f64>,
    /// Sufficient statistics of auxiliary data simulated at this point, if the
    /// target uses the exchange-type acceptance ratio.
    pub aux_stats: Option<Vec<f64>>,
}

impl Eval {
    pub fn is_finite(&self) -> bool {
        self.log_density.is_finite()
            && self.gradient.iter().all(|g| g.is_finite())
            && self.aux_stats.as_ref().is_none_or(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Density interface used by the kernel.
///
/// `stream` identifies the call for targets that consume their own
/// randomness (derived seeds), so evaluations are reproducible.
pub trait Target {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &[f64], stream: u64) -> Result<Eval>;

    /// Fisher information (negative Hessian of the log density) at `x`.
    fn information(&self, x: &[f64], stream: u64) -> Result<Matrix>;

    /// Lower factor `R` with `R R' = information^{-1}`.
    fn fisher_factor(&self, x: &[f64], stream: u64) -> Result<Matrix> {
        let info = self.information(x, stream)?;
        let inv = spd_inverse(&info, "Fisher information")?;
        Ok(cholesky_lower(&inv, "inverse Fisher information")?.0)
    }
}

/// Proposal geometry: `R`, `R^{-1}` and `M = R R'`.
#[derive(Clone, Debug, PartialEq)]
pub struct Preconditioner {
    pub r: Matrix,
    pub r_inv: Matrix,
    pub m: Matrix,
}

impl Preconditioner {
    pub fn from_factor(r: Matrix) -> Result<Self> {
        let d = r.nrows();
        if r.diagonal().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Numerical("Fisher factor has a non-positive diagonal".into()));
        }
        let r_inv = solve_lower(&r, &Matrix::identity(d, d))?;
        let m = &r * r.transpose();
        Ok(Self { r, r_inv, m })
    }

    pub fn identity(d: usize) -> Self {
        let eye = Matrix::identity(d, d);
        Self {
            r: eye.clone(),
            r_inv: eye.clone(),
            m: eye,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelState {
    pub x: Vec<f64>,
    pub eval: Eval,
    pub pre: Preconditioner,
    pub sigma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// `min(1, exp(log_alpha))`; 0 when the proposal was non-finite.
    pub accept_prob: f64,
    pub nonfinite: bool,
}

fn drift(pre: &Preconditioner, sigma2: f64, x: &[f64], grad: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = x.to_vec();
    for a in 0..d {
        let mut acc = 0.0;
        for b in 0..d {
            acc += pre.m[(a, b)] * grad[b];
        }
        out[a] += 0.5 * sigma2 * acc;
    }
    out
}

/// `log q(to | from)` up to the constant shared by both directions.
pub fn log_proposal_density(pre: &Preconditioner, sigma2: f64, from: &[f64], from_grad: &[f64], to: &[f64]) -> f64 {
    let mean = drift(pre, sigma2, from, from_grad);
    let d = to.len();
    let mut sq = 0.0;
    for a in 0..d {
        let mut acc = 0.0;
        for b in 0..=a {
            acc += pre.r_inv[(a, b)] * (to[b] - mean[b]);
        }
        sq += acc * acc;
    }
    -sq / (2.0 * sigma2)
}

/// Auxiliary-variable log ratio `(s(X) - s(Y'))'(theta' - theta) + log pi(theta') - log pi(theta)`
/// expressed through evaluations whose `log_density` is `s(X)'theta + log pi(theta)`.
pub fn target_log_ratio(from: &[f64], from_eval: &Eval, to: &[f64], to_eval: &Eval) -> f64 {
    let mut lr = to_eval.log_density - from_eval.log_density;
    if let Some(sy) = &to_eval.aux_stats {
        let diff: Vec<f64> = to.iter().zip(from).map(|(a, b)| a - b).collect();
        lr -= dot(sy, &diff);
    }
    lr
}

/// Log Metropolis-Hastings acceptance for a move `from -> to`.
pub fn mala_log_acceptance(
    pre: &Preconditioner,
    sigma2: f64,
    from: &[f64],
    from_eval: &Eval,
    to: &[f64],
    to_eval: &Eval,
) -> f64 {
    target_log_ratio(from, from_eval, to, to_eval) + log_proposal_density(pre, sigma2, to, &to_eval.gradient, from)
        - log_proposal_density(pre, sigma2, from, &from_eval.gradient, to)
}

/// One Fisher-MALA transition.
pub fn fisher_mala_step<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &mut KernelState,
    stream: u64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let d = state.x.len();
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let mean = drift(&state.pre, state.sigma2, &state.x, &state.eval.gradient);
    let sigma = state.sigma2.sqrt();
    let mut proposal = mean;
    for a in 0..d {
        let mut acc = 0.0;
        for b in 0..=a {
            acc += state.pre.r[(a, b)] * z[b];
        }
        proposal[a] += sigma * acc;
    }
    let u: f64 = rng.random();
    let rejected = StepOutcome {
        accepted: false,
        accept_prob: 0.0,
        nonfinite: true,
    };
    if proposal.iter().any(|v| !v.is_finite()) {
        return Ok(rejected);
    }
    let eval = match target.evaluate(&proposal, stream) {
        Ok(e) if e.is_finite() => e,
        Ok(_) | Err(Error::Numerical(_)) => return Ok(rejected),
        Err(e) => return Err(e),
    };
    let log_alpha = mala_log_acceptance(&state.pre, state.sigma2, &state.x, &state.eval, &proposal, &eval);
    if !log_alpha.is_finite() && log_alpha != f64::NEG_INFINITY {
        return Ok(rejected);
    }
    let accept_prob = if log_alpha >= 0.0 { 1.0 } else { log_alpha.exp() };
    let accepted = u < accept_prob;
    if accepted {
        state.x = proposal;
        state.eval = eval;
    }
    Ok(StepOutcome {
        accepted,
        accept_prob,
        nonfinite: false,
    })
}

/// Robbins-Monro update of `log sigma^2` towards `target` acceptance.
pub fn adapt_sigma2(sigma2: f64, accept_prob: f64, target: f64, iteration: usize) -> f64 {
    let gain = 1.0 / ((iteration.max(1)) as f64).sqrt();
    let next = (sigma2.ln() + gain * (accept_prob - target)).exp();
    next.clamp(1e-12, 1e6)
}

/// Builds the preconditioner at `x`, falling back to `fallback` on failure.
pub fn refresh_preconditioner<T: Target + ?Sized>(
    target: &T,
    x: &[f64],
    stream: u64,
    fallback: Option<&Preconditioner>,
    warnings: &mut Vec<String>,
) -> Preconditioner {
    match target.fisher_factor(x, stream).and_then(Preconditioner::from_factor) {
        Ok(p) => p,
        Err(e) => {
            let msg = format!("Fisher factor refresh failed, previous factor kept: {e}");
            if !warnings.contains(&msg) {
                warnings.push(msg);
            }
            fallback
                .cloned()
                .unwrap_or_else(|| Preconditioner::identity(target.dim()))
        }
    }
}

/// Standard normal target with identity information, for tests.
#[cfg(test)]
pub(crate) struct StdNormal(pub usize);

#[cfg(test)]
impl Target for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn evaluate(&self, x: &[f64], _: u64) -> Result<Eval> {
        Ok(Eval {
            log_density: -0.5 * dot(x, x),
            gradient: x.iter().map(|v| -v).collect(),
            aux_stats: None,
        })
    }
    fn information(&self, _: &[f64], _: u64) -> Result<Matrix> {
        Ok(Matrix::identity(self.0, self.0))
    }
}
