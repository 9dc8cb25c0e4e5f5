//! Posterior comparison metrics: overlap, Savage-Dickey ratios, sd ratios,
//! effective sample size and posterior correlations.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, PriorSpec};
use crate::samplers::{Chain, Method};

pub const GRID_POINTS: usize = 512;
/// Grid padding beyond the pooled range, in bandwidths.
pub const GRID_PAD: f64 = 3.0;
pub const MIN_DENSITY_DRAWS: usize = 30;
pub const MIN_ESS_DRAWS: usize = 100;
/// Floor for a Savage-Dickey numerator that falls outside the grid.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Gaussian kernel contributions beyond this many bandwidths are dropped.
const KERNEL_CUTOFF: f64 = 8.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub const NUISANCE_PRIOR_NOTE: &str = "Savage-Dickey ratios use the marginal prior of each \
parameter; they equal the Bayes factor only when the prior of the nuisance parameters under \
the null matches their conditional prior under the alternative.";

/// Kernel density estimate tabulated on an equally spaced grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub heights: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    /// Trapezoid integral of the heights.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.heights)
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0).max(1.0)).sqrt())
}

fn sorted(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("draws contain non-finite values".to_string()));
    }
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(s)
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn check_len(x: &[f64], min: usize, what: &str) -> Result<()> {
    if x.len() < min {
        return Err(Error::Validation(format!(
            "{what} needs at least {min} draws, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Silverman's rule: `0.9 * min(sd, IQR/1.34) * S^(-1/5)`.
///
/// Falls back to the sd when the IQR is zero; a zero sd is an error.
pub fn silverman_bandwidth(x: &[f64]) -> Result<f64> {
    let s = sorted(x)?;
    silverman_sorted(&s)
}

fn silverman_sorted(s: &[f64]) -> Result<f64> {
    if s.len() < 2 {
        return Err(Error::Validation("bandwidth needs at least two draws".to_string()));
    }
    let (_, sd) = mean_sd(s);
    if !(sd > 0.0) {
        return Err(Error::Validation("draws have zero variance".to_string()));
    }
    let iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (s.len() as f64).powf(-0.2))
}

/// Gaussian kernel density of sorted draws at `x`.
fn kde_at(s: &[f64], h: f64, x: f64) -> f64 {
    let lo = s.partition_point(|&v| v < x - KERNEL_CUTOFF * h);
    let hi = s.partition_point(|&v| v <= x + KERNEL_CUTOFF * h);
    let sum: f64 = s[lo..hi]
        .iter()
        .map(|&v| {
            let z = (x - v) / h;
            (-0.5 * z * z).exp()
        })
        .sum();
    sum * INV_SQRT_2PI / (h * s.len() as f64)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

fn trapezoid(grid: &[f64], y: &[f64]) -> f64 {
    grid.windows(2)
        .zip(y.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

/// Kernel density estimate on its own padded 512-point grid.
pub fn density_estimate(x: &[f64]) -> Result<DensityEstimate> {
    let s = sorted(x)?;
    let h = silverman_sorted(&s)?;
    let grid = linspace(s[0] - GRID_PAD * h, s[s.len() - 1] + GRID_PAD * h, GRID_POINTS);
    let heights = grid.iter().map(|&g| kde_at(&s, h, g)).collect();
    Ok(DensityEstimate {
        grid,
        heights,
        bandwidth: h,
    })
}

/// Overlap `eta = integral of min(f_a, f_b)`, each density estimated with
/// its own bandwidth on a shared grid spanning the pooled range.
pub fn overlap_index(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, MIN_DENSITY_DRAWS, "overlap index")?;
    check_len(b, MIN_DENSITY_DRAWS, "overlap index")?;
    let sa = sorted(a)?;
    let sb = sorted(b)?;
    let ha = silverman_sorted(&sa)?;
    let hb = silverman_sorted(&sb)?;
    let pad = GRID_PAD * ha.max(hb);
    let lo = sa[0].min(sb[0]) - pad;
    let hi = sa[sa.len() - 1].max(sb[sb.len() - 1]) + pad;
    let grid = linspace(lo, hi, GRID_POINTS);
    let mins: Vec<f64> = grid
        .iter()
        .map(|&g| kde_at(&sa, ha, g).min(kde_at(&sb, hb, g)))
        .collect();
    Ok(trapezoid(&grid, &mins).clamp(0.0, 1.0))
}

/// Savage-Dickey ratio for the point null `theta = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavageDickey {
    pub bayes_factor: f64,
    pub log_bayes_factor: f64,
    /// The posterior density at zero was floored.
    pub floored: bool,
}

/// Posterior density at zero (kernel estimate) over the `N(0, prior_sd^2)`
/// density at zero.
pub fn savage_dickey(draws: &[f64], prior_sd: f64) -> Result<SavageDickey> {
    check_len(draws, MIN_DENSITY_DRAWS, "Savage-Dickey ratio")?;
    if !(prior_sd > 0.0 && prior_sd.is_finite()) {
        return Err(Error::Config(format!("prior sd must be positive, got {prior_sd}")));
    }
    let s = sorted(draws)?;
    let h = silverman_sorted(&s)?;
    let lo = s[0] - GRID_PAD * h;
    let hi = s[s.len() - 1] + GRID_PAD * h;
    let mut numerator = if (lo..=hi).contains(&0.0) {
        kde_at(&s, h, 0.0)
    } else {
        0.0
    };
    let floored = numerator < DENSITY_FLOOR;
    if floored {
        numerator = DENSITY_FLOOR;
    }
    let denominator = INV_SQRT_2PI / prior_sd;
    let bayes_factor = numerator / denominator;
    Ok(SavageDickey {
        bayes_factor,
        log_bayes_factor: bayes_factor.ln(),
        floored,
    })
}

/// `sd(method) / sd(exact)`.
pub fn sd_ratio(method: &[f64], exact: &[f64]) -> Result<f64> {
    check_len(method, MIN_DENSITY_DRAWS, "sd ratio")?;
    check_len(exact, MIN_DENSITY_DRAWS, "sd ratio")?;
    let (_, sm) = mean_sd(method);
    let (_, se) = mean_sd(exact);
    if !(se > 0.0) {
        return Err(Error::Validation("reference draws have zero sd".to_string()));
    }
    Ok(sm / se)
}

/// Effective sample size, `S / (1 + 2 sum rho_k)`, with the sum truncated by
/// Geyer's initial positive sequence. Clamped to `(0, S]`.
pub fn ess(x: &[f64]) -> Result<f64> {
    check_len(x, MIN_ESS_DRAWS, "effective sample size")?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("draws contain non-finite values".to_string()));
    }
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = centred.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Err(Error::Validation(
            "constant chain has no effective sample size".to_string(),
        ));
    }
    let autocorr = |k: usize| -> f64 {
        let c: f64 = centred[..n - k].iter().zip(&centred[k..]).map(|(a, b)| a * b).sum();
        c / (n as f64 * c0)
    };

    // tau = -1 + 2 * sum of positive pair sums Gamma_t = rho_2t + rho_2t+1.
    let mut tau = -1.0;
    let mut t = 0;
    while 2 * t + 1 < n {
        let rho0 = if t == 0 { 1.0 } else { autocorr(2 * t) };
        let pair = rho0 + autocorr(2 * t + 1);
        if !(pair > 0.0) {
            break;
        }
        tau += 2.0 * pair;
        t += 1;
    }
    let s = n as f64;
    if !(tau > 0.0) {
        return Ok(s);
    }
    Ok((s / tau).min(s))
}

/// Pearson correlation of two columns; `None` when either is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    if !(sa > 0.0 && sb > 0.0) || a.len() != b.len() {
        return None;
    }
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    Some((cov / (sa * sb)).clamp(-1.0, 1.0))
}

/// Correlations between the requested column pairs; degenerate columns give `None`.
pub fn posterior_correlations(chain: &Chain, pairs: &[(usize, usize)]) -> Result<Vec<Option<f64>>> {
    if chain.len() < MIN_ESS_DRAWS {
        return Err(Error::Validation(format!(
            "posterior correlations need at least {MIN_ESS_DRAWS} draws, got {}",
            chain.len()
        )));
    }
    let d = chain.dim();
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= d || j >= d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: i.max(j) + 1,
                });
            }
            Ok(correlation(&chain.column(i), &chain.column(j)))
        })
        .collect()
}

/// All pairs `(i, j)` with `i < j` over `d` parameters.
pub fn all_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect()
}

/// Experimental condition a report describes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub structure: Option<String>,
    pub replicate: Option<usize>,
}

impl Condition {
    pub fn label(&self) -> String {
        let mut s = format!("n{}_p{}_m{}", self.n, self.p, self.m);
        if let Some(st) = &self.structure {
            s = format!("{st}_{s}");
        }
        if let Some(r) = self.replicate {
            s = format!("{s}_r{r}");
        }
        s
    }
}

/// Per-parameter metrics. Values that could not be computed are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub eta: Option<f64>,
    pub log_bf: Option<f64>,
    pub log_bf_floored: bool,
    pub sd_ratio: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub seed: u64,
    pub draws: usize,
    pub wall_time_seconds: Option<f64>,
    pub acceptance_rate: f64,
    pub parameters: Vec<ParamMetrics>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub condition: Condition,
    pub prior: PriorSpec,
    pub exact: MethodReport,
    pub methods: Vec<MethodReport>,
    pub footnotes: Vec<String>,
}

/// One row of the long-format table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub condition: String,
    pub method: String,
    pub parameter: String,
    pub metric: String,
    pub value: f64,
}

fn method_report(chain: &Chain, exact: Option<&Chain>, spec: &ModelSpec, prior: &PriorSpec) -> Result<MethodReport> {
    let names = spec.param_names();
    let means = chain.mean();
    let sds = chain.sd();
    let mut warnings = chain.warnings.clone();
    let mut parameters = Vec::with_capacity(spec.dim());
    for k in 0..spec.dim() {
        let col = chain.column(k);
        let reference = exact.map(|e| e.column(k));
        let mut note = |what: &str, e: Error| warnings.push(format!("{}: {what}: {e}", names[k]));
        let eta = match &reference {
            Some(r) => overlap_index(&col, r).map_err(|e| note("overlap", e)).ok(),
            None => None,
        };
        let ratio = match &reference {
            Some(r) => sd_ratio(&col, r).map_err(|e| note("sd ratio", e)).ok(),
            None => None,
        };
        let sdr = savage_dickey(&col, prior.sd(spec, k))
            .map_err(|e| note("savage-dickey", e))
            .ok();
        let ess_k = ess(&col).map_err(|e| note("ess", e)).ok();
        parameters.push(ParamMetrics {
            parameter: names[k].clone(),
            mean: means[k],
            sd: sds[k],
            eta,
            log_bf: sdr.map(|s| s.log_bayes_factor),
            log_bf_floored: sdr.is_some_and(|s| s.floored),
            sd_ratio: ratio,
            ess: ess_k,
        });
    }
    Ok(MethodReport {
        method: chain.method,
        seed: chain.seed,
        draws: chain.len(),
        wall_time_seconds: chain.wall_time_seconds,
        acceptance_rate: chain.acceptance_rate(),
        parameters,
        warnings,
    })
}

/// Builds the per-parameter comparison of every chain against `exact`.
pub fn build_report(
    chains: &[Chain],
    exact: &Chain,
    spec: &ModelSpec,
    prior: &PriorSpec,
    condition: Condition,
) -> Result<MetricsReport> {
    for c in chains.iter().chain(core::iter::once(exact)) {
        if c.dim() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                found: c.dim(),
            });
        }
    }
    let exact_report = method_report(exact, None, spec, prior)?;
    let methods = chains
        .iter()
        .map(|c| method_report(c, Some(exact), spec, prior))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        condition,
        prior: *prior,
        exact: exact_report,
        methods,
        footnotes: vec![NUISANCE_PRIOR_NOTE.to_string()],
    })
}

impl MetricsReport {
    /// Long format: one row per (method, parameter, metric). Missing values are skipped.
    pub fn long_rows(&self) -> Vec<LongRow> {
        let cond = self.condition.label();
        let mut rows = Vec::new();
        for report in core::iter::once(&self.exact).chain(&self.methods) {
            let method = report.method.as_str().to_string();
            let mut push = |parameter: &str, metric: &str, value: Option<f64>| {
                if let Some(value) = value {
                    rows.push(LongRow {
                        condition: cond.clone(),
                        method: method.clone(),
                        parameter: parameter.to_string(),
                        metric: metric.to_string(),
                        value,
                    });
                }
            };
            push("", "acceptance_rate", Some(report.acceptance_rate));
            push("", "wall_time_seconds", report.wall_time_seconds);
            for pm in &report.parameters {
                push(&pm.parameter, "mean", Some(pm.mean));
                push(&pm.parameter, "sd", Some(pm.sd));
                push(&pm.parameter, "eta", pm.eta);
                push(&pm.parameter, "log_bf", pm.log_bf);
                push(&pm.parameter, "sd_ratio", pm.sd_ratio);
                push(&pm.parameter, "ess", pm.ess);
            }
        }
        rows
    }

    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == method)
    }
}
