//! The ordinal Markov random field: parameter layout, data, sufficient
//! statistics, and the full, pseudo and empirical likelihoods.
//!
//! Each variable takes values in `0..=m`. Category 0 is the baseline and carries
//! no threshold, so a parameter vector holds `p*m` thresholds `mu[i][h]`
//! (variable-major, `h = 1..=m`) followed by the `p(p-1)/2` interactions
//! `theta[i][j]`, `i < j`, in row-major order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Default cap on the number of states enumerated for the exact partition function.
pub const DEFAULT_ENUM_CAP: u64 = 1 << 24;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    p: usize,
    m: usize,
    #[serde(default = "default_enum_cap")]
    enum_cap: u64,
}

fn default_enum_cap() -> u64 {
    DEFAULT_ENUM_CAP
}

/// What a coordinate of the parameter vector means.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Threshold { variable: usize, category: usize },
    Interaction { i: usize, j: usize },
}

impl ParamRole {
    pub fn is_interaction(&self) -> bool {
        matches!(self, ParamRole::Interaction { .. })
    }
}

impl ModelSpec {
    pub fn new(p: usize, m: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Validation("model needs at least one variable".into()));
        }
        if m == 0 || m > 254 {
            return Err(Error::Validation(format!(
                "number of non-baseline categories must be in 1..=254, got {m}"
            )));
        }
        Ok(Self {
            p,
            m,
            enum_cap: DEFAULT_ENUM_CAP,
        })
    }

    pub fn with_enum_cap(mut self, cap: u64) -> Self {
        self.enum_cap = cap;
        self
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn enum_cap(&self) -> u64 {
        self.enum_cap
    }

    /// Length of the parameter vector, `p*m + p(p-1)/2`.
    pub fn dim(&self) -> usize {
        self.n_thresholds() + self.n_interactions()
    }

    pub fn n_thresholds(&self) -> usize {
        self.p * self.m
    }

    pub fn n_interactions(&self) -> usize {
        self.p * (self.p - 1) / 2
    }

    /// Index of `mu[i][h]`, `h` in `1..=m`.
    #[inline]
    pub fn threshold_index(&self, i: usize, h: usize) -> usize {
        debug_assert!(i < self.p && h >= 1 && h <= self.m);
        i * self.m + (h - 1)
    }

    /// Index of `theta[i][j]`; the order of `i` and `j` does not matter.
    #[inline]
    pub fn interaction_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j && i < self.p && j < self.p);
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.n_thresholds() + a * self.p - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn role(&self, index: usize) -> ParamRole {
        assert!(index < self.dim(), "parameter index out of range");
        if index < self.n_thresholds() {
            return ParamRole::Threshold {
                variable: index / self.m,
                category: index % self.m + 1,
            };
        }
        let mut k = index - self.n_thresholds();
        for i in 0..self.p {
            let row = self.p - i - 1;
            if k < row {
                return ParamRole::Interaction { i, j: i + 1 + k };
            }
            k -= row;
        }
        unreachable!()
    }

    /// Column name used in chain files, 1-based: `mu_2_1`, `theta_1_3`.
    pub fn param_name(&self, index: usize) -> String {
        match self.role(index) {
            ParamRole::Threshold { variable, category } => {
                format!("mu_{}_{}", variable + 1, category)
            }
            ParamRole::Interaction { i, j } => format!("theta_{}_{}", i + 1, j + 1),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|k| self.param_name(k)).collect()
    }

    /// Indices of all interaction coordinates.
    pub fn interaction_indices(&self) -> core::ops::Range<usize> {
        self.n_thresholds()..self.dim()
    }

    /// `(m+1)^p`, saturating.
    pub fn state_count(&self) -> u128 {
        let base = (self.m + 1) as u128;
        let mut total: u128 = 1;
        for _ in 0..self.p {
            total = total.saturating_mul(base);
        }
        total
    }

    /// Errors with [`Error::Capacity`] unless the state space is strictly
    /// smaller than the enumeration cap.
    pub fn check_enumerable(&self) -> Result<u64> {
        let states = self.state_count();
        if states >= self.enum_cap as u128 {
            return Err(Error::Capacity {
                states,
                cap: self.enum_cap,
            });
        }
        Ok(states as u64)
    }

    pub fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        if let Some(k) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "parameter {} is not finite",
                self.param_name(k)
            )));
        }
        Ok(())
    }
}

/// Thresholds followed by interactions, laid out as described in [`ModelSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self(vec![0.0; spec.dim()])
    }

    pub fn threshold(&self, spec: &ModelSpec, i: usize, h: usize) -> f64 {
        self.0[spec.threshold_index(i, h)]
    }

    pub fn interaction(&self, spec: &ModelSpec, i: usize, j: usize) -> f64 {
        self.0[spec.interaction_index(i, j)]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// An `n x p` matrix of category codes, validated against its [`ModelSpec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    spec: ModelSpec,
    n: usize,
    values: Vec<u8>,
}

impl Dataset {
    /// Builds a dataset from a row-major buffer of length `n*p`.
    pub fn new(spec: ModelSpec, values: Vec<u8>) -> Result<Self> {
        let p = spec.p();
        if values.is_empty() || !values.len().is_multiple_of(p) {
            return Err(Error::Validation(format!(
                "data buffer of length {} is not a nonempty multiple of p = {p}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|&v| v as usize > spec.m()) {
            return Err(Error::CategoryOutOfBounds {
                row: k / p,
                column: k % p,
                value: values[k] as u32,
                max: spec.m(),
            });
        }
        Ok(Self {
            spec,
            n: values.len() / p,
            values,
        })
    }

    pub fn from_rows<R: AsRef<[u32]>>(spec: ModelSpec, rows: &[R]) -> Result<Self> {
        let p = spec.p();
        let mut values = Vec::with_capacity(rows.len() * p);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != p {
                return Err(Error::Validation(format!(
                    "row {r} has {} columns, expected {p}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if v as usize > spec.m() {
                    return Err(Error::CategoryOutOfBounds {
                        row: r,
                        column: c,
                        value: v,
                        max: spec.m(),
                    });
                }
                values.push(v as u8);
            }
        }
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.spec.p()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u8] {
        let p = self.spec.p();
        &self.values[r * p..(r + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.values.chunks_exact(self.spec.p())
    }

    /// Submatrix with the given rows (repeats allowed) and columns, in order.
    pub fn select(&self, rows: &[usize], columns: &[usize]) -> Result<Dataset> {
        let spec = ModelSpec::new(columns.len(), self.spec.m())?.with_enum_cap(self.spec.enum_cap());
        if let Some(&c) = columns.iter().find(|&&c| c >= self.p()) {
            return Err(Error::Validation(format!("column {c} out of range")));
        }
        let mut values = Vec::with_capacity(rows.len() * columns.len());
        for &r in rows {
            if r >= self.n {
                return Err(Error::Validation(format!("row {r} out of range")));
            }
            let row = self.row(r);
            values.extend(columns.iter().map(|&c| row[c]));
        }
        Dataset::new(spec, values)
    }

    /// Re-labels the dataset under another spec with the same `p` and a
    /// category bound at least as large as every observed value.
    pub fn with_spec(&self, spec: ModelSpec) -> Result<Dataset> {
        if spec.p() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: spec.p(),
                found: self.p(),
            });
        }
        Dataset::new(spec, self.values.clone())
    }

    /// Distinct rows with their multiplicities.
    pub fn patterns(&self) -> Patterns {
        Patterns::from_dataset(self)
    }
}

/// Distinct rows of a dataset and their counts, in lexicographic order.
#[derive(Clone, Debug)]
pub struct Patterns {
    p: usize,
    rows: Vec<u8>,
    counts: Vec<f64>,
    row_pattern: Vec<usize>,
}

impl Patterns {
    fn from_dataset(data: &Dataset) -> Self {
        let mut map: BTreeMap<&[u8], usize> = BTreeMap::new();
        for row in data.rows() {
            *map.entry(row).or_insert(0) += 1;
        }
        let index: BTreeMap<&[u8], usize> = map.keys().enumerate().map(|(k, r)| (*r, k)).collect();
        let mut rows = Vec::with_capacity(map.len() * data.p());
        let mut counts = Vec::with_capacity(map.len());
        for (r, c) in &map {
            rows.extend_from_slice(r);
            counts.push(*c as f64);
        }
        let row_pattern = data.rows().map(|r| index[r]).collect();
        Self {
            p: data.p(),
            rows,
            counts,
            row_pattern,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn row(&self, k: usize) -> &[u8] {
        &self.rows[k * self.p..(k + 1) * self.p]
    }

    pub fn count(&self, k: usize) -> f64 {
        self.counts[k]
    }

    /// Pattern index of each original data row.
    pub fn row_pattern(&self) -> &[usize] {
        &self.row_pattern
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Full,
    /// Pseudo-likelihood statistics: cross products are doubled.
    Pseudo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    pub values: Vec<f64>,
    pub kind: StatKind,
}

/// Adds `weight * s(x)` to `out`.
#[inline]
pub fn accumulate_state_stats(spec: &ModelSpec, x: &[u8], weight: f64, out: &mut [f64]) {
    let p = spec.p();
    for i in 0..p {
        let xi = x[i] as usize;
        if xi > 0 {
            out[spec.threshold_index(i, xi)] += weight;
        }
    }
    let mut k = spec.n_thresholds();
    for i in 0..p {
        let xi = x[i] as f64;
        for j in (i + 1)..p {
            out[k] += weight * xi * x[j] as f64;
            k += 1;
        }
    }
}

/// `s(x)` for a single state.
pub fn state_stats(spec: &ModelSpec, x: &[u8]) -> Vec<f64> {
    let mut s = vec![0.0; spec.dim()];
    accumulate_state_stats(spec, x, 1.0, &mut s);
    s
}

/// `s(x)'theta` for a single state.
#[inline]
pub fn state_energy(spec: &ModelSpec, theta: &[f64], x: &[u8]) -> f64 {
    let p = spec.p();
    let mut e = 0.0;
    for i in 0..p {
        let xi = x[i] as usize;
        if xi > 0 {
            e += theta[spec.threshold_index(i, xi)];
        }
    }
    let mut k = spec.n_thresholds();
    for i in 0..p {
        let xi = x[i] as f64;
        for j in (i + 1)..p {
            e += theta[k] * xi * x[j] as f64;
            k += 1;
        }
    }
    e
}

pub fn sufficient_statistics(data: &Dataset, kind: StatKind) -> SuffStats {
    let spec = data.spec();
    let mut values = vec![0.0; spec.dim()];
    for row in data.rows() {
        accumulate_state_stats(spec, row, 1.0, &mut values);
    }
    if kind == StatKind::Pseudo {
        for v in &mut values[spec.n_thresholds()..] {
            *v *= 2.0;
        }
    }
    SuffStats { values, kind }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Iterates over all `(m+1)^p` states in mixed-radix order.
struct StateIter {
    state: Vec<u8>,
    m: u8,
    done: bool,
}

impl StateIter {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            state: vec![0; spec.p()],
            m: spec.m() as u8,
            done: false,
        }
    }

    fn advance(&mut self) -> Option<&[u8]> {
        if self.done {
            return None;
        }
        Some(&self.state)
    }

    fn step(&mut self) {
        for v in self.state.iter_mut() {
            if *v < self.m {
                *v += 1;
                return;
            }
            *v = 0;
        }
        self.done = true;
    }
}

fn for_each_state(spec: &ModelSpec, mut f: impl FnMut(&[u8])) {
    let mut it = StateIter::new(spec);
    while let Some(x) = it.advance() {
        f(x);
        it.step();
    }
}

/// `log Z(theta) = log sum_x exp{s(x)'theta}` by exhaustive enumeration.
pub fn log_partition_exact(theta: &[f64], spec: &ModelSpec) -> Result<f64> {
    spec.check_params(theta)?;
    spec.check_enumerable()?;
    let mut max = f64::NEG_INFINITY;
    for_each_state(spec, |x| max = max.max(state_energy(spec, theta, x)));
    let mut sum = 0.0;
    for_each_state(spec, |x| sum += (state_energy(spec, theta, x) - max).exp());
    Ok(max + sum.ln())
}

/// Log-normalizer and first two moments of `s(x)` under a finite support.
#[derive(Clone, Debug)]
pub struct StatMoments {
    pub log_z: f64,
    pub mean: Vec<f64>,
    /// Present when second moments were requested.
    pub cov: Option<Matrix>,
}

fn moments_over(spec: &ModelSpec, theta: &[f64], with_cov: bool, visit: impl Fn(&mut dyn FnMut(&[u8]))) -> StatMoments {
    let d = spec.dim();
    let mut max = f64::NEG_INFINITY;
    visit(&mut |x| max = max.max(state_energy(spec, theta, x)));
    let mut total = 0.0;
    let mut mean = vec![0.0; d];
    let mut second = if with_cov { Some(Matrix::zeros(d, d)) } else { None };
    let mut s = vec![0.0; d];
    visit(&mut |x| {
        let w = (state_energy(spec, theta, x) - max).exp();
        total += w;
        s.iter_mut().for_each(|v| *v = 0.0);
        accumulate_state_stats(spec, x, 1.0, &mut s);
        let nz: Vec<usize> = (0..d).filter(|&k| s[k] != 0.0).collect();
        for &a in &nz {
            mean[a] += w * s[a];
        }
        if let Some(sec) = second.as_mut() {
            for &a in &nz {
                let wa = w * s[a];
                for &b in &nz {
                    sec[(a, b)] += wa * s[b];
                }
            }
        }
    });
    mean.iter_mut().for_each(|v| *v /= total);
    let cov = second.map(|mut sec| {
        for a in 0..d {
            for b in 0..d {
                sec[(a, b)] = sec[(a, b)] / total - mean[a] * mean[b];
            }
        }
        sec
    });
    StatMoments {
        log_z: max + total.ln(),
        mean,
        cov,
    }
}

/// Moments of `s(x)` under the model, by enumeration of all states.
pub fn exact_moments(theta: &[f64], spec: &ModelSpec, with_cov: bool) -> Result<StatMoments> {
    spec.check_params(theta)?;
    spec.check_enumerable()?;
    Ok(moments_over(spec, theta, with_cov, |f| for_each_state(spec, |x| f(x))))
}

/// Normal prior, independent per coordinate, zero mean, one sd per role.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default = "default_sd_threshold")]
    pub sd_threshold: f64,
    #[serde(default = "default_sd_interaction")]
    pub sd_interaction: f64,
}

fn default_sd_threshold() -> f64 {
    5.0
}

fn default_sd_interaction() -> f64 {
    2.5
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            sd_threshold: default_sd_threshold(),
            sd_interaction: default_sd_interaction(),
        }
    }
}

/// Log-prior value, gradient and (constant) diagonal curvature.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorEval {
    pub log_density: f64,
    pub gradient: Vec<f64>,
    pub curvature: Vec<f64>,
}

impl PriorSpec {
    pub fn new(sd_threshold: f64, sd_interaction: f64) -> Result<Self> {
        let prior = Self {
            sd_threshold,
            sd_interaction,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sd_threshold", self.sd_threshold),
            ("sd_interaction", self.sd_interaction),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Standard deviation for coordinate `index`.
    pub fn sd(&self, spec: &ModelSpec, index: usize) -> f64 {
        if index < spec.n_thresholds() {
            self.sd_threshold
        } else {
            self.sd_interaction
        }
    }

    pub fn log_density(&self, spec: &ModelSpec, theta: &[f64]) -> f64 {
        theta
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let sd = self.sd(spec, k);
                -0.5 * (t / sd) * (t / sd) - sd.ln() - 0.5 * LN_2PI
            })
            .sum()
    }

    /// Adds the prior gradient into `grad`.
    pub fn add_gradient(&self, spec: &ModelSpec, theta: &[f64], grad: &mut [f64]) {
        for (k, g) in grad.iter_mut().enumerate() {
            let sd = self.sd(spec, k);
            *g -= theta[k] / (sd * sd);
        }
    }

    /// Diagonal of the log-prior Hessian, `-1/sd^2`.
    pub fn curvature(&self, spec: &ModelSpec) -> Vec<f64> {
        (0..spec.dim())
            .map(|k| {
                let sd = self.sd(spec, k);
                -1.0 / (sd * sd)
            })
            .collect()
    }

    /// Normal density of coordinate `index` at zero.
    pub fn density_at_zero(&self, spec: &ModelSpec, index: usize) -> f64 {
        let sd = self.sd(spec, index);
        (-(sd.ln()) - 0.5 * LN_2PI).exp()
    }
}

pub fn prior_eval(theta: &[f64], spec: &ModelSpec, prior: &PriorSpec) -> Result<PriorEval> {
    prior.validate()?;
    spec.check_params(theta)?;
    let mut gradient = vec![0.0; spec.dim()];
    prior.add_gradient(spec, theta, &mut gradient);
    Ok(PriorEval {
        log_density: prior.log_density(spec, theta),
        gradient,
        curvature: prior.curvature(spec),
    })
}

/// Full likelihood evaluator: `s(X)'theta - n log Z(theta)`.
#[derive(Clone, Debug)]
pub struct FullLikelihood {
    spec: ModelSpec,
    n: f64,
    stats: Vec<f64>,
}

impl FullLikelihood {
    pub fn new(data: &Dataset) -> Result<Self> {
        data.spec().check_enumerable()?;
        Ok(Self {
            spec: *data.spec(),
            n: data.n() as f64,
            stats: sufficient_statistics(data, StatKind::Full).values,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn stats(&self) -> &[f64] {
        &self.stats
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let log_z = log_partition_exact(theta, &self.spec)?;
        Ok(dot(&self.stats, theta) - self.n * log_z)
    }

    /// Value, gradient and optionally the negative Hessian `n Cov[s]`.
    pub fn evaluate(&self, theta: &[f64], with_information: bool) -> Result<(f64, Vec<f64>, Option<Matrix>)> {
        let mom = exact_moments(theta, &self.spec, with_information)?;
        let value = dot(&self.stats, theta) - self.n * mom.log_z;
        let grad = self.stats.iter().zip(&mom.mean).map(|(s, e)| s - self.n * e).collect();
        Ok((value, grad, mom.cov.map(|c| c * self.n)))
    }
}

pub fn full_log_likelihood(data: &Dataset, theta: &[f64], prior: Option<&PriorSpec>) -> Result<f64> {
    let spec = data.spec();
    spec.check_params(theta)?;
    let ll = FullLikelihood::new(data)?.log_likelihood(theta)?;
    Ok(ll + prior_term(spec, theta, prior)?)
}

/// Exact gradient `s(X) - n E_theta[s]` of the full log-likelihood.
pub fn full_gradient(data: &Dataset, theta: &[f64]) -> Result<Vec<f64>> {
    data.spec().check_params(theta)?;
    Ok(FullLikelihood::new(data)?.evaluate(theta, false)?.1)
}

fn prior_term(spec: &ModelSpec, theta: &[f64], prior: Option<&PriorSpec>) -> Result<f64> {
    match prior {
        Some(p) => {
            p.validate()?;
            Ok(p.log_density(spec, theta))
        }
        None => Ok(0.0),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense symmetric `p x p` interaction matrix with zero diagonal.
pub(crate) fn interaction_matrix(spec: &ModelSpec, theta: &[f64]) -> Vec<f64> {
    let p = spec.p();
    let mut w = vec![0.0; p * p];
    let mut k = spec.n_thresholds();
    for i in 0..p {
        for j in (i + 1)..p {
            w[i * p + j] = theta[k];
            w[j * p + i] = theta[k];
            k += 1;
        }
    }
    w
}

/// Fills `probs` (length `m+1`) with the conditional distribution of a variable
/// whose threshold slice is `mu` (length `m`) and whose neighbour sum is `rest`.
/// Returns the log normalizer.
#[inline]
pub(crate) fn conditional_from_rest(mu: &[f64], rest: f64, probs: &mut [f64]) -> f64 {
    let mut max = 0.0f64;
    for (h, &t) in mu.iter().enumerate() {
        max = max.max(t + (h + 1) as f64 * rest);
    }
    let mut total = (-max).exp();
    probs[0] = total;
    for (h, &t) in mu.iter().enumerate() {
        let w = (t + (h + 1) as f64 * rest - max).exp();
        probs[h + 1] = w;
        total += w;
    }
    for v in probs.iter_mut() {
        *v /= total;
    }
    max + total.ln()
}

/// `P(X_i = h | x_{-i}, theta)` for `h = 0..=m`.
pub fn conditional_probabilities(row: &[u8], i: usize, theta: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    spec.check_params(theta)?;
    if row.len() != spec.p() || i >= spec.p() {
        return Err(Error::Validation(
            "row length or variable index does not match the model".into(),
        ));
    }
    if let Some(c) = row.iter().position(|&v| v as usize > spec.m()) {
        return Err(Error::CategoryOutOfBounds {
            row: 0,
            column: c,
            value: row[c] as u32,
            max: spec.m(),
        });
    }
    let rest: f64 = (0..spec.p())
        .filter(|&j| j != i)
        .map(|j| theta[spec.interaction_index(i, j)] * row[j] as f64)
        .sum();
    let m = spec.m();
    let mut probs = vec![0.0; m + 1];
    conditional_from_rest(&theta[i * m..(i + 1) * m], rest, &mut probs);
    Ok(probs)
}

/// Pseudo-likelihood evaluator over the distinct rows of a dataset.
#[derive(Clone, Debug)]
pub struct PseudoLikelihood {
    spec: ModelSpec,
    n: usize,
    patterns: Patterns,
}

/// Gradient, Hessian and per-pattern score rows of the pseudo log-likelihood.
#[derive(Clone, Debug)]
pub struct PseudoCurvature {
    pub gradient: Vec<f64>,
    pub hessian: Matrix,
    /// One score row per distinct data row, see [`Patterns`].
    pub pattern_scores: Matrix,
    /// `sum_nu u_nu u_nu'`.
    pub score_outer: Matrix,
}

impl PseudoLikelihood {
    pub fn new(data: &Dataset) -> Self {
        Self {
            spec: *data.spec(),
            n: data.n(),
            patterns: data.patterns(),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn patterns(&self) -> &Patterns {
        &self.patterns
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.value_and_gradient(theta, false).0
    }

    pub fn value_and_gradient(&self, theta: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let spec = &self.spec;
        let (p, m) = (spec.p(), spec.m());
        let w = interaction_matrix(spec, theta);
        let mut probs = vec![0.0; m + 1];
        let mut value = 0.0;
        let mut grad = if want_grad { vec![0.0; spec.dim()] } else { Vec::new() };
        for k in 0..self.patterns.len() {
            let x = self.patterns.row(k);
            let count = self.patterns.count(k);
            for i in 0..p {
                let rest: f64 = (0..p).map(|j| w[i * p + j] * x[j] as f64).sum();
                let mu = &theta[i * m..(i + 1) * m];
                let log_norm = conditional_from_rest(mu, rest, &mut probs);
                let xi = x[i] as usize;
                let eta = if xi > 0 { mu[xi - 1] + xi as f64 * rest } else { 0.0 };
                value += count * (eta - log_norm);
                if want_grad {
                    let mut expected = 0.0;
                    for h in 1..=m {
                        grad[spec.threshold_index(i, h)] -= count * probs[h];
                        expected += h as f64 * probs[h];
                    }
                    if xi > 0 {
                        grad[spec.threshold_index(i, xi)] += count;
                    }
                    let resid = count * (xi as f64 - expected);
                    for j in 0..p {
                        if j != i && x[j] != 0 {
                            grad[spec.interaction_index(i, j)] += resid * x[j] as f64;
                        }
                    }
                }
            }
        }
        (value, grad)
    }

    /// Gradient, Hessian and score statistics at `theta`.
    pub fn curvature(&self, theta: &[f64]) -> PseudoCurvature {
        let spec = &self.spec;
        let (p, m, d) = (spec.p(), spec.m(), spec.dim());
        let w = interaction_matrix(spec, theta);
        let npat = self.patterns.len();
        let mut probs = vec![0.0; m + 1];
        let mut hessian = Matrix::zeros(d, d);
        let mut scores = Matrix::zeros(npat, d);
        let mut idx: Vec<usize> = Vec::with_capacity(m + p);
        let mut feat_cov: Vec<f64> = Vec::new();
        for k in 0..npat {
            let x = self.patterns.row(k);
            let count = self.patterns.count(k);
            for i in 0..p {
                let rest: f64 = (0..p).map(|j| w[i * p + j] * x[j] as f64).sum();
                let mu = &theta[i * m..(i + 1) * m];
                conditional_from_rest(mu, rest, &mut probs);
                let xi = x[i] as usize;
                let mut expected = 0.0;
                let mut second = 0.0;
                for h in 1..=m {
                    expected += h as f64 * probs[h];
                    second += (h * h) as f64 * probs[h];
                }
                let var = second - expected * expected;

                // score
                for h in 1..=m {
                    let t = spec.threshold_index(i, h);
                    scores[(k, t)] += if xi == h { 1.0 } else { 0.0 } - probs[h];
                }
                for j in 0..p {
                    if j != i && x[j] != 0 {
                        scores[(k, spec.interaction_index(i, j))] += x[j] as f64 * (xi as f64 - expected);
                    }
                }

                // Hessian block: -Cov of the features touched by variable i
                idx.clear();
                for h in 1..=m {
                    idx.push(spec.threshold_index(i, h));
                }
                let nbrs: Vec<usize> = (0..p).filter(|&j| j != i && x[j] != 0).collect();
                for &j in &nbrs {
                    idx.push(spec.interaction_index(i, j));
                }
                let q = idx.len();
                feat_cov.clear();
                feat_cov.resize(q * q, 0.0);
                for a in 1..=m {
                    for b in 1..=m {
                        let delta = if a == b { probs[a] } else { 0.0 };
                        feat_cov[(a - 1) * q + (b - 1)] = delta - probs[a] * probs[b];
                    }
                    for (jj, &j) in nbrs.iter().enumerate() {
                        let c = x[j] as f64 * probs[a] * (a as f64 - expected);
                        feat_cov[(a - 1) * q + m + jj] = c;
                        feat_cov[(m + jj) * q + (a - 1)] = c;
                    }
                }
                for (ja, &ja_var) in nbrs.iter().enumerate() {
                    for (jb, &jb_var) in nbrs.iter().enumerate() {
                        feat_cov[(m + ja) * q + m + jb] = x[ja_var] as f64 * x[jb_var] as f64 * var;
                    }
                }
                for a in 0..q {
                    for b in 0..q {
                        hessian[(idx[a], idx[b])] -= count * feat_cov[a * q + b];
                    }
                }
            }
        }
        let mut gradient = vec![0.0; d];
        let mut score_outer = Matrix::zeros(d, d);
        for k in 0..npat {
            let count = self.patterns.count(k);
            let u = scores.row(k);
            for a in 0..d {
                gradient[a] += count * u[a];
                if u[a] == 0.0 {
                    continue;
                }
                let ca = count * u[a];
                for b in 0..d {
                    score_outer[(a, b)] += ca * u[b];
                }
            }
        }
        PseudoCurvature {
            gradient,
            hessian,
            pattern_scores: scores,
            score_outer,
        }
    }
}

pub fn pseudo_log_likelihood(data: &Dataset, theta: &[f64], prior: Option<&PriorSpec>) -> Result<f64> {
    let spec = data.spec();
    spec.check_params(theta)?;
    Ok(PseudoLikelihood::new(data).log_likelihood(theta) + prior_term(spec, theta, prior)?)
}

/// Gradient, Hessian and per-observation scores (`n x d`) of the pseudo log-likelihood.
pub fn pseudo_score_and_curvature(data: &Dataset, theta: &[f64]) -> Result<(Vec<f64>, Matrix, Matrix)> {
    data.spec().check_params(theta)?;
    let pl = PseudoLikelihood::new(data);
    let c = pl.curvature(theta);
    let d = data.spec().dim();
    let map = pl.patterns().row_pattern();
    let scores = Matrix::from_fn(data.n(), d, |r, a| c.pattern_scores[(map[r], a)]);
    Ok((c.gradient, c.hessian, scores))
}

/// Full-likelihood form with the partition sum restricted to the distinct observed rows.
#[derive(Clone, Debug)]
pub struct EmpiricalLikelihood {
    spec: ModelSpec,
    n: f64,
    stats: Vec<f64>,
    support: Patterns,
}

impl EmpiricalLikelihood {
    pub fn new(data: &Dataset) -> Self {
        Self {
            spec: *data.spec(),
            n: data.n() as f64,
            stats: sufficient_statistics(data, StatKind::Full).values,
            support: data.patterns(),
        }
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn moments(&self, theta: &[f64], with_cov: bool) -> StatMoments {
        let support = &self.support;
        moments_over(&self.spec, theta, with_cov, |f| {
            for k in 0..support.len() {
                f(support.row(k));
            }
        })
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let log_z = log_sum_exp((0..self.support.len()).map(|k| state_energy(&self.spec, theta, self.support.row(k))));
        dot(&self.stats, theta) - self.n * log_z
    }

    /// Value, gradient and optionally `n Cov_emp[s]`.
    pub fn evaluate(&self, theta: &[f64], with_information: bool) -> (f64, Vec<f64>, Option<Matrix>) {
        let mom = self.moments(theta, with_information);
        let value = dot(&self.stats, theta) - self.n * mom.log_z;
        let grad = self.stats.iter().zip(&mom.mean).map(|(s, e)| s - self.n * e).collect();
        (value, grad, mom.cov.map(|c| c * self.n))
    }
}

pub fn empirical_log_likelihood(data: &Dataset, theta: &[f64], prior: Option<&PriorSpec>) -> Result<f64> {
    let spec = data.spec();
    spec.check_params(theta)?;
    Ok(EmpiricalLikelihood::new(data).log_likelihood(theta) + prior_term(spec, theta, prior)?)
}
