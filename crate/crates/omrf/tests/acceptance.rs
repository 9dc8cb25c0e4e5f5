//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not listed in `KNOWN_SHORTFALLS`.

use std::time::Instant;

use omrf::bench::{quantile, run_cell, CellOutcome, CellSettings, CellSpec};
use omrf::config::RunConfig;
use omrf::source::{bundled_source, dichotomize};
use omrf_core::estimate::{map_pseudo, mple, RobbinsMonroSchedule};
use omrf_core::linalg::Matrix;
use omrf_core::metrics::{correlation, density_estimate, ess, overlap_index, savage_dickey};
use omrf_core::model::{
    log_partition_exact, pseudo_score_and_curvature, Dataset, EmpiricalLikelihood, FullLikelihood, ModelSpec,
    PriorSpec, PseudoLikelihood,
};
use omrf_core::rescale::{
    build_rescaling, curvature_bundle, ghw_standard_errors, update_rescaling, McSettings, RescaleVariant,
    RescalingMatrix,
};
use omrf_core::samplers::{sample_adacore, sample_core, sample_exact, sample_pseudo, Chain, Method, SamplerConfig};
use omrf_core::simulate::{run_simulation_plan, SimulationPlan, StructureParams, StructureType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

const SEED: u64 = 20_240_611;

const ORACLE_RTOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-5;
const FD_RTOL: f64 = 1e-6;
const FD_INSTANCES: usize = 20;
const GRID_ABS_TOL: f64 = 0.02;
const GRID_SE_MULT: f64 = 3.0;
const IDENTITY_TOL: f64 = 1e-10;
const DEFLATION_RANGE: (f64, f64) = (0.55, 0.85);
const CALIBRATED_RANGE: (f64, f64) = (0.88, 1.12);
const PSEUDO_ETA_MAX: f64 = 0.80;
const CORE_ETA_MIN: f64 = 0.85;
const ETA_WIN_SHARE: f64 = 0.80;
const LOG_BF_GAP_MAX: f64 = 1.0;
const NEAR_ZERO_MODE: f64 = 0.02;
const INFLATION_SHARE: f64 = 0.70;
const ESS_RATIO_MAX: f64 = 0.25;
const CORE_ESS_SPREAD: f64 = 0.10;
const SLOPE_RANGE: (f64, f64) = (0.8, 1.2);
const INTERCEPT_RANGE: (f64, f64) = (-0.1, 0.1);
const REFIT_SE_MULT: f64 = 3.0;
const ETA_NORMAL: (f64, f64) = (0.617, 0.02);
const SD_NORMAL: (f64, f64) = (2.0, 0.15);
const AR1_RTOL: f64 = 0.15;

/// Criteria allowed to fail without failing the run.
const KNOWN_SHORTFALLS: &[usize] = &[7, 9];

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn in_range(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

// Brute-force oracles with their own parameter indexing.

fn states(p: usize, m: usize) -> Vec<Vec<u8>> {
    let total = (m + 1).pow(p as u32);
    (0..total)
        .map(|mut code| {
            (0..p)
                .map(|_| {
                    let v = (code % (m + 1)) as u8;
                    code /= m + 1;
                    v
                })
                .collect()
        })
        .collect()
}

fn pair_offset(p: usize, m: usize, i: usize, j: usize) -> usize {
    let mut k = p * m;
    for a in 0..p {
        for b in (a + 1)..p {
            if (a, b) == (i, j) {
                return k;
            }
            k += 1;
        }
    }
    unreachable!()
}

fn energy(p: usize, m: usize, theta: &[f64], x: &[u8]) -> f64 {
    let mut e = 0.0;
    for i in 0..p {
        if x[i] > 0 {
            e += theta[i * m + x[i] as usize - 1];
        }
        for j in (i + 1)..p {
            e += theta[pair_offset(p, m, i, j)] * f64::from(x[i]) * f64::from(x[j]);
        }
    }
    e
}

fn log_sum_exp(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

fn oracle_log_z(p: usize, m: usize, theta: &[f64]) -> f64 {
    log_sum_exp(states(p, m).iter().map(|x| energy(p, m, theta, x)))
}

fn oracle_prior(p: usize, m: usize, theta: &[f64], prior: &PriorSpec) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let sd = if k < p * m {
                prior.sd_threshold
            } else {
                prior.sd_interaction
            };
            -0.5 * (t / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum()
}

fn oracle_full(p: usize, m: usize, rows: &[Vec<u8>], theta: &[f64]) -> f64 {
    let log_z = oracle_log_z(p, m, theta);
    rows.iter().map(|x| energy(p, m, theta, x) - log_z).sum()
}

fn oracle_pseudo(p: usize, m: usize, rows: &[Vec<u8>], theta: &[f64]) -> f64 {
    let mut total = 0.0;
    for x in rows {
        for i in 0..p {
            let rest: f64 = (0..p)
                .filter(|&j| j != i)
                .map(|j| {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    theta[pair_offset(p, m, a, b)] * f64::from(x[j])
                })
                .sum();
            let term = |h: usize| if h == 0 { 0.0 } else { theta[i * m + h - 1] } + h as f64 * rest;
            total += term(x[i] as usize) - log_sum_exp((0..=m).map(term));
        }
    }
    total
}

fn oracle_empirical(p: usize, m: usize, rows: &[Vec<u8>], theta: &[f64]) -> f64 {
    let mut support: Vec<Vec<u8>> = rows.to_vec();
    support.sort();
    support.dedup();
    let log_z = log_sum_exp(support.iter().map(|x| energy(p, m, theta, x)));
    rows.iter().map(|x| energy(p, m, theta, x) - log_z).sum()
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    p: usize,
    m: usize,
    n: usize,
    scale: f64,
) -> (Dataset, Vec<Vec<u8>>, Vec<f64>) {
    let spec = ModelSpec::new(p, m).unwrap();
    let rows: Vec<Vec<u8>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0..=m as u8)).collect())
        .collect();
    let as_u32: Vec<Vec<u32>> = rows.iter().map(|r| r.iter().map(|&v| u32::from(v)).collect()).collect();
    let data = Dataset::from_rows(spec, &as_u32).unwrap();
    let theta = (0..spec.dim()).map(|_| rng.random_range(-scale..scale)).collect();
    (data, rows, theta)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let prior = PriorSpec::default();
    let mut worst = 0.0f64;
    let mut checks = 0;
    for p in 1..=3 {
        for m in 1..=2 {
            for _ in 0..5 {
                let (data, rows, theta) = random_instance(&mut rng, p, m, 25, 1.5);
                let spec = *data.spec();
                let pri = oracle_prior(p, m, &theta, &prior);
                let pairs = [
                    (log_partition_exact(&theta, &spec).unwrap(), oracle_log_z(p, m, &theta)),
                    (
                        omrf_core::model::full_log_likelihood(&data, &theta, None).unwrap(),
                        oracle_full(p, m, &rows, &theta),
                    ),
                    (
                        omrf_core::model::full_log_likelihood(&data, &theta, Some(&prior)).unwrap(),
                        oracle_full(p, m, &rows, &theta) + pri,
                    ),
                    (
                        omrf_core::model::pseudo_log_likelihood(&data, &theta, None).unwrap(),
                        oracle_pseudo(p, m, &rows, &theta),
                    ),
                    (
                        omrf_core::model::pseudo_log_likelihood(&data, &theta, Some(&prior)).unwrap(),
                        oracle_pseudo(p, m, &rows, &theta) + pri,
                    ),
                    (
                        omrf_core::model::empirical_log_likelihood(&data, &theta, None).unwrap(),
                        oracle_empirical(p, m, &rows, &theta),
                    ),
                    (
                        omrf_core::model::empirical_log_likelihood(&data, &theta, Some(&prior)).unwrap(),
                        oracle_empirical(p, m, &rows, &theta) + pri,
                    ),
                ];
                for (got, want) in pairs {
                    worst = worst.max((got - want).abs() / want.abs().max(1.0));
                    checks += 1;
                }
            }
        }
    }
    Outcome {
        id: 1,
        name: "likelihoods match enumeration oracles",
        pass: worst <= ORACLE_RTOL,
        detail: format!("{checks} checks, worst relative error {worst:.2e} (tol {ORACLE_RTOL:.0e})"),
    }
}

fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[k] += FD_STEP;
            down[k] -= FD_STEP;
            (f(&up) - f(&down)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn fd_jacobian(g: impl Fn(&[f64]) -> Vec<f64>, theta: &[f64]) -> Matrix {
    let d = theta.len();
    let mut jac = Matrix::zeros(d, d);
    for k in 0..d {
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[k] += FD_STEP;
        down[k] -= FD_STEP;
        let (gu, gd) = (g(&up), g(&down));
        for r in 0..d {
            jac[(r, k)] = (gu[r] - gd[r]) / (2.0 * FD_STEP);
        }
    }
    jac
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst = 0.0f64;
    let mut worst_what = "";
    for t in 0..FD_INSTANCES {
        let p = 2 + t % 3;
        let m = 1 + (t / 3) % 2;
        let (data, _, theta) = random_instance(&mut rng, p, m, 40, 0.6);
        let full = FullLikelihood::new(&data).unwrap();
        let pseudo = PseudoLikelihood::new(&data);
        let emp = EmpiricalLikelihood::new(&data);

        let (_, g_full, info_full) = full.evaluate(&theta, true).unwrap();
        let h_full = fd_jacobian(|x| full.evaluate(x, false).unwrap().1, &theta);
        let (_, g_emp, info_emp) = emp.evaluate(&theta, true);
        let h_emp = fd_jacobian(|x| emp.evaluate(x, false).1, &theta);
        let curv = pseudo.curvature(&theta);
        let h_pseudo = fd_jacobian(|x| pseudo.value_and_gradient(x, true).1, &theta);
        let neg = |m: Option<Matrix>| -m.unwrap();

        let results = [
            (
                "full gradient",
                rel_err(&g_full, &fd_gradient(|x| full.log_likelihood(x).unwrap(), &theta)),
            ),
            (
                "full information",
                rel_err(neg(info_full).as_slice(), h_full.as_slice()),
            ),
            (
                "pseudo gradient",
                rel_err(
                    &pseudo.value_and_gradient(&theta, true).1,
                    &fd_gradient(|x| pseudo.log_likelihood(x), &theta),
                ),
            ),
            (
                "pseudo curvature gradient",
                rel_err(&curv.gradient, &fd_gradient(|x| pseudo.log_likelihood(x), &theta)),
            ),
            ("pseudo Hessian", rel_err(curv.hessian.as_slice(), h_pseudo.as_slice())),
            (
                "empirical gradient",
                rel_err(&g_emp, &fd_gradient(|x| emp.log_likelihood(x), &theta)),
            ),
            (
                "empirical information",
                rel_err(neg(info_emp).as_slice(), h_emp.as_slice()),
            ),
        ];
        for (what, e) in results {
            if e > worst {
                worst = e;
                worst_what = what;
            }
        }
    }
    Outcome {
        id: 2,
        name: "analytic derivatives match finite differences",
        pass: worst < FD_RTOL,
        detail: format!("{FD_INSTANCES} instances, worst {worst:.2e} ({worst_what}, tol {FD_RTOL:.0e})"),
    }
}

/// Posterior mean and sd of each coordinate on a regular grid.
fn grid_moments(lp: &dyn Fn(&[f64]) -> f64, centre: &[f64; 3], half: &[f64; 3], points: usize) -> ([f64; 3], [f64; 3]) {
    let axis = |k: usize, a: usize| centre[k] - half[k] + 2.0 * half[k] * a as f64 / (points - 1) as f64;
    let mut logs = Vec::with_capacity(points.pow(3));
    for a in 0..points {
        for b in 0..points {
            for c in 0..points {
                let x = [axis(0, a), axis(1, b), axis(2, c)];
                logs.push((x, lp(&x)));
            }
        }
    }
    let top = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let mut w_sum = 0.0;
    let mut s1 = [0.0; 3];
    let mut s2 = [0.0; 3];
    for (x, l) in &logs {
        let w = (l - top).exp();
        w_sum += w;
        for k in 0..3 {
            s1[k] += w * x[k];
            s2[k] += w * x[k] * x[k];
        }
    }
    let mean = s1.map(|s| s / w_sum);
    let sd = [0, 1, 2].map(|k| (s2[k] / w_sum - mean[k] * mean[k]).sqrt());
    (mean, sd)
}

fn exact_sampler_validity() -> Outcome {
    let (p, m, n) = (2, 1, 200);
    let truth = [-0.3, 0.2, 0.8];
    let all = states(p, m);
    let log_z = oracle_log_z(p, m, &truth);
    let probs: Vec<f64> = all.iter().map(|x| (energy(p, m, &truth, x) - log_z).exp()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let rows: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let mut u: f64 = rng.random();
            let mut k = 0;
            while k + 1 < probs.len() && u >= probs[k] {
                u -= probs[k];
                k += 1;
            }
            all[k].clone()
        })
        .collect();
    let as_u32: Vec<Vec<u32>> = rows.iter().map(|r| r.iter().map(|&v| u32::from(v)).collect()).collect();
    let data = Dataset::from_rows(ModelSpec::new(p, m).unwrap(), &as_u32).unwrap();
    let prior = PriorSpec::default();

    let lp = |x: &[f64]| oracle_full(p, m, &rows, x) + oracle_prior(p, m, x, &prior);
    let (coarse_mean, coarse_sd) = grid_moments(&lp, &[0.0; 3], &[6.0; 3], 81);
    let (mean, sd) = grid_moments(&lp, &coarse_mean, &coarse_sd.map(|s| 8.0 * s), 101);

    let cfg = SamplerConfig {
        iterations: 60_000,
        burn_in: 10_000,
        seed: SEED,
        ..SamplerConfig::default()
    };
    let chain = sample_exact(&data, &prior, &cfg).unwrap();
    let (cm, cs) = (chain.mean(), chain.sd());
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let e = ess(&chain.column(k)).unwrap();
        let tol_mean = GRID_ABS_TOL.max(GRID_SE_MULT * cs[k] / e.sqrt());
        let tol_sd = GRID_ABS_TOL.max(GRID_SE_MULT * cs[k] / (2.0 * e).sqrt());
        let (dm, ds) = ((cm[k] - mean[k]).abs(), (cs[k] - sd[k]).abs());
        pass &= dm <= tol_mean && ds <= tol_sd;
        parts.push(format!("|dmean| {dm:.3}/{tol_mean:.3} |dsd| {ds:.3}/{tol_sd:.3}"));
    }
    Outcome {
        id: 3,
        name: "exact sampler matches grid quadrature",
        pass,
        detail: parts.join("; "),
    }
}

fn outer(f: &Matrix) -> Matrix {
    f * f.transpose()
}

/// `max |A Sigma_pseudo A' - Gamma Gamma'|` with `Sigma_pseudo` inverted densely at `point`.
fn identity_gap(data: &Dataset, prior: &PriorSpec, r: &RescalingMatrix, point: &[f64]) -> f64 {
    let (_, hessian, _) = pseudo_score_and_curvature(data, point).unwrap();
    let mut precision = -hessian;
    for (k, c) in prior.curvature(data.spec()).into_iter().enumerate() {
        precision[(k, k)] -= c;
    }
    let sigma = precision.try_inverse().expect("pseudo precision is invertible");
    (&r.a * sigma * r.a.transpose() - outer(&r.gamma_factor)).amax()
}

fn rescaling_identity() -> Outcome {
    let prior = PriorSpec::default();
    let source = bundled_source(None).unwrap();
    let rows: Vec<usize> = (0..400).collect();
    let datasets = [
        dichotomize(&source, 2)
            .unwrap()
            .select(&rows[..300], &[0, 1, 2, 3])
            .unwrap(),
        source.select(&rows, &[0, 1, 2]).unwrap(),
    ];
    let mc = McSettings {
        samples: 20_000,
        seed: SEED,
        schedule: RobbinsMonroSchedule::default(),
    };
    let mut worst = 0.0f64;
    let mut built = 0;
    let mut bitwise = true;
    for data in &datasets {
        let star = map_pseudo(data, &prior).unwrap().theta_star;
        for variant in [RescaleVariant::Ghw, RescaleVariant::Mch, RescaleVariant::Rm] {
            let r = build_rescaling(data, &star, Some(&prior), variant, Some(&mc)).unwrap();
            let point = if variant == RescaleVariant::Ghw {
                &r.target_point
            } else {
                &star
            };
            worst = worst.max(identity_gap(data, &prior, &r, point));
            built += 1;
        }
        let shifted: Vec<f64> = star.0.iter().map(|v| v + 0.05).collect();
        let r = update_rescaling(&shifted, &star, data, Some(&prior)).unwrap();
        worst = worst.max(identity_gap(data, &prior, &r, &shifted));
        built += 1;

        let cfg = SamplerConfig {
            iterations: 4_000,
            burn_in: 1_000,
            seed: SEED,
            ..SamplerConfig::default()
        };
        let ada = sample_adacore(data, &prior, &cfg).unwrap();
        let r = ada.rescaling.clone().unwrap().into_matrix().unwrap();
        worst = worst.max(identity_gap(data, &prior, &r, &r.target_point.0.clone()));
        built += 1;

        let pseudo = sample_pseudo(data, &prior, &cfg).unwrap();
        let core = sample_core(data, &prior, &RescalingMatrix::identity(star.clone()), &cfg).unwrap();
        let same_bits = pseudo
            .draws
            .iter()
            .zip(core.draws.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        bitwise &= same_bits && pseudo.draws.shape() == core.draws.shape() && pseudo.accept_trace == core.accept_trace;
    }
    Outcome {
        id: 4,
        name: "rescaling identity and identity-map reproduction",
        pass: worst < IDENTITY_TOL && bitwise,
        detail: format!(
            "{built} matrices, worst gap {worst:.2e} (tol {IDENTITY_TOL:.0e}); identity map bitwise equal: {bitwise}"
        ),
    }
}

fn desk_settings(methods: Vec<Method>, inner: Option<usize>) -> CellSettings {
    let mut cfg = RunConfig::default().normalized(Some(SEED), None).unwrap();
    if let Some(k) = inner {
        cfg.mc_samples.inner = k;
        cfg = cfg.normalized(None, None).unwrap();
    }
    let mut settings = CellSettings::from_config(&cfg);
    settings.methods = methods;
    settings
}

fn run_cells(cells: Vec<CellSpec>, settings: &CellSettings) -> Vec<CellOutcome> {
    let source = dichotomize(&bundled_source(None).unwrap(), 2).unwrap();
    cells
        .into_par_iter()
        .map(|c| run_cell(c, &source, settings).unwrap_or_else(|e| panic!("cell {} failed: {e}", c.id())))
        .collect()
}

fn report(o: &CellOutcome, method: Method) -> &omrf_core::metrics::MethodReport {
    o.report.method(method).expect("method was run")
}

fn chain(o: &CellOutcome, method: Method) -> &Chain {
    o.chains.iter().find(|c| c.method == method).expect("method was run")
}

fn sd_ratios(cells: &[CellOutcome], method: Method, absent_only: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for o in cells {
        let rep = report(o, method);
        for (k, pm) in rep.parameters.iter().enumerate() {
            if !absent_only || o.truth.absent.contains(&k) {
                out.extend(pm.sd_ratio);
            }
        }
    }
    out
}

fn variance_deflation(cells: &[CellOutcome]) -> Outcome {
    let r = sd_ratios(cells, Method::Pseudo, true);
    let med = median(&r);
    Outcome {
        id: 5,
        name: "pseudo posterior is deflated on absent edges",
        pass: in_range(med, DEFLATION_RANGE),
        detail: format!(
            "median sd ratio {med:.3} over {} absent-edge cells, want {DEFLATION_RANGE:?}",
            r.len()
        ),
    }
}

fn calibrated_spread(cells: &[CellOutcome]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [Method::Core, Method::Adacore, Method::PhGhw] {
        let med = median(&sd_ratios(cells, m, true));
        let all = median(&sd_ratios(cells, m, false));
        pass &= in_range(med, CALIBRATED_RANGE);
        parts.push(format!("{m} {med:.3} (all parameters {all:.3})"));
    }
    Outcome {
        id: 6,
        name: "calibrated methods recover posterior spread",
        pass,
        detail: format!(
            "median sd ratio on absent edges: {}; want {CALIBRATED_RANGE:?}",
            parts.join(", ")
        ),
    }
}

fn overlap_ordering(cells: &[CellOutcome]) -> Outcome {
    let (mut pseudo, mut core, mut wins, mut total) = (Vec::new(), Vec::new(), 0usize, 0usize);
    let mut pseudo_interactions = Vec::new();
    for o in cells {
        let (p, c) = (report(o, Method::Pseudo), report(o, Method::Core));
        let first_interaction = o.data.spec().n_thresholds();
        for (k, (a, b)) in p.parameters.iter().zip(&c.parameters).enumerate() {
            if let (Some(ep), Some(ec)) = (a.eta, b.eta) {
                if k >= first_interaction {
                    pseudo_interactions.push(ep);
                }
                pseudo.push(ep);
                core.push(ec);
                total += 1;
                wins += usize::from(ec > ep);
            }
        }
    }
    let (mp, mc) = (median(&pseudo), median(&core));
    let share = wins as f64 / total.max(1) as f64;
    Outcome {
        id: 7,
        name: "overlap with the exact posterior improves under rescaling",
        pass: mp <= PSEUDO_ETA_MAX && mc >= CORE_ETA_MIN && share >= ETA_WIN_SHARE,
        detail: format!(
            "median eta pseudo {mp:.3} (<= {PSEUDO_ETA_MAX}; interactions only {:.3}), core {mc:.3} (>= {CORE_ETA_MIN}); core wins {share:.2} of {total} (>= {ETA_WIN_SHARE})",
            median(&pseudo_interactions)
        ),
    }
}

fn kde_mode(x: &[f64]) -> f64 {
    let d = density_estimate(x).unwrap();
    let k = (0..d.heights.len())
        .max_by(|&a, &b| d.heights[a].total_cmp(&d.heights[b]))
        .unwrap();
    d.grid[k]
}

fn savage_dickey_alignment(cells: &[CellOutcome]) -> Outcome {
    let (mut gaps, mut near, mut inflated) = (Vec::new(), 0usize, 0usize);
    for o in cells {
        let (ex, ps, co) = (&o.report.exact, report(o, Method::Pseudo), report(o, Method::Core));
        for &k in &o.truth.absent {
            let (Some(le), Some(lp), Some(lc)) = (
                ex.parameters[k].log_bf,
                ps.parameters[k].log_bf,
                co.parameters[k].log_bf,
            ) else {
                continue;
            };
            gaps.push((lc - le).abs());
            if kde_mode(&o.exact.column(k)).abs() <= NEAR_ZERO_MODE {
                near += 1;
                inflated += usize::from(lp > le);
            }
        }
    }
    let gap = median(&gaps);
    let share = inflated as f64 / near.max(1) as f64;
    Outcome {
        id: 8,
        name: "Savage-Dickey ratios align with the exact posterior",
        pass: gap <= LOG_BF_GAP_MAX && near > 0 && share >= INFLATION_SHARE,
        detail: format!(
            "median |log BF core - exact| {gap:.3} (<= {LOG_BF_GAP_MAX}); pseudo inflated in {inflated}/{near} near-zero cells ({share:.2}, >= {INFLATION_SHARE})"
        ),
    }
}

fn correlation_regression(cells: &[CellOutcome]) -> Outcome {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for o in cells {
        let core = chain(o, Method::Core);
        let d = core.dim();
        for a in 0..d {
            for b in (a + 1)..d {
                if let (Some(x), Some(y)) = (
                    correlation(&o.exact.column(a), &o.exact.column(b)),
                    correlation(&core.column(a), &core.column(b)),
                ) {
                    xs.push(x);
                    ys.push(y);
                }
            }
        }
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Outcome {
        id: 10,
        name: "rescaled posterior correlations track the exact ones",
        pass: in_range(slope, SLOPE_RANGE) && in_range(intercept, INTERCEPT_RANGE),
        detail: format!(
            "slope {slope:.3} {SLOPE_RANGE:?}, intercept {intercept:.3} {INTERCEPT_RANGE:?} over {} pairs",
            xs.len()
        ),
    }
}

fn ess_ordering() -> Outcome {
    let settings = desk_settings(vec![Method::Core, Method::Dmh, Method::Adadmh], Some(2_000));
    let sizes = [250, 500, 1000];
    let cells: Vec<CellSpec> = sizes
        .iter()
        .flat_map(|&n| {
            (0..3).map(move |replicate| CellSpec {
                structure: StructureType::Random,
                p: 4,
                n,
                replicate,
            })
        })
        .collect();
    let out = run_cells(cells, &settings);
    let med_ess = |n: usize, m: Method| {
        let v: Vec<f64> = out
            .iter()
            .filter(|o| o.cell.n == n)
            .flat_map(|o| {
                report(o, m)
                    .parameters
                    .iter()
                    .filter_map(|pm| pm.ess)
                    .collect::<Vec<_>>()
            })
            .collect();
        median(&v)
    };
    let dmh: Vec<f64> = sizes.iter().map(|&n| med_ess(n, Method::Dmh)).collect();
    let core: Vec<f64> = sizes.iter().map(|&n| med_ess(n, Method::Core)).collect();
    let ada = med_ess(500, Method::Adadmh);
    let ratio = ada / core[1];
    let decreasing = dmh.windows(2).all(|w| w[1] < w[0]);
    let core_mid = median(&core);
    let spread = core.iter().map(|c| (c - core_mid).abs() / core_mid).fold(0.0, f64::max);
    Outcome {
        id: 9,
        name: "effective sample sizes order as expected",
        pass: ratio < ESS_RATIO_MAX && decreasing && spread < CORE_ESS_SPREAD,
        detail: format!(
            "AdaDMH/CoRe at n=500 {ratio:.3} (< {ESS_RATIO_MAX}); DMH {dmh:.0?} decreasing: {decreasing}; CoRe {core:.0?} spread {spread:.3} (< {CORE_ESS_SPREAD})"
        ),
    }
}

fn refit_consistency() -> Outcome {
    let source = bundled_source(None).unwrap();
    let plan = SimulationPlan {
        n: 2000,
        p: 6,
        structure_type: StructureType::Random,
        k_str: 1,
        k_sample: 1,
        structure: StructureParams::default(),
        gibbs_sweeps: 100,
        fit_prior: None,
        seed: SEED,
    };
    let sim = run_simulation_plan(&plan, &source).unwrap().remove(0);
    let spec = *sim.data.spec();
    let fit = mple(&sim.data, Some(&sim.structure), None).unwrap();
    let mut free: Vec<usize> = (0..spec.n_thresholds()).collect();
    free.extend(sim.structure.free_interactions(&spec));
    let bundle = curvature_bundle(&sim.data, &fit.theta_star, None).unwrap();
    let se = ghw_standard_errors(&bundle, &free).unwrap();
    let (mut worst, mut outside, mut zeros_ok) = (0.0f64, 0usize, true);
    for (k, &se_k) in se.iter().enumerate() {
        let (est, truth) = (fit.theta_star[k], sim.true_theta[k]);
        if free.contains(&k) {
            let z = (est - truth).abs() / se_k;
            worst = worst.max(z);
            outside += usize::from(z > REFIT_SE_MULT);
        } else {
            zeros_ok &= est == 0.0 && truth == 0.0 && se_k == 0.0;
        }
    }
    Outcome {
        id: 11,
        name: "refit on synthesized data recovers the generating parameters",
        pass: fit.converged && outside == 0 && zeros_ok,
        detail: format!(
            "{} free coordinates, worst |z| {worst:.2} (<= {REFIT_SE_MULT}); fixed coordinates exactly zero: {zeros_ok}",
            free.len()
        ),
    }
}

fn metric_units() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let std = Normal::new(0.0, 1.0).unwrap();
    let a: Vec<f64> = (0..20_000).map(|_| std.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..20_000).map(|_| 1.0 + std.sample(&mut rng)).collect();
    let eta = overlap_index(&a, &b).unwrap();
    let bf = savage_dickey(&a, 2.0).unwrap().bayes_factor;
    let phi: f64 = 0.5;
    let s = 20_000;
    let mut ar = Vec::with_capacity(s);
    let mut x = std.sample(&mut rng) / (1.0 - phi * phi).sqrt();
    for _ in 0..s {
        x = phi * x + std.sample(&mut rng);
        ar.push(x);
    }
    let want = s as f64 * (1.0 - phi) / (1.0 + phi);
    let got = ess(&ar).unwrap();
    let ess_err = (got - want).abs() / want;
    Outcome {
        id: 12,
        name: "metric unit checks",
        pass: (eta - ETA_NORMAL.0).abs() <= ETA_NORMAL.1
            && (bf - SD_NORMAL.0).abs() <= SD_NORMAL.1
            && ess_err <= AR1_RTOL,
        detail: format!(
            "eta {eta:.4} ({} +- {}); BF {bf:.3} ({} +- {}); AR(1) ESS {got:.0} vs {want:.0} ({:.1}%)",
            ETA_NORMAL.0,
            ETA_NORMAL.1,
            SD_NORMAL.0,
            SD_NORMAL.1,
            100.0 * ess_err
        ),
    }
}

fn timed(f: impl FnOnce() -> Vec<Outcome>) -> Vec<(Outcome, f64)> {
    let start = Instant::now();
    let out = f();
    let secs = start.elapsed().as_secs_f64();
    out.into_iter().map(|o| (o, secs)).collect()
}

fn main() {
    let mut results = Vec::new();
    results.extend(timed(|| vec![oracle_equivalence()]));
    results.extend(timed(|| vec![gradient_checks()]));
    results.extend(timed(|| vec![exact_sampler_validity()]));
    results.extend(timed(|| vec![rescaling_identity()]));
    results.extend(timed(|| {
        let settings = desk_settings(vec![Method::Pseudo, Method::Core, Method::Adacore, Method::PhGhw], None);
        let cells = (0..20)
            .map(|replicate| CellSpec {
                structure: StructureType::Random,
                p: 6,
                n: 1000,
                replicate,
            })
            .collect();
        let out = run_cells(cells, &settings);
        vec![
            variance_deflation(&out),
            calibrated_spread(&out),
            overlap_ordering(&out),
            savage_dickey_alignment(&out),
            correlation_regression(&out),
        ]
    }));
    results.extend(timed(|| vec![ess_ordering()]));
    results.extend(timed(|| vec![refit_consistency()]));
    results.extend(timed(|| vec![metric_units()]));
    results.sort_by_key(|(o, _)| o.id);

    let mut unexpected = 0;
    for (o, secs) in &results {
        let tag = match (o.pass, KNOWN_SHORTFALLS.contains(&o.id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("{tag} [{:>2}] {}: {} [{secs:.1}s]", o.id, o.name, o.detail);
    }
    let passed = results.iter().filter(|(o, _)| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
