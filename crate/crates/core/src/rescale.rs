//! Coordinate rescaling: curvature bundles, the sandwich covariance, the
//! rescaling matrix `A = Gamma L'` and post-hoc calibration of draws.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{monte_carlo_hessian, robbins_monro, RobbinsMonroSchedule};
use crate::linalg::{cholesky_lower, min_eigenvalue, solve_lower, solve_upper, spd_inverse, symmetrize, Matrix};
use crate::model::{Dataset, ParamVector, PriorSpec, PseudoLikelihood};

/// Pseudo-likelihood curvature pieces evaluated at a single point.
#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    /// Pseudo log-likelihood Hessian.
    pub hessian: Matrix,
    /// Sum of outer products of per-observation scores.
    pub score_cov: Matrix,
    /// Diagonal of the log-prior Hessian (zeros for a flat prior).
    pub prior_curvature: Vec<f64>,
    pub eval_point: ParamVector,
}

impl CurvatureBundle {
    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    fn prior_matrix(&self) -> Matrix {
        crate::linalg::from_diagonal(&self.prior_curvature)
    }
}

pub fn curvature_bundle(data: &Dataset, theta: &[f64], prior: Option<&PriorSpec>) -> Result<CurvatureBundle> {
    let spec = data.spec();
    spec.check_params(theta)?;
    let c = PseudoLikelihood::new(data).curvature(theta);
    let prior_curvature = match prior {
        Some(pr) => {
            pr.validate()?;
            pr.curvature(spec)
        }
        None => vec![0.0; spec.dim()],
    };
    Ok(CurvatureBundle {
        hessian: c.hessian,
        score_cov: c.score_outer,
        prior_curvature,
        eval_point: ParamVector(theta.to_vec()),
    })
}

fn negated(m: &Matrix) -> Matrix {
    -m.clone()
}

/// Sandwich covariance `(-H)^{-1} U (-H)^{-1}`.
pub fn ghw_covariance(bundle: &CurvatureBundle) -> Result<Matrix> {
    let neg_h = negated(&bundle.hessian);
    let (l, _) = cholesky_lower(&neg_h, "negative pseudo Hessian").map_err(|_| {
        Error::Numerical(format!(
            "negative pseudo Hessian is not positive definite (smallest eigenvalue {:.3e}); \
             use a prior to regularize",
            min_eigenvalue(&neg_h)
        ))
    })?;
    let x = crate::linalg::cholesky_solve(&l, &bundle.score_cov)?;
    let mut sigma = crate::linalg::cholesky_solve(&l, &x.transpose())?;
    symmetrize(&mut sigma);
    Ok(sigma)
}

/// Sandwich standard errors of a fit restricted to the `free` coordinates.
/// Fixed coordinates get zero.
pub fn ghw_standard_errors(bundle: &CurvatureBundle, free: &[usize]) -> Result<Vec<f64>> {
    let d = bundle.dim();
    if let Some(&k) = free.iter().find(|&&k| k >= d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: k + 1,
        });
    }
    let sub = |m: &Matrix| Matrix::from_fn(free.len(), free.len(), |a, b| m[(free[a], free[b])]);
    let reduced = CurvatureBundle {
        hessian: sub(&bundle.hessian),
        score_cov: sub(&bundle.score_cov),
        prior_curvature: free.iter().map(|&k| bundle.prior_curvature[k]).collect(),
        eval_point: bundle.eval_point.clone(),
    };
    let cov = ghw_covariance(&reduced)?;
    let mut se = vec![0.0; d];
    for (a, &k) in free.iter().enumerate() {
        se[k] = cov[(a, a)].max(0.0).sqrt();
    }
    Ok(se)
}

/// Precision `Sigma_GHW^{-1} - H_prior`, formed by solving `U Z = -H`.
fn robust_precision(bundle: &CurvatureBundle) -> Result<Matrix> {
    let neg_h = negated(&bundle.hessian);
    let (lu, _) = cholesky_lower(&bundle.score_cov, "score covariance")?;
    let z = crate::linalg::cholesky_solve(&lu, &neg_h)?;
    let mut precision = &neg_h * z - bundle.prior_matrix();
    symmetrize(&mut precision);
    Ok(precision)
}

/// `(Sigma_GHW^{-1} - H_prior)^{-1}`: the sandwich with the prior curvature restored.
pub fn robust_posterior_covariance(bundle: &CurvatureBundle) -> Result<Matrix> {
    let precision = robust_precision(bundle)?;
    spd_inverse(&precision, "robust posterior precision").map_err(|_| {
        Error::Numerical(format!(
            "robust posterior precision is not positive definite (smallest eigenvalue {:.3e})",
            min_eigenvalue(&precision)
        ))
    })
}

/// Which covariance the rescaled chain is matched to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RescaleVariant {
    /// Sandwich covariance of the pseudo-likelihood.
    Ghw,
    /// Monte Carlo full-likelihood curvature at the Robbins-Monro optimum.
    Rm,
    /// Monte Carlo full-likelihood curvature at the pseudo posterior mode.
    Mch,
    /// No rescaling.
    Identity,
}

/// Monte Carlo settings for the RM and MCH variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McSettings {
    pub samples: usize,
    pub seed: u64,
    pub schedule: RobbinsMonroSchedule,
}

/// Affine map `beta = A (theta - theta*) + theta*` with `A = Gamma L'`.
#[derive(Clone, Debug, PartialEq)]
pub struct RescalingMatrix {
    pub theta_star: ParamVector,
    /// Lower factor with `L L' = -(H + H_prior)`.
    pub l_factor: Matrix,
    /// Lower factor of the target covariance.
    pub gamma_factor: Matrix,
    pub a: Matrix,
    pub a_inv: Matrix,
    pub a_inv_t: Matrix,
    pub variant: RescaleVariant,
    /// Point at which the target covariance was evaluated.
    pub target_point: ParamVector,
    pub notes: Vec<String>,
}

impl RescalingMatrix {
    /// Assembles the map from its two lower-triangular factors.
    pub fn from_factors(
        theta_star: ParamVector,
        l_factor: Matrix,
        gamma_factor: Matrix,
        variant: RescaleVariant,
    ) -> Result<Self> {
        let d = theta_star.len();
        for (name, f) in [("L", &l_factor), ("Gamma", &gamma_factor)] {
            if f.nrows() != d || f.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: f.nrows(),
                });
            }
            if f.diagonal().iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Numerical(format!("{name} factor has a non-positive diagonal")));
            }
        }
        let eye = Matrix::identity(d, d);
        let gamma_inv = solve_lower(&gamma_factor, &eye)?;
        let l_inv_t = solve_upper(&l_factor.transpose(), &eye)?;
        let a_inv = l_inv_t * gamma_inv;
        let a = &gamma_factor * l_factor.transpose();
        let a_inv_t = a_inv.transpose();
        Ok(Self {
            target_point: theta_star.clone(),
            theta_star,
            l_factor,
            gamma_factor,
            a,
            a_inv,
            a_inv_t,
            variant,
            notes: Vec::new(),
        })
    }

    pub fn identity(theta_star: ParamVector) -> Self {
        let d = theta_star.len();
        let eye = Matrix::identity(d, d);
        Self {
            target_point: theta_star.clone(),
            theta_star,
            l_factor: eye.clone(),
            gamma_factor: eye.clone(),
            a: eye.clone(),
            a_inv: eye.clone(),
            a_inv_t: eye,
            variant: RescaleVariant::Identity,
            notes: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn is_identity(&self) -> bool {
        self.variant == RescaleVariant::Identity
    }

    /// `A (theta - theta*) + theta*`.
    pub fn forward(&self, theta: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return theta.to_vec();
        }
        affine(&self.a, &self.theta_star, &self.theta_star, theta)
    }

    /// `A^{-1} (beta - theta*) + theta*`.
    pub fn inverse(&self, beta: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return beta.to_vec();
        }
        affine(&self.a_inv, &self.theta_star, &self.theta_star, beta)
    }

    /// `log |det A^{-1}|`.
    pub fn log_abs_det_inverse(&self) -> f64 {
        -(self.l_factor.diagonal().iter().map(|v| v.ln()).sum::<f64>()
            + self.gamma_factor.diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }

    /// The covariance the map targets, `Gamma Gamma'`.
    pub fn target_covariance(&self) -> Matrix {
        &self.gamma_factor * self.gamma_factor.transpose()
    }

    pub fn to_record(&self) -> RescalingRecord {
        let rows = |m: &Matrix| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        RescalingRecord {
            variant: self.variant,
            theta_star: self.theta_star.clone(),
            target_point: self.target_point.clone(),
            l_factor: rows(&self.l_factor),
            gamma_factor: rows(&self.gamma_factor),
            a_inv: rows(&self.a_inv),
            notes: self.notes.clone(),
        }
    }
}

fn affine(m: &Matrix, from: &[f64], to: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = to.to_vec();
    for a in 0..d {
        let mut acc = 0.0;
        for b in 0..d {
            acc += m[(a, b)] * (x[b] - from[b]);
        }
        out[a] += acc;
    }
    out
}

/// Row-major JSON form of a [`RescalingMatrix`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescalingRecord {
    pub variant: RescaleVariant,
    pub theta_star: ParamVector,
    pub target_point: ParamVector,
    pub l_factor: Vec<Vec<f64>>,
    pub gamma_factor: Vec<Vec<f64>>,
    pub a_inv: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RescalingRecord {
    pub fn into_matrix(self) -> Result<RescalingMatrix> {
        let d = self.theta_star.len();
        let mat = |rows: &[Vec<f64>]| -> Result<Matrix> {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: rows.len(),
                });
            }
            Ok(Matrix::from_fn(d, d, |a, b| rows[a][b]))
        };
        if self.variant == RescaleVariant::Identity {
            let mut r = RescalingMatrix::identity(self.theta_star);
            r.notes = self.notes;
            return Ok(r);
        }
        let mut r = RescalingMatrix::from_factors(
            self.theta_star,
            mat(&self.l_factor)?,
            mat(&self.gamma_factor)?,
            self.variant,
        )?;
        r.target_point = self.target_point;
        r.notes = self.notes;
        Ok(r)
    }
}

fn l_factor(bundle: &CurvatureBundle) -> Result<(Matrix, Option<String>)> {
    let mut m = negated(&bundle.hessian) - bundle.prior_matrix();
    symmetrize(&mut m);
    let (l, jitter) = cholesky_lower(&m, "L factor (negative pseudo posterior Hessian)")?;
    Ok((
        l,
        (jitter > 0.0).then(|| format!("L factor needed diagonal jitter {jitter:.3e}")),
    ))
}

fn gamma_from_covariance(cov: &Matrix) -> Result<(Matrix, Option<String>)> {
    let (g, jitter) = cholesky_lower(cov, "Gamma factor (target covariance)")?;
    Ok((
        g,
        (jitter > 0.0).then(|| format!("Gamma factor needed diagonal jitter {jitter:.3e}")),
    ))
}

/// Sandwich-matched map with factors evaluated from `bundle` and centre `theta_star`.
pub fn rescaling_from_bundle(bundle: &CurvatureBundle, theta_star: ParamVector) -> Result<RescalingMatrix> {
    let (l, note_l) = l_factor(bundle)?;
    let (g, note_g) = gamma_from_covariance(&robust_posterior_covariance(bundle)?)?;
    let mut r = RescalingMatrix::from_factors(theta_star, l, g, RescaleVariant::Ghw)?;
    r.target_point = bundle.eval_point.clone();
    r.notes.extend(note_l.into_iter().chain(note_g));
    Ok(r)
}

/// Builds the rescaling matrix at the pseudo posterior mode `theta_star`.
///
/// For [`RescaleVariant::Rm`] the full-likelihood curvature is evaluated at a
/// Robbins-Monro optimum started from `theta_star`; for
/// [`RescaleVariant::Mch`] it is evaluated at `theta_star` itself.
pub fn build_rescaling(
    data: &Dataset,
    theta_star: &[f64],
    prior: Option<&PriorSpec>,
    variant: RescaleVariant,
    mc: Option<&McSettings>,
) -> Result<RescalingMatrix> {
    let bundle = curvature_bundle(data, theta_star, prior)?;
    let centre = ParamVector(theta_star.to_vec());
    match variant {
        RescaleVariant::Identity => Ok(RescalingMatrix::identity(centre)),
        RescaleVariant::Ghw => rescaling_from_bundle(&bundle, centre),
        RescaleVariant::Rm | RescaleVariant::Mch => {
            let mc = mc.ok_or_else(|| Error::Config("RM and MCH rescaling need Monte Carlo settings".into()))?;
            let mut notes = Vec::new();
            let point = if variant == RescaleVariant::Rm {
                let rm = robbins_monro(data, prior, theta_star, mc.samples, &mc.schedule, mc.seed)?;
                if !rm.converged {
                    return Err(Error::Numerical(format!(
                        "Robbins-Monro failed: {}",
                        rm.notes.join("; ")
                    )));
                }
                rm.theta_star.0
            } else {
                theta_star.to_vec()
            };
            let mch = monte_carlo_hessian(&point, data.spec(), data.n(), mc.samples, mc.seed ^ 0x5EED)?;
            notes.extend(mch.warning);
            let mut precision = negated(&mch.hessian) - bundle.prior_matrix();
            symmetrize(&mut precision);
            let cov = spd_inverse(&precision, "Monte Carlo posterior precision")?;
            let (l, note_l) = l_factor(&bundle)?;
            let (g, note_g) = gamma_from_covariance(&cov)?;
            let mut r = RescalingMatrix::from_factors(centre, l, g, variant)?;
            r.target_point = ParamVector(point);
            r.notes = notes;
            r.notes.extend(note_l.into_iter().chain(note_g));
            Ok(r)
        }
    }
}

/// Sandwich-matched map with factors re-evaluated at `running_mean`; the
/// centre stays at `theta_star`.
pub fn update_rescaling(
    running_mean: &[f64],
    theta_star: &[f64],
    data: &Dataset,
    prior: Option<&PriorSpec>,
) -> Result<RescalingMatrix> {
    let bundle = curvature_bundle(data, running_mean, prior)?;
    rescaling_from_bundle(&bundle, ParamVector(theta_star.to_vec()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Center {
    /// Rescale around the map's own centre.
    Mode,
    /// Rescale around the per-coordinate mean of the draws.
    Mean,
}

/// Applies the rescaling map to every row (draw) of `draws`.
pub fn post_hoc_calibrate(draws: &Matrix, rescaling: &RescalingMatrix, center: Center) -> Result<Matrix> {
    let d = rescaling.dim();
    if draws.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: draws.ncols(),
        });
    }
    if rescaling.is_identity() {
        return Ok(draws.clone());
    }
    let c: Vec<f64> = match center {
        Center::Mode => rescaling.theta_star.0.clone(),
        Center::Mean => {
            let s = draws.nrows().max(1) as f64;
            (0..d).map(|k| draws.column(k).sum() / s).collect()
        }
    };
    let mut out = draws.clone();
    for r in 0..draws.nrows() {
        let row: Vec<f64> = draws.row(r).iter().copied().collect();
        let mapped = affine(&rescaling.a, &c, &c, &row);
        for k in 0..d {
            out[(r, k)] = mapped[k];
        }
    }
    Ok(out)
}
