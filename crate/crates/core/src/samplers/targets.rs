//! Posterior targets for the kernel.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::{Eval, Target};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{
    dot, sufficient_statistics, Dataset, EmpiricalLikelihood, FullLikelihood, ModelSpec, PriorSpec, PseudoLikelihood,
    StatKind,
};
use crate::rescale::RescalingMatrix;
use crate::simulate::{derive_seed, gibbs_stat_moments, GibbsInit, GibbsSampler, McMoments};

fn add_prior(spec: &ModelSpec, prior: &PriorSpec, theta: &[f64], value: &mut f64, grad: &mut [f64]) {
    *value += prior.log_density(spec, theta);
    prior.add_gradient(spec, theta, grad);
}

fn add_prior_info(spec: &ModelSpec, prior: &PriorSpec, info: &mut Matrix) {
    for (a, c) in prior.curvature(spec).into_iter().enumerate() {
        info[(a, a)] -= c;
    }
}

/// Pseudo posterior.
#[derive(Clone, Debug)]
pub struct PseudoTarget {
    pl: PseudoLikelihood,
    prior: PriorSpec,
}

impl PseudoTarget {
    pub fn new(data: &Dataset, prior: &PriorSpec) -> Self {
        Self {
            pl: PseudoLikelihood::new(data),
            prior: *prior,
        }
    }
}

impl Target for PseudoTarget {
    fn dim(&self) -> usize {
        self.pl.spec().dim()
    }

    fn evaluate(&self, x: &[f64], _: u64) -> Result<Eval> {
        let (mut value, mut gradient) = self.pl.value_and_gradient(x, true);
        add_prior(self.pl.spec(), &self.prior, x, &mut value, &mut gradient);
        Ok(Eval {
            log_density: value,
            gradient,
            aux_stats: None,
        })
    }

    fn information(&self, x: &[f64], _: u64) -> Result<Matrix> {
        let mut info = -self.pl.curvature(x).hessian;
        add_prior_info(self.pl.spec(), &self.prior, &mut info);
        Ok(info)
    }
}

/// Exact posterior by enumeration of the state space.
#[derive(Clone, Debug)]
pub struct ExactTarget {
    fl: FullLikelihood,
    prior: PriorSpec,
}

impl ExactTarget {
    pub fn new(data: &Dataset, prior: &PriorSpec) -> Result<Self> {
        Ok(Self {
            fl: FullLikelihood::new(data)?,
            prior: *prior,
        })
    }
}

impl Target for ExactTarget {
    fn dim(&self) -> usize {
        self.fl.spec().dim()
    }

    fn evaluate(&self, x: &[f64], _: u64) -> Result<Eval> {
        let (mut value, mut gradient, _) = self.fl.evaluate(x, false)?;
        add_prior(self.fl.spec(), &self.prior, x, &mut value, &mut gradient);
        Ok(Eval {
            log_density: value,
            gradient,
            aux_stats: None,
        })
    }

    fn information(&self, x: &[f64], _: u64) -> Result<Matrix> {
        let (_, _, info) = self.fl.evaluate(x, true)?;
        let mut info = info.expect("information requested");
        add_prior_info(self.fl.spec(), &self.prior, &mut info);
        Ok(info)
    }
}

/// Posterior with the partition sum restricted to observed states.
#[derive(Clone, Debug)]
pub struct EmpiricalTarget {
    el: EmpiricalLikelihood,
    prior: PriorSpec,
}

impl EmpiricalTarget {
    pub fn new(data: &Dataset, prior: &PriorSpec) -> Self {
        Self {
            el: EmpiricalLikelihood::new(data),
            prior: *prior,
        }
    }
}

impl Target for EmpiricalTarget {
    fn dim(&self) -> usize {
        self.el.spec().dim()
    }

    fn evaluate(&self, x: &[f64], _: u64) -> Result<Eval> {
        let (mut value, mut gradient, _) = self.el.evaluate(x, false);
        add_prior(self.el.spec(), &self.prior, x, &mut value, &mut gradient);
        Ok(Eval {
            log_density: value,
            gradient,
            aux_stats: None,
        })
    }

    fn information(&self, x: &[f64], _: u64) -> Result<Matrix> {
        let (_, _, info) = self.el.evaluate(x, true);
        let mut info = info.expect("information requested");
        add_prior_info(self.el.spec(), &self.prior, &mut info);
        Ok(info)
    }
}

/// Pseudo posterior pulled back to `beta = A (theta - theta*) + theta*`.
#[derive(Clone, Debug)]
pub struct CoreTarget {
    inner: PseudoTarget,
    rescaling: RescalingMatrix,
    /// Adds the constant `log |det A^{-1}|`; it cancels in every acceptance ratio.
    pub include_jacobian: bool,
}

impl CoreTarget {
    pub fn new(data: &Dataset, prior: &PriorSpec, rescaling: RescalingMatrix) -> Self {
        Self {
            inner: PseudoTarget::new(data, prior),
            rescaling,
            include_jacobian: false,
        }
    }

    pub fn rescaling(&self) -> &RescalingMatrix {
        &self.rescaling
    }

    pub fn set_rescaling(&mut self, rescaling: RescalingMatrix) {
        self.rescaling = rescaling;
    }

    pub fn pseudo(&self) -> &PseudoTarget {
        &self.inner
    }

    fn pull_gradient(&self, g: &[f64]) -> Vec<f64> {
        let d = g.len();
        (0..d)
            .map(|a| (0..d).map(|b| self.rescaling.a_inv_t[(a, b)] * g[b]).sum())
            .collect()
    }
}

impl Target for CoreTarget {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, beta: &[f64], stream: u64) -> Result<Eval> {
        if self.rescaling.is_identity() && !self.include_jacobian {
            return self.inner.evaluate(beta, stream);
        }
        let theta = self.rescaling.inverse(beta);
        let e = self.inner.evaluate(&theta, stream)?;
        let mut log_density = e.log_density;
        if self.include_jacobian {
            log_density += self.rescaling.log_abs_det_inverse();
        }
        Ok(Eval {
            log_density,
            gradient: if self.rescaling.is_identity() {
                e.gradient
            } else {
                self.pull_gradient(&e.gradient)
            },
            aux_stats: None,
        })
    }

    fn information(&self, beta: &[f64], stream: u64) -> Result<Matrix> {
        if self.rescaling.is_identity() {
            return self.inner.information(beta, stream);
        }
        let theta = self.rescaling.inverse(beta);
        let info = self.inner.information(&theta, stream)?;
        let mut out = &self.rescaling.a_inv_t * info * &self.rescaling.a_inv;
        crate::linalg::symmetrize(&mut out);
        Ok(out)
    }
}

/// Full posterior handled with auxiliary Gibbs data instead of the partition function.
///
/// Each evaluation simulates `inner` Gibbs states at the evaluation point from
/// `min(n, inner)` chains started at the observed rows; their mean statistic
/// stands in for `E[s]`, and `n` times it for the auxiliary dataset statistic.
#[derive(Clone, Debug)]
pub struct DmhTarget<'a> {
    data: &'a Dataset,
    prior: PriorSpec,
    stats_x: Vec<f64>,
    inner: usize,
    seed: u64,
}

impl<'a> DmhTarget<'a> {
    pub fn new(data: &'a Dataset, prior: &PriorSpec, inner: usize, seed: u64) -> Self {
        Self {
            data,
            prior: *prior,
            stats_x: sufficient_statistics(data, StatKind::Full).values,
            inner: inner.max(1),
            seed,
        }
    }

    fn aux_moments(&self, theta: &[f64], stream: u64, with_cov: bool) -> Result<McMoments> {
        let gibbs = GibbsSampler::new(theta, self.data.spec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[stream, with_cov as u64]));
        gibbs_stat_moments(
            &gibbs,
            self.inner,
            self.data.n(),
            GibbsInit::Data(self.data),
            with_cov,
            &mut rng,
        )
    }

    /// `s(X)' theta + log pi(theta)`.
    pub fn partial_log_density(&self, theta: &[f64]) -> f64 {
        dot(&self.stats_x, theta) + self.prior.log_density(self.data.spec(), theta)
    }

    pub fn observed_stats(&self) -> &[f64] {
        &self.stats_x
    }
}

impl Target for DmhTarget<'_> {
    fn dim(&self) -> usize {
        self.data.spec().dim()
    }

    fn evaluate(&self, x: &[f64], stream: u64) -> Result<Eval> {
        let spec = self.data.spec();
        let n = self.data.n() as f64;
        let mc = self.aux_moments(x, stream, false)?;
        let aux: Vec<f64> = mc.mean.iter().map(|v| n * v).collect();
        let mut gradient: Vec<f64> = self.stats_x.iter().zip(&aux).map(|(s, y)| s - y).collect();
        self.prior.add_gradient(spec, x, &mut gradient);
        Ok(Eval {
            log_density: self.partial_log_density(x),
            gradient,
            aux_stats: Some(aux),
        })
    }

    fn information(&self, x: &[f64], stream: u64) -> Result<Matrix> {
        let mc = self.aux_moments(x, stream ^ (1 << 63), true)?;
        let mut info = mc.cov.expect("covariance requested") * self.data.n() as f64;
        add_prior_info(self.data.spec(), &self.prior, &mut info);
        Ok(info)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::model::ParamVector;
    use crate::model::{empirical_log_likelihood, full_log_likelihood, pseudo_log_likelihood};
    use crate::rescale::{rescaling_from_bundle, CurvatureBundle};

    fn data() -> Dataset {
        let spec = ModelSpec::new(3, 2).unwrap();
        let rows: Vec<[u32; 3]> = (0..40u32).map(|r| [r % 3, (r / 3) % 3, (r * 7 + 1) % 3]).collect();
        Dataset::from_rows(spec, &rows).unwrap()
    }

    fn fd_check<T: Target>(t: &T, x: &[f64], lp: impl Fn(&[f64]) -> f64) {
        let e = t.evaluate(x, 0).unwrap();
        assert!((e.log_density - lp(x)).abs() < 1e-9);
        for k in 0..x.len() {
            let h = 1e-5;
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += h;
            dn[k] -= h;
            let fd = (lp(&up) - lp(&dn)) / (2.0 * h);
            assert!(
                (fd - e.gradient[k]).abs() < 1e-5 * (1.0 + fd.abs()),
                "coord {k}: {fd} vs {}",
                e.gradient[k]
            );
        }
    }

    #[test]
    fn targets_match_model_densities() {
        let d = data();
        let prior = PriorSpec::default();
        let x: Vec<f64> = (0..d.spec().dim()).map(|k| 0.05 * k as f64 - 0.3).collect();
        fd_check(&PseudoTarget::new(&d, &prior), &x, |t| {
            pseudo_log_likelihood(&d, t, Some(&prior)).unwrap()
        });
        fd_check(&ExactTarget::new(&d, &prior).unwrap(), &x, |t| {
            full_log_likelihood(&d, t, Some(&prior)).unwrap()
        });
        fd_check(&EmpiricalTarget::new(&d, &prior), &x, |t| {
            empirical_log_likelihood(&d, t, Some(&prior)).unwrap()
        });
    }

    #[test]
    fn core_target_is_pullback() {
        let d = data();
        let prior = PriorSpec::default();
        let dim = d.spec().dim();
        let pseudo = PseudoTarget::new(&d, &prior);
        let star: Vec<f64> = vec![0.1; dim];
        let bundle = CurvatureBundle {
            hessian: -pseudo.information(&star, 0).unwrap(),
            score_cov: Matrix::identity(dim, dim) * 3.0,
            prior_curvature: vec![0.0; dim],
            eval_point: ParamVector(star.clone()),
        };
        let r = rescaling_from_bundle(&bundle, ParamVector(star)).unwrap();
        let mut core = CoreTarget::new(&d, &prior, r.clone());
        let beta: Vec<f64> = (0..dim).map(|k| 0.02 * k as f64).collect();
        fd_check(&core, &beta, |b| {
            pseudo_log_likelihood(&d, &r.inverse(b), Some(&prior)).unwrap()
        });
        let info = core.information(&beta, 0).unwrap();
        let expected = r.a_inv.transpose() * pseudo.information(&r.inverse(&beta), 0).unwrap() * &r.a_inv;
        assert!(max_abs_diff(&info, &expected) < 1e-9);
        let without = core.evaluate(&beta, 0).unwrap().log_density;
        core.include_jacobian = true;
        let with = core.evaluate(&beta, 0).unwrap().log_density;
        assert!((with - without - r.log_abs_det_inverse()).abs() < 1e-12);
    }

    #[test]
    fn dmh_gradient_tracks_exact() {
        let d = data();
        let prior = PriorSpec::default();
        let x: Vec<f64> = (0..d.spec().dim()).map(|k| 0.03 * k as f64 - 0.2).collect();
        let dmh = DmhTarget::new(&d, &prior, 100_000, 3);
        let exact = ExactTarget::new(&d, &prior).unwrap();
        let g1 = dmh.evaluate(&x, 0).unwrap().gradient;
        let g2 = exact.evaluate(&x, 0).unwrap().gradient;
        for k in 0..x.len() {
            assert!((g1[k] - g2[k]).abs() < 0.6, "coord {k}: {} vs {}", g1[k], g2[k]);
        }
        // Same stream, same draws.
        assert_eq!(dmh.evaluate(&x, 7).unwrap(), dmh.evaluate(&x, 7).unwrap());
    }
}
