//! Exponential families, moment matching and learned independence proposals.

mod gaussian;
mod imh;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::mcmc::StateVector;
use crate::rng::RngStream;
use crate::{Error, Result};

pub use gaussian::{gaussian_kl, DiagGaussian, UnitVarianceGaussian, MIN_VARIANCE};
pub use imh::{
    curse_of_dim_experiment, family_by_name, imh_acceptance, imh_kernel, rejection_rate_tv_check,
    CurseReport, CurseRow, ExpFamProposal, LearnedProposal, RrTv,
};

/// Natural parameters `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NaturalParams(pub Vec<f64>);

/// Moment parameters `phi = sigma(eta) = E[s(Z)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentParams(pub Vec<f64>);

/// `f_eta(z) = exp(eta . s(z) - A(eta) + log h(z))`.
pub trait ExpFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// Dimension of the state space.
    fn dim(&self) -> usize;

    /// Dimension `p` of the sufficient statistic.
    fn stat_dim(&self) -> usize;

    fn suff_stat(&self, z: &[f64]) -> Vec<f64>;

    fn log_normalizer(&self, eta: &[f64]) -> f64;

    fn base_log_measure(&self, z: &[f64]) -> f64;

    fn in_natural_domain(&self, eta: &[f64]) -> bool;

    /// `sigma(eta) = grad A(eta)`.
    fn moment_map(&self, eta: &[f64]) -> Vec<f64>;

    /// Jacobian of `sigma`, i.e. the Hessian of `A`.
    fn moment_jacobian(&self, eta: &[f64]) -> DMatrix<f64>;

    fn is_feasible_moment(&self, phi: &[f64]) -> bool;

    fn closed_form_inverse(&self, _phi: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Closed-form Jacobian of `sigma^{-1}` at `phi`, when available.
    fn inverse_moment_jacobian(&self, _phi: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Natural parameters of the reference member (used as Newton warm start
    /// and as the adaptation starting point).
    fn reference_natural(&self) -> Vec<f64>;

    fn sample(&self, eta: &[f64], rng: &mut RngStream) -> StateVector;

    fn log_density(&self, z: &[f64], eta: &[f64]) -> f64 {
        let s = self.suff_stat(z);
        s.iter().zip(eta).map(|(a, b)| a * b).sum::<f64>() - self.log_normalizer(eta) + self.base_log_measure(z)
    }
}

pub type SharedFamily = Arc<dyn ExpFamily>;

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 200;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sigma^{-1}(phi)`: closed form when the family has one, otherwise damped
/// Newton on `eta -> sigma(eta) - phi` started from `warm` (or the reference
/// member).
pub fn moment_to_natural(family: &dyn ExpFamily, phi: &MomentParams, warm: Option<&NaturalParams>) -> Result<NaturalParams> {
    if phi.0.len() != family.stat_dim() {
        return Err(Error::Dimension { expected: family.stat_dim(), got: phi.0.len() });
    }
    if !family.is_feasible_moment(&phi.0) {
        return Err(Error::Infeasible(format!("{:?} is outside the moment domain of {}", phi.0, family.name())));
    }
    if let Some(eta) = family.closed_form_inverse(&phi.0) {
        return Ok(NaturalParams(eta));
    }
    newton_inverse(family, phi, warm)
}

/// Damped Newton inversion of the moment map (step halving keeps iterates in
/// the natural domain and the residual decreasing).
pub fn newton_inverse(family: &dyn ExpFamily, phi: &MomentParams, warm: Option<&NaturalParams>) -> Result<NaturalParams> {
    let target = &phi.0;
    let tol = NEWTON_TOL * (1.0 + norm(target));
    let mut eta = match warm {
        Some(w) if family.in_natural_domain(&w.0) => w.0.clone(),
        _ => family.reference_natural(),
    };
    let residual = |eta: &[f64]| -> Vec<f64> { family.moment_map(eta).iter().zip(target).map(|(a, b)| a - b).collect() };
    let mut r = residual(&eta);
    for _ in 0..NEWTON_MAX_ITER {
        let rn = norm(&r);
        if rn <= tol {
            return Ok(NaturalParams(eta));
        }
        let j = family.moment_jacobian(&eta);
        let step = j
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| Error::InvalidArgument("singular moment Jacobian".into()))?;
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = eta.iter().zip(step.iter()).map(|(e, s)| e - scale * s).collect();
            if family.in_natural_domain(&cand) {
                let rc = residual(&cand);
                if norm(&rc) < rn {
                    eta = cand;
                    r = rc;
                    improved = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm(&r) <= tol {
        Ok(NaturalParams(eta))
    } else {
        Err(Error::NewtonFailed(NEWTON_MAX_ITER))
    }
}

pub fn natural_to_moment(family: &dyn ExpFamily, eta: &NaturalParams) -> Result<MomentParams> {
    if !family.in_natural_domain(&eta.0) {
        return Err(Error::OutsideDomain(format!("{:?}", eta.0)));
    }
    Ok(MomentParams(family.moment_map(&eta.0)))
}

/// Running mean of sufficient statistics with compensated summation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffStatAccumulator {
    sum: Vec<f64>,
    comp: Vec<f64>,
    count: u64,
}

impl SuffStatAccumulator {
    pub fn new(p: usize) -> Self {
        SuffStatAccumulator { sum: vec![0.0; p], comp: vec![0.0; p], count: 0 }
    }

    pub fn update(&mut self, s: &[f64]) {
        assert_eq!(s.len(), self.sum.len(), "statistic has the wrong length");
        for i in 0..s.len() {
            // Neumaier summation.
            let t = self.sum[i] + s[i];
            if self.sum[i].abs() >= s[i].abs() {
                self.comp[i] += (self.sum[i] - t) + s[i];
            } else {
                self.comp[i] += (s[i] - t) + self.sum[i];
            }
            self.sum[i] = t;
        }
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| (s + c) / self.count as f64).collect()
    }

    /// Pools two accumulators (count-weighted average).
    pub fn merge(&mut self, other: &SuffStatAccumulator) {
        for i in 0..self.sum.len() {
            let t = self.sum[i] + other.sum[i];
            self.comp[i] += other.comp[i] + if self.sum[i].abs() >= other.sum[i].abs() {
                (self.sum[i] - t) + other.sum[i]
            } else {
                (other.sum[i] - t) + self.sum[i]
            };
            self.sum[i] = t;
        }
        self.count += other.count;
    }
}

/// Moment matching: the forward-KL optimum is the mean statistic.
pub fn forward_kl_optimum(family: &dyn ExpFamily, acc: &SuffStatAccumulator) -> Result<MomentParams> {
    if acc.count() == 0 {
        return Err(Error::Infeasible("no samples accumulated".into()));
    }
    let phi = acc.mean();
    if !family.is_feasible_moment(&phi) {
        return Err(Error::Infeasible(format!(
            "mean statistic {phi:?} after {} samples is degenerate; gather more samples",
            acc.count()
        )));
    }
    Ok(MomentParams(phi))
}

/// `phi_t = phi_{t-1} + (S_t - phi_{t-1}) / t`.
pub fn online_update(phi_prev: &MomentParams, s_t: &[f64], t: u64) -> MomentParams {
    assert!(t >= 1, "online update index starts at 1");
    if t == 1 {
        return MomentParams(s_t.to_vec());
    }
    let tf = t as f64;
    MomentParams(phi_prev.0.iter().zip(s_t).map(|(p, s)| p + (s - p) / tf).collect())
}

/// One naive stochastic gradient step on `-eta . s* + A(eta)`.
pub fn naive_sgd_update(eta_prev: &NaturalParams, s_t: &[f64], gamma: f64, family: &dyn ExpFamily) -> Result<NaturalParams> {
    if !family.in_natural_domain(&eta_prev.0) {
        return Err(Error::OutsideDomain(format!("{:?}", eta_prev.0)));
    }
    let sigma = family.moment_map(&eta_prev.0);
    let next: Vec<f64> = eta_prev.0.iter().zip(sigma.iter().zip(s_t)).map(|(e, (m, s))| e - gamma * (m - s)).collect();
    if !family.in_natural_domain(&next) || next.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutsideDomain(format!("{next:?}")));
    }
    Ok(NaturalParams(next))
}

/// SGD in the moment parameterization preconditioned by
/// `P = (grad sigma^{-1})^T`: solves `P x = grad_hat K(phi)` with the
/// closed-form Jacobian and steps `phi - gamma x`.
pub fn preconditioned_sgd_update(phi_prev: &MomentParams, s_t: &[f64], gamma: f64, family: &dyn ExpFamily) -> Result<MomentParams> {
    let jac = family
        .inverse_moment_jacobian(&phi_prev.0)
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no closed-form inverse Jacobian", family.name())))?;
    let eta = moment_to_natural(family, phi_prev, None)?;
    let sigma = family.moment_map(&eta.0);
    let nat_grad = DVector::from_iterator(sigma.len(), sigma.iter().zip(s_t).map(|(m, s)| m - s));
    let p = jac.transpose();
    let grad_k = &p * &nat_grad;
    let x = p.lu().solve(&grad_k).ok_or_else(|| Error::InvalidArgument("singular preconditioner".into()))?;
    Ok(MomentParams(phi_prev.0.iter().zip(x.iter()).map(|(p, xi)| p - gamma * xi).collect()))
}
