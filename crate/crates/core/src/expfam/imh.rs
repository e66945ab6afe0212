use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{moment_to_natural, DiagGaussian, ExpFamily, MomentParams, NaturalParams, SharedFamily, UnitVarianceGaussian};
use crate::mcmc::{ImhKernel, IndependentProposal, SharedTarget, StateVector};
use crate::models::Univariate;
use crate::rng::RngStream;
use crate::stats::{linear_fit, median, LinearFit};
use crate::{Error, Result};

/// A family member used as an independence proposal.
#[derive(Clone)]
pub struct ExpFamProposal {
    family: SharedFamily,
    eta: NaturalParams,
}

impl ExpFamProposal {
    pub fn new(family: SharedFamily, eta: NaturalParams) -> Result<Self> {
        if !family.in_natural_domain(&eta.0) {
            return Err(Error::OutsideDomain(format!("{:?}", eta.0)));
        }
        Ok(ExpFamProposal { family, eta })
    }

    pub fn from_moments(family: SharedFamily, phi: &MomentParams) -> Result<Self> {
        let eta = moment_to_natural(family.as_ref(), phi, None)?;
        Self::new(family, eta)
    }

    /// Like [`from_moments`](Self::from_moments), but falls back to the
    /// reference member while `phi` is not yet a valid moment vector.
    pub fn from_moments_or_reference(family: SharedFamily, phi: &MomentParams) -> Self {
        Self::from_moments(family.clone(), phi).unwrap_or_else(|_| {
            let eta = NaturalParams(family.reference_natural());
            ExpFamProposal { family, eta }
        })
    }

    pub fn family(&self) -> &SharedFamily {
        &self.family
    }

    pub fn natural(&self) -> &NaturalParams {
        &self.eta
    }
}

impl IndependentProposal for ExpFamProposal {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn sample(&self, rng: &mut RngStream) -> StateVector {
        self.family.sample(&self.eta.0, rng)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.family.log_density(x, &self.eta.0)
    }
}

/// IMH kernel with proposal `f_phi`.
pub fn imh_kernel(family: SharedFamily, phi: &MomentParams, target: SharedTarget) -> Result<ImhKernel> {
    if family.dim() != target.dim() {
        return Err(Error::Dimension { expected: target.dim(), got: family.dim() });
    }
    let proposal = ExpFamProposal::from_moments(family, phi)?;
    ImhKernel::new(Arc::new(proposal), target)
}

/// Acceptance probability of a move from `z` to `z*` given target and
/// proposal masses at both points.
pub fn imh_acceptance(pi_z: f64, f_z: f64, pi_zs: f64, f_zs: f64) -> f64 {
    if pi_zs == 0.0 || f_zs == 0.0 {
        0.0
    } else if f_z == 0.0 || pi_z == 0.0 {
        1.0
    } else {
        (pi_zs * f_z / (pi_z * f_zs)).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrTv {
    pub rr: f64,
    pub tv: f64,
}

fn check_normalized(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("{what} has negative or non-finite mass")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Exact stationary rejection rate of IMH and `TV(pi, f)` on a finite space.
/// Fails if `rr > 2 tv`.
pub fn rejection_rate_tv_check(target: &[f64], proposal: &[f64]) -> Result<RrTv> {
    if target.len() != proposal.len() {
        return Err(Error::Dimension { expected: target.len(), got: proposal.len() });
    }
    check_normalized(target, "target")?;
    check_normalized(proposal, "proposal")?;
    let n = target.len();
    let mut mean_alpha = 0.0;
    for i in 0..n {
        for j in 0..n {
            mean_alpha += target[i] * proposal[j] * imh_acceptance(target[i], proposal[i], target[j], proposal[j]);
        }
    }
    let rr = (1.0 - mean_alpha).max(0.0);
    let tv = 0.5 * target.iter().zip(proposal).map(|(a, b)| (a - b).abs()).sum::<f64>();
    if rr > 2.0 * tv + 1e-12 {
        return Err(Error::BoundViolation(format!("rejection rate {rr} exceeds 2 TV = {}", 2.0 * tv)));
    }
    Ok(RrTv { rr, tv })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurseRow {
    pub d: usize,
    pub median_log_alpha: f64,
}

#[derive(Debug, Clone)]
pub struct CurseReport {
    pub rows: Vec<CurseRow>,
    pub fit: LinearFit,
}

impl CurseReport {
    pub fn is_non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].median_log_alpha <= w[0].median_log_alpha)
    }
}

/// Median IMH log acceptance for product targets `pi^d` and proposals `q^d`,
/// with `X_0 ~ pi^d` and `X_1 ~ q^d`, plus a least-squares fit against `d`.
pub fn curse_of_dim_experiment(
    base_target: &dyn Univariate,
    base_proposal: &dyn Univariate,
    dims: &[usize],
    n_pairs: usize,
    rng: &mut RngStream,
) -> CurseReport {
    let log_w = |x: f64| base_target.log_density(x) - base_proposal.log_density(x);
    let rows: Vec<CurseRow> = dims
        .iter()
        .map(|&d| {
            let mut stream = rng.child(d as u64);
            let log_alpha: Vec<f64> = (0..n_pairs)
                .map(|_| {
                    let mut s = 0.0;
                    for _ in 0..d {
                        let x0 = base_target.sample(&mut stream);
                        let x1 = base_proposal.sample(&mut stream);
                        s += log_w(x1) - log_w(x0);
                    }
                    s.min(0.0)
                })
                .collect();
            CurseRow { d, median_log_alpha: median(&log_alpha) }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.d as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_log_alpha).collect();
    let fit = linear_fit(&xs, &ys);
    CurseReport { rows, fit }
}

/// Looks up a built-in family.
pub fn family_by_name(name: &str, dim: usize) -> Result<SharedFamily> {
    if dim == 0 {
        return Err(Error::InvalidArgument("family dimension must be positive".into()));
    }
    match name {
        "diag_gaussian" => Ok(Arc::new(DiagGaussian::new(dim))),
        "unit_variance_gaussian" => Ok(Arc::new(UnitVarianceGaussian::new(dim))),
        other => Err(Error::InvalidArgument(format!("unknown family {other:?}"))),
    }
}

/// Serialized learned proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedProposal {
    pub family_name: String,
    pub dim: usize,
    pub phi: Vec<f64>,
}

impl LearnedProposal {
    pub fn new(family: &dyn ExpFamily, phi: &MomentParams) -> Self {
        LearnedProposal { family_name: family.name().to_string(), dim: family.dim(), phi: phi.0.clone() }
    }

    pub fn to_proposal(&self) -> Result<ExpFamProposal> {
        let family = family_by_name(&self.family_name, self.dim)?;
        ExpFamProposal::from_moments(family, &MomentParams(self.phi.clone()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
