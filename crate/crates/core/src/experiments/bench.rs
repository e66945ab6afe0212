use serde::{Deserialize, Serialize};

use crate::grad::problems::{correlated_pairs, GaussianLocation, MeanFieldFactor, Shift};
use crate::grad::{control_variate, rao_blackwellize, reinforce_gradient, reparam_gradient, FnIntegrand};
use crate::rng::RngStream;
use crate::stats::variance;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    /// Replications per estimator for the bias check.
    pub reps: usize,
    /// Draws per estimate in the bias check.
    pub t: usize,
    /// Seeds of the paired variance comparisons.
    pub seeds: usize,
    /// Draws per estimate in the paired comparisons.
    pub pair_draws: usize,
    /// Correlation of the control-variate problem.
    pub rho: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { reps: 10_000, t: 10, seeds: 20, pair_draws: 1000, rho: 0.9 }
    }
}

/// One seed of the paired comparisons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub seed: usize,
    pub reinforce_variance: f64,
    pub reparam_variance: f64,
    pub raw_score_variance: f64,
    pub rao_blackwell_variance: f64,
    /// Variance of the control-variate terms over the raw terms.
    pub cv_variance_ratio: f64,
}

/// REINFORCE against the reparameterization trick on the Gaussian location
/// problem, Rao-Blackwellization on the mean-field factor, and a control
/// variate with correlation `rho`, each on `seeds` seeds.
pub fn variance_comparisons(settings: &BenchSettings, rng: &RngStream) -> Result<Vec<VarianceRow>> {
    let linear = FnIntegrand { f: |x: &[f64], _: &[f64]| x[0], grad: |_: &[f64], _: &[f64]| vec![0.0] };
    let mf = MeanFieldFactor { rho: 0.6 };
    let phi = [0.5, -0.3];
    let n = settings.pair_draws;
    (0..settings.seeds)
        .map(|seed| {
            let mut r = rng.child(seed as u64);
            let rf = reinforce_gradient(&linear, &GaussianLocation, &[0.4], n, &mut r)?;
            let rp = reparam_gradient(&Shift, &[0.4], n, &mut r)?;
            let draws = mf.draws(&phi, n, &mut r);
            let rb = rao_blackwellize(|a, b, p| mf.raw(a, b, p), |a, p| mf.conditional(a, p), &draws, &phi)?;
            let (g, c) = correlated_pairs(settings.rho, 1.0, n, &mut r);
            let raw = variance(&g.iter().map(|v| v[0]).collect::<Vec<_>>());
            let cv = control_variate(&g, &c, &[0.0])?;
            Ok(VarianceRow {
                seed,
                reinforce_variance: rf.meta.sample_variance[0],
                reparam_variance: rp.meta.sample_variance[0],
                raw_score_variance: rb.raw.meta.sample_variance[0],
                rao_blackwell_variance: rb.rao_blackwell.meta.sample_variance[0],
                cv_variance_ratio: cv.meta.sample_variance[0] / raw,
            })
        })
        .collect()
}
