use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{default_explorers, nrpt_run, AnnealingPath, ReplicaEnsemble, Schedule};
use crate::mcmc::{run_chain, ImhKernel, IndependentProposal, MarkovKernel, SharedProposal, SharedTarget, StateVector};
use crate::models::DiagNormal;
use crate::rng::RngStream;
use crate::stats::ess;
use crate::{Error, Result};

pub const MIN_ESS_SAMPLES: usize = 100;

/// Per-coordinate effective sample size divided by `wall_time` seconds.
pub fn ess_per_second(trace: &[StateVector], wall_time: f64) -> Result<Vec<f64>> {
    if trace.len() < MIN_ESS_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "ESS needs at least {MIN_ESS_SAMPLES} samples, got {}",
            trace.len()
        )));
    }
    if !(wall_time > 0.0) {
        return Err(Error::InvalidArgument(format!("wall time must be positive, got {wall_time}")));
    }
    let d = trace[0].dim();
    Ok((0..d)
        .map(|i| ess(&trace.iter().map(|x| x[i]).collect::<Vec<_>>()) / wall_time)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub d: usize,
    /// `N + 1`, with `N = ceil(2 sqrt(d))`.
    pub n_chains: usize,
    pub imh_acceptance: f64,
    pub mean_swap_acceptance: f64,
    pub min_swap_acceptance: f64,
    pub round_trips: usize,
}

/// IMH from `N(0, reference_sd^2)^d` against NRPT with the same reference on
/// the target `N(0, 1)^d`, for each `d`.
pub fn pt_scaling(dims: &[usize], reference_sd: f64, sweeps: usize, rng: &RngStream) -> Result<Vec<ScalingRow>> {
    if sweeps == 0 {
        return Err(Error::InvalidArgument("need at least one sweep".into()));
    }
    dims.iter()
        .map(|&d| {
            if d == 0 {
                return Err(Error::InvalidArgument("dimension must be positive".into()));
            }
            let stream = rng.child(d as u64);
            let target = DiagNormal::isotropic(d, 0.0, 1.0).shared();
            let reference: SharedProposal = Arc::new(DiagNormal::isotropic(d, 0.0, reference_sd));
            let target_dyn: SharedTarget = target.clone();

            let imh = ImhKernel::new(reference.clone(), target_dyn.clone())?;
            let mut r = stream.child(0);
            let x0 = target.sample(&mut r);
            run_chain(&imh, &x0, sweeps, &mut r)?;
            let imh_acceptance = imh.acceptance().map_or(f64::NAN, |s| s.rate());

            let n = (2.0 * (d as f64).sqrt()).ceil() as usize;
            let schedule = Schedule::uniform(n);
            let path = AnnealingPath::single_leg(reference.clone(), target_dyn)?;
            let kernels = default_explorers(&path, &schedule)?;
            let mut r = stream.child(1);
            let states = (0..schedule.len()).map(|_| reference.sample(&mut r)).collect();
            let ensemble = ReplicaEnsemble::new(states, schedule)?;
            let out = nrpt_run(&path, &kernels, ensemble, sweeps, &stream.child(2))?;
            let rates: Vec<f64> = out.swap_stats().iter().map(|s| s.rate()).collect();
            Ok(ScalingRow {
                d,
                n_chains: n + 1,
                imh_acceptance,
                mean_swap_acceptance: out.ensemble.mean_swap_rate(),
                min_swap_acceptance: rates.iter().cloned().fold(f64::INFINITY, f64::min),
                round_trips: out.round_trips().len(),
            })
        })
        .collect()
}
