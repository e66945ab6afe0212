use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{default_explorers, nrpt_run, AnnealingPath, ReplicaEnsemble, Schedule};
use crate::expfam::{forward_kl_optimum, DiagGaussian, ExpFamProposal, MomentParams, SharedFamily, SuffStatAccumulator};
use crate::mcmc::{SharedProposal, SharedTarget, StateVector};
use crate::models::{DiagNormal, SymmetricBimodal};
use crate::rng::RngStream;
use crate::stats::mcse;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VptRound {
    pub round: usize,
    pub sweeps: usize,
    /// Reference moments used during the round.
    pub phi: Vec<f64>,
    /// Mean statistic of the round's target chain.
    pub phi_next: Vec<f64>,
    /// Monte Carlo standard errors of `phi_next`.
    pub phi_se: Vec<f64>,
    pub swap_rate: f64,
    pub round_trips: usize,
    /// Moments were infeasible and `phi` was kept.
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct VptRun {
    pub rounds: Vec<VptRound>,
    /// `phi^(0), phi^(1), ..., phi^(R)`.
    pub phi_trajectory: Vec<Vec<f64>>,
    /// Target-chain trace of the last round.
    pub final_trace: Vec<StateVector>,
    pub ensemble: ReplicaEnsemble,
}

impl VptRun {
    pub fn final_phi(&self) -> &[f64] {
        self.phi_trajectory.last().expect("nonempty trajectory")
    }
}

/// Round `r = 1..=R` runs NRPT for `2^r` sweeps with the diagonal Gaussian
/// reference of moments `phi^(r-1)`, then sets `phi^(r)` to the mean
/// sufficient statistic of the round's target chain.
pub fn tune_variational_reference(
    build_path: impl Fn(SharedProposal) -> Result<AnnealingPath>,
    phi0: MomentParams,
    mut ensemble: ReplicaEnsemble,
    rounds: usize,
    rng: &RngStream,
) -> Result<VptRun> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("at least one round is required".into()));
    }
    let dim = ensemble.states[0].dim();
    let family: SharedFamily = Arc::new(DiagGaussian::new(dim));
    if phi0.0.len() != family.stat_dim() {
        return Err(Error::Dimension { expected: family.stat_dim(), got: phi0.0.len() });
    }
    let mut phi = phi0;
    let mut trajectory = vec![phi.0.clone()];
    let mut records = Vec::with_capacity(rounds);
    let mut final_trace = Vec::new();
    for r in 1..=rounds {
        let reference = ExpFamProposal::from_moments(family.clone(), &phi).map_err(|e| e.context(format!("round {r}")))?;
        let path = build_path(Arc::new(reference))?;
        let kernels = default_explorers(&path, &ensemble.schedule)?;
        let trips_before = ensemble.round_trips.len();
        let stats_before = ensemble.swap_stats.clone();
        let sweeps = 1usize << r;
        let out = nrpt_run(&path, &kernels, ensemble, sweeps, &rng.child(r as u64)).map_err(|e| e.context(format!("round {r}")))?;
        ensemble = out.ensemble;

        let stats: Vec<Vec<f64>> = out.target_trace.iter().map(|x| family.suff_stat(x)).collect();
        let mut acc = SuffStatAccumulator::new(family.stat_dim());
        stats.iter().for_each(|s| acc.update(s));
        let phi_se = (0..family.stat_dim())
            .map(|j| mcse(&stats.iter().map(|s| s[j]).collect::<Vec<_>>()))
            .collect();
        let (next, flagged) = match forward_kl_optimum(family.as_ref(), &acc) {
            Ok(p) if family.is_feasible_moment(&p.0) => (p, false),
            _ => (phi.clone(), true),
        };
        let (acc_n, att_n) = ensemble
            .swap_stats
            .iter()
            .zip(&stats_before)
            .fold((0, 0), |(a, n), (s, b)| (a + s.accepts - b.accepts, n + s.attempts - b.attempts));
        records.push(VptRound {
            round: r,
            sweeps,
            phi: phi.0.clone(),
            phi_next: acc.mean(),
            phi_se,
            swap_rate: if att_n == 0 { f64::NAN } else { acc_n as f64 / att_n as f64 },
            round_trips: ensemble.round_trips.len() - trips_before,
            flagged,
        });
        phi = next;
        trajectory.push(phi.0.clone());
        final_trace = out.target_trace;
    }
    Ok(VptRun { rounds: records, phi_trajectory: trajectory, final_trace, ensemble })
}

/// Asymmetric-initialization bimodal benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VptConfig {
    /// Modes at `-m` and `+m`.
    pub m: f64,
    pub sd: f64,
    /// `N`; the schedule has `N + 1` chains. Even, so two-leg paths hit 1/2.
    pub n: usize,
    pub rounds: usize,
    /// Standard deviation of the fixed reference of the two-leg path.
    pub fixed_sd: f64,
    /// Smallest mode occupancy counted as retaining a mode.
    pub retain_threshold: f64,
    /// Largest mode occupancy counted as a collapse.
    pub collapse_threshold: f64,
}

impl Default for VptConfig {
    fn default() -> Self {
        VptConfig { m: 4.0, sd: 0.5, n: 10, rounds: 10, fixed_sd: 5.0, retain_threshold: 0.2, collapse_threshold: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRetention {
    pub seeds: usize,
    /// Smaller of the two mode fractions in the last round, per seed.
    pub two_leg_min_fraction: Vec<f64>,
    pub single_leg_min_fraction: Vec<f64>,
    pub two_leg_retained: usize,
    pub single_leg_collapsed: usize,
}

fn min_mode_fraction(target: &SymmetricBimodal, trace: &[StateVector]) -> f64 {
    let pos = trace.iter().filter(|x| target.in_positive_mode(x)).count() as f64 / trace.len() as f64;
    pos.min(1.0 - pos)
}

impl VptConfig {
    pub fn target(&self) -> SymmetricBimodal {
        SymmetricBimodal { d: 1, m: self.m, sd: self.sd }
    }

    /// Runs one seed; the reference and every chain start in the positive mode.
    pub fn run(&self, two_leg: bool, rng: &RngStream) -> Result<VptRun> {
        if two_leg && self.n % 2 != 0 {
            return Err(Error::InvalidArgument("two-leg paths need an even N".into()));
        }
        let target: SharedTarget = Arc::new(self.target());
        let fixed: SharedProposal = Arc::new(DiagNormal::isotropic(1, 0.0, self.fixed_sd));
        let phi0 = MomentParams(DiagGaussian::moments_from_mean_var(&[self.m], &[self.sd * self.sd]));
        let ensemble = ReplicaEnsemble::replicated(StateVector(vec![self.m]), Schedule::uniform(self.n))?;
        let build = |q: SharedProposal| {
            if two_leg {
                AnnealingPath::two_leg(q, fixed.clone(), target.clone())
            } else {
                AnnealingPath::single_leg(q, target.clone())
            }
        };
        tune_variational_reference(build, phi0, ensemble, self.rounds, rng)
    }
}

/// Runs both path kinds on `seeds` seeds of the benchmark.
pub fn two_leg_vs_single_leg(config: &VptConfig, seeds: usize, master: &RngStream) -> Result<ModeRetention> {
    let target = config.target();
    let runs: Vec<Result<(f64, f64)>> = crate::theorylab::replicate(seeds, master, |rng| {
        let two = config.run(true, &rng.child(0))?;
        let one = config.run(false, &rng.child(1))?;
        Ok((min_mode_fraction(&target, &two.final_trace), min_mode_fraction(&target, &one.final_trace)))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let two_leg_min_fraction: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let single_leg_min_fraction: Vec<f64> = runs.iter().map(|r| r.1).collect();
    Ok(ModeRetention {
        seeds,
        two_leg_retained: two_leg_min_fraction.iter().filter(|f| **f >= config.retain_threshold).count(),
        single_leg_collapsed: single_leg_min_fraction.iter().filter(|f| **f < config.collapse_threshold).count(),
        two_leg_min_fraction,
        single_leg_min_fraction,
    })
}
