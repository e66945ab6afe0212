//! Non-reversible parallel tempering with deterministic even-odd swaps, over
//! annealing paths whose reference can be tuned variationally.

mod scaling;
mod vpt;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mcmc::{
    mh_accept, slice_kernel, IidKernel, SharedKernel, SharedProposal, SharedTarget, StateVector, TargetDensity,
    DEFAULT_SLICE_WIDTH,
};
use crate::rng::RngStream;
use crate::{Error, Result};

pub use scaling::{ess_per_second, pt_scaling, ScalingRow, MIN_ESS_SAMPLES};
pub use vpt::{
    tune_variational_reference, two_leg_vs_single_leg, ModeRetention, VptConfig, VptRound, VptRun,
};

#[derive(Clone)]
pub enum PathKind {
    /// `q^{1 - beta} pi^beta`.
    SingleLeg,
    /// `q` at 0, `pi` at 1/2, the fixed reference `pi0` at 1.
    TwoLeg { fixed: SharedProposal },
}

/// Annealing path between a reference `q` and the target `pi`.
#[derive(Clone)]
pub struct AnnealingPath {
    pub kind: PathKind,
    pub reference: SharedProposal,
    pub target: SharedTarget,
}

/// `a log p + b log q` that treats zero weights as absent, so that
/// `0 * -inf` never appears.
fn weighted(a: f64, lp: impl FnOnce() -> f64, b: f64, lq: impl FnOnce() -> f64) -> f64 {
    match (a == 0.0, b == 0.0) {
        (true, true) => 0.0,
        (true, false) => b * lq(),
        (false, true) => a * lp(),
        (false, false) => a * lp() + b * lq(),
    }
}

impl AnnealingPath {
    pub fn single_leg(reference: SharedProposal, target: SharedTarget) -> Result<Self> {
        crate::mcmc::check_dim(target.dim(), reference.dim())?;
        Ok(AnnealingPath { kind: PathKind::SingleLeg, reference, target })
    }

    pub fn two_leg(reference: SharedProposal, fixed: SharedProposal, target: SharedTarget) -> Result<Self> {
        crate::mcmc::check_dim(target.dim(), reference.dim())?;
        crate::mcmc::check_dim(target.dim(), fixed.dim())?;
        Ok(AnnealingPath { kind: PathKind::TwoLeg { fixed }, reference, target })
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn is_two_leg(&self) -> bool {
        matches!(self.kind, PathKind::TwoLeg { .. })
    }

    /// Position of the target on the path.
    pub fn target_beta(&self) -> f64 {
        if self.is_two_leg() {
            0.5
        } else {
            1.0
        }
    }

    pub fn log_density_at(&self, beta: f64, x: &[f64]) -> f64 {
        let lq = || self.reference.log_density(x);
        let lp = || self.target.log_density(x);
        match &self.kind {
            PathKind::SingleLeg => weighted(1.0 - beta, lq, beta, lp),
            PathKind::TwoLeg { fixed } => {
                if beta <= 0.5 {
                    weighted(1.0 - 2.0 * beta, lq, 2.0 * beta, lp)
                } else {
                    weighted(2.0 * beta - 1.0, || fixed.log_density(x), 2.0 - 2.0 * beta, lp)
                }
            }
        }
    }

    /// Exact sampler for `pi_beta`, available at the reference ends.
    pub fn exact_sampler(&self, beta: f64) -> Option<SharedProposal> {
        match &self.kind {
            _ if beta == 0.0 => Some(self.reference.clone()),
            PathKind::TwoLeg { fixed } if beta == 1.0 => Some(fixed.clone()),
            _ => None,
        }
    }

    pub fn tempered(&self, beta: f64) -> SharedTarget {
        Arc::new(Tempered { path: self.clone(), beta })
    }
}

/// `pi_beta` as a target density.
pub struct Tempered {
    path: AnnealingPath,
    beta: f64,
}

impl Tempered {
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl TargetDensity for Tempered {
    fn dim(&self) -> usize {
        self.path.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.path.log_density_at(self.beta, x)
    }
}

/// `0 = beta_0 <= ... <= beta_N = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Schedule {
    betas: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Schedule {
    type Error = Error;
    fn try_from(betas: Vec<f64>) -> Result<Self> {
        Schedule::new(betas)
    }
}

impl From<Schedule> for Vec<f64> {
    fn from(s: Schedule) -> Vec<f64> {
        s.betas
    }
}

impl Schedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 1 {
            return Err(Error::InvalidArgument("a schedule needs at least one inverse temperature".into()));
        }
        if betas.len() == 1 {
            if betas[0] != 1.0 {
                return Err(Error::InvalidArgument("a single-chain schedule must be [1]".into()));
            }
        } else if betas[0] != 0.0 || *betas.last().expect("nonempty") != 1.0 {
            return Err(Error::InvalidArgument("schedule must start at 0 and end at 1".into()));
        }
        if betas.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidArgument(format!("schedule is not monotone: {betas:?}")));
        }
        Ok(Schedule { betas })
    }

    /// `N + 1` equally spaced points.
    pub fn uniform(n: usize) -> Self {
        if n == 0 {
            return Schedule { betas: vec![1.0] };
        }
        let betas = (0..=n).map(|i| if i == n { 1.0 } else { i as f64 / n as f64 }).collect();
        Schedule { betas }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Number of chains, `N + 1`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `N`.
    pub fn n(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn index_of(&self, beta: f64) -> Option<usize> {
        self.betas.iter().position(|b| *b == beta)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapStats {
    pub attempts: u64,
    pub accepts: u64,
}

impl SwapStats {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub replica: usize,
    pub sweep: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Leg {
    Unseen,
    /// Left the bottom, not yet at the top.
    Up,
    /// Reached the top, heading back down.
    Down,
}

/// States at each inverse temperature plus swap and round-trip bookkeeping.
#[derive(Debug, Clone)]
pub struct ReplicaEnsemble {
    pub states: Vec<StateVector>,
    pub schedule: Schedule,
    /// Per pair `(n, n + 1)`.
    pub swap_stats: Vec<SwapStats>,
    /// `replica_indices[n]` is the replica currently at `beta_n`.
    pub replica_indices: Vec<usize>,
    /// Sweeps completed.
    pub t: u64,
    pub round_trips: Vec<RoundTrip>,
    legs: Vec<Leg>,
}

impl ReplicaEnsemble {
    pub fn new(states: Vec<StateVector>, schedule: Schedule) -> Result<Self> {
        if states.len() != schedule.len() {
            return Err(Error::InvalidArgument(format!(
                "{} states for a schedule of {} chains",
                states.len(),
                schedule.len()
            )));
        }
        let n = states.len();
        let mut legs = vec![Leg::Unseen; n];
        legs[0] = Leg::Up;
        Ok(ReplicaEnsemble {
            states,
            swap_stats: vec![SwapStats::default(); n.saturating_sub(1)],
            replica_indices: (0..n).collect(),
            t: 0,
            round_trips: Vec::new(),
            schedule,
            legs,
        })
    }

    /// Every chain starts from `x0`.
    pub fn replicated(x0: StateVector, schedule: Schedule) -> Result<Self> {
        Self::new(vec![x0; schedule.len()], schedule)
    }

    pub fn mean_swap_rate(&self) -> f64 {
        let (a, n) = self.swap_stats.iter().fold((0u64, 0u64), |(a, n), s| (a + s.accepts, n + s.attempts));
        if n == 0 {
            f64::NAN
        } else {
            a as f64 / n as f64
        }
    }

    fn track(&mut self) {
        let last = self.replica_indices.len() - 1;
        if last == 0 {
            return;
        }
        let bottom = self.replica_indices[0];
        let top = self.replica_indices[last];
        if self.legs[top] == Leg::Up {
            self.legs[top] = Leg::Down;
        }
        match self.legs[bottom] {
            Leg::Down => {
                self.round_trips.push(RoundTrip { replica: bottom, sweep: self.t });
                self.legs[bottom] = Leg::Up;
            }
            Leg::Unseen => self.legs[bottom] = Leg::Up,
            Leg::Up => {}
        }
    }
}

/// One `pi_{beta_n}`-invariant kernel per chain: the exact sampler where the
/// path has one, a slice sampler elsewhere.
pub fn default_explorers(path: &AnnealingPath, schedule: &Schedule) -> Result<Vec<SharedKernel>> {
    schedule
        .betas()
        .iter()
        .map(|&b| -> Result<SharedKernel> {
            let target = path.tempered(b);
            Ok(match path.exact_sampler(b) {
                Some(q) => Arc::new(IidKernel::new(q, target)?),
                None => Arc::new(slice_kernel(target, DEFAULT_SLICE_WIDTH)?),
            })
        })
        .collect()
}

/// Streams for sweep `t`, one per chain.
pub fn sweep_streams(master: &RngStream, t: u64, chains: usize) -> Vec<RngStream> {
    let s = master.child(t);
    (0..chains).map(|n| s.child(n as u64)).collect()
}

/// Moves every chain once with its own kernel and stream.
pub fn local_exploration(ensemble: &mut ReplicaEnsemble, kernels: &[SharedKernel], streams: &mut [RngStream]) -> Result<()> {
    if kernels.len() != ensemble.states.len() || streams.len() != kernels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} chains, {} kernels, {} streams",
            ensemble.states.len(),
            kernels.len(),
            streams.len()
        )));
    }
    let moved: Vec<Result<StateVector>> = ensemble
        .states
        .par_iter()
        .zip(kernels.par_iter())
        .zip(streams.par_iter_mut())
        .enumerate()
        .map(|(n, ((x, k), rng))| k.step(x, rng).map_err(|e| e.context(format!("chain {n}"))))
        .collect();
    for (slot, x) in ensemble.states.iter_mut().zip(moved) {
        *slot = x?;
    }
    Ok(())
}

/// `log` of the swap ratio for chains at `beta_a`, `beta_b` holding `x_a`, `x_b`.
pub fn swap_log_ratio(path: &AnnealingPath, beta_a: f64, beta_b: f64, x_a: &[f64], x_b: &[f64]) -> f64 {
    if beta_a == beta_b {
        return 0.0;
    }
    (path.log_density_at(beta_a, x_b) + path.log_density_at(beta_b, x_a))
        - (path.log_density_at(beta_a, x_a) + path.log_density_at(beta_b, x_b))
}

/// Pairs attempted at sweep `t >= 1`: even `n` when `t - 1` is even.
pub fn deo_pairs(t: u64, n_chains: usize) -> impl Iterator<Item = usize> {
    let start = if (t - 1) % 2 == 0 { 0 } else { 1 };
    (start..n_chains.saturating_sub(1)).step_by(2)
}

/// DEO swap phase of sweep `ensemble.t + 1`. The uniform for pair
/// `(n, n + 1)` comes from `streams[n]`.
pub fn deo_swap(ensemble: &mut ReplicaEnsemble, path: &AnnealingPath, streams: &mut [RngStream]) -> Result<()> {
    let t = ensemble.t + 1;
    let betas = ensemble.schedule.betas().to_vec();
    for n in deo_pairs(t, betas.len()) {
        let lr = swap_log_ratio(path, betas[n], betas[n + 1], &ensemble.states[n], &ensemble.states[n + 1]);
        let lr = if lr.is_nan() { f64::NEG_INFINITY } else { lr };
        let accept = mh_accept(lr, streams[n].uniform())?;
        ensemble.swap_stats[n].attempts += 1;
        if accept {
            ensemble.swap_stats[n].accepts += 1;
            ensemble.states.swap(n, n + 1);
            ensemble.replica_indices.swap(n, n + 1);
        }
    }
    ensemble.t = t;
    ensemble.track();
    Ok(())
}

/// One sweep: local exploration, then the DEO swap phase.
pub fn nrpt_sweep(ensemble: &mut ReplicaEnsemble, path: &AnnealingPath, kernels: &[SharedKernel], master: &RngStream) -> Result<()> {
    let t = ensemble.t + 1;
    let mut streams = sweep_streams(master, t, ensemble.states.len());
    local_exploration(ensemble, kernels, &mut streams).map_err(|e| e.context(format!("sweep {t}")))?;
    deo_swap(ensemble, path, &mut streams)
}

#[derive(Debug, Clone)]
pub struct NrptOutput {
    /// States of the chain at the target's inverse temperature, one per sweep.
    pub target_trace: Vec<StateVector>,
    pub target_index: usize,
    pub ensemble: ReplicaEnsemble,
}

impl NrptOutput {
    pub fn swap_stats(&self) -> &[SwapStats] {
        &self.ensemble.swap_stats
    }

    pub fn round_trips(&self) -> &[RoundTrip] {
        &self.ensemble.round_trips
    }
}

/// Index of the chain holding the target; a two-leg schedule must contain 1/2.
pub fn target_index(path: &AnnealingPath, schedule: &Schedule) -> Result<usize> {
    schedule.index_of(path.target_beta()).ok_or_else(|| {
        Error::InvalidArgument(format!("schedule {:?} does not contain beta = {}", schedule.betas(), path.target_beta()))
    })
}

/// Runs `sweeps` NRPT sweeps from `ensemble`.
pub fn nrpt_run(
    path: &AnnealingPath,
    kernels: &[SharedKernel],
    mut ensemble: ReplicaEnsemble,
    sweeps: usize,
    rng: &RngStream,
) -> Result<NrptOutput> {
    if sweeps == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    let target_index = target_index(path, &ensemble.schedule)?;
    let mut target_trace = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        nrpt_sweep(&mut ensemble, path, kernels, rng)?;
        let x = &ensemble.states[target_index];
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("target chain at sweep {}: {:?}", ensemble.t, x.0)));
        }
        target_trace.push(x.clone());
    }
    Ok(NrptOutput { target_trace, target_index, ensemble })
}

#[cfg(test)]
mod tests;
