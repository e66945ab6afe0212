use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{check_dim, same_target, SharedTarget, StateVector};
use crate::rng::RngStream;
use crate::{Error, Result};

/// A transition rule leaving `target()` invariant.
pub trait MarkovKernel: Send + Sync {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector>;

    fn target(&self) -> &SharedTarget;

    /// Cumulative accept/step counts, for kernels with an accept decision.
    fn acceptance(&self) -> Option<AcceptanceStats> {
        None
    }
}

pub type SharedKernel = Arc<dyn MarkovKernel>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub accept_count: u64,
    pub step_count: u64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        if self.step_count == 0 {
            f64::NAN
        } else {
            self.accept_count as f64 / self.step_count as f64
        }
    }

    pub fn rejection_rate(&self) -> f64 {
        1.0 - self.rate()
    }

    pub fn since(&self, earlier: &AcceptanceStats) -> AcceptanceStats {
        AcceptanceStats {
            accept_count: self.accept_count - earlier.accept_count,
            step_count: self.step_count - earlier.step_count,
        }
    }
}

/// Thread-safe running acceptance counts.
#[derive(Debug, Default)]
pub struct AcceptanceCounter {
    accepts: AtomicU64,
    steps: AtomicU64,
}

impl AcceptanceCounter {
    pub fn record(&self, accepted: bool) {
        self.steps.fetch_add(1, Ordering::Relaxed);
        if accepted {
            self.accepts.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> AcceptanceStats {
        AcceptanceStats {
            accept_count: self.accepts.load(Ordering::Relaxed),
            step_count: self.steps.load(Ordering::Relaxed),
        }
    }
}

/// Metropolis decision `ln u < min(0, log_ratio)`, entirely in log space.
pub fn mh_accept(log_ratio: f64, u: f64) -> Result<bool> {
    if log_ratio.is_nan() {
        return Err(Error::InvalidDensity("NaN log acceptance ratio".into()));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("uniform draw {u} outside [0, 1)")));
    }
    Ok(u.ln() < log_ratio.min(0.0))
}

fn check_log_density(v: f64, what: &str) -> Result<f64> {
    if v.is_nan() || v == f64::INFINITY {
        Err(Error::InvalidDensity(format!("{what} log density is {v}")))
    } else {
        Ok(v)
    }
}

/// Remembers the log density of the last accepted state so chains do not
/// re-evaluate it on the next step.
#[derive(Debug, Default)]
struct DensityCache(Mutex<Option<(Vec<f64>, [f64; 2])>>);

impl DensityCache {
    fn get(&self, x: &[f64]) -> Option<[f64; 2]> {
        let guard = self.0.lock().unwrap_or_else(|e| e.into_inner());
        match &*guard {
            Some((y, v)) if y.as_slice() == x => Some(*v),
            _ => None,
        }
    }

    fn put(&self, x: &[f64], v: [f64; 2]) {
        let mut guard = self.0.lock().unwrap_or_else(|e| e.into_inner());
        *guard = Some((x.to_vec(), v));
    }
}

/// Random-walk Metropolis with isotropic Gaussian increments.
pub struct RwmhKernel {
    target: SharedTarget,
    step_sd: f64,
    counter: AcceptanceCounter,
    cache: DensityCache,
}

impl RwmhKernel {
    pub fn new(target: SharedTarget, step_sd: f64) -> Result<Self> {
        if !(step_sd > 0.0 && step_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("step_sd must be positive, got {step_sd}")));
        }
        Ok(RwmhKernel { target, step_sd, counter: AcceptanceCounter::default(), cache: DensityCache::default() })
    }

    pub fn step_sd(&self) -> f64 {
        self.step_sd
    }
}

pub fn rwmh_kernel(target: SharedTarget, step_sd: f64) -> Result<RwmhKernel> {
    RwmhKernel::new(target, step_sd)
}

impl MarkovKernel for RwmhKernel {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        check_dim(self.target.dim(), x.dim())?;
        let proposal: Vec<f64> = x.iter().map(|v| v + self.step_sd * rng.normal()).collect();
        let u = rng.uniform();
        let lp_old = match self.cache.get(x) {
            Some([v, _]) => v,
            None => check_log_density(self.target.log_density(x), "current")?,
        };
        let lp_new = check_log_density(self.target.log_density(&proposal), "proposed")?;
        let accept = if lp_new == f64::NEG_INFINITY {
            false
        } else if lp_old == f64::NEG_INFINITY {
            true
        } else {
            mh_accept(lp_new - lp_old, u)?
        };
        self.counter.record(accept);
        if accept {
            self.cache.put(&proposal, [lp_new, 0.0]);
            Ok(StateVector(proposal))
        } else {
            self.cache.put(x, [lp_old, 0.0]);
            Ok(x.clone())
        }
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }

    fn acceptance(&self) -> Option<AcceptanceStats> {
        Some(self.counter.snapshot())
    }
}

/// A distribution that can be sampled exactly and evaluated.
pub trait IndependentProposal: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut RngStream) -> StateVector;
    fn log_density(&self, x: &[f64]) -> f64;
}

pub type SharedProposal = Arc<dyn IndependentProposal>;

/// Ignores the current state and draws from `proposal`. Only invariant for
/// `target` when the two coincide up to normalization.
pub struct IidKernel {
    proposal: SharedProposal,
    target: SharedTarget,
}

impl IidKernel {
    pub fn new(proposal: SharedProposal, target: SharedTarget) -> Result<Self> {
        check_dim(target.dim(), proposal.dim())?;
        Ok(IidKernel { proposal, target })
    }
}

impl MarkovKernel for IidKernel {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        check_dim(self.target.dim(), x.dim())?;
        Ok(self.proposal.sample(rng))
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }
}

/// Independence Metropolis-Hastings.
pub struct ImhKernel {
    proposal: SharedProposal,
    target: SharedTarget,
    counter: AcceptanceCounter,
    cache: DensityCache,
}

impl ImhKernel {
    pub fn new(proposal: SharedProposal, target: SharedTarget) -> Result<Self> {
        check_dim(target.dim(), proposal.dim())?;
        Ok(ImhKernel { proposal, target, counter: AcceptanceCounter::default(), cache: DensityCache::default() })
    }

    pub fn proposal(&self) -> &SharedProposal {
        &self.proposal
    }

    pub fn rejection_rate(&self) -> f64 {
        self.counter.snapshot().rejection_rate()
    }
}

impl MarkovKernel for ImhKernel {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        check_dim(self.target.dim(), x.dim())?;
        let z = self.proposal.sample(rng);
        let u = rng.uniform();
        let [lp_old, lq_old] = match self.cache.get(x) {
            Some(v) => v,
            None => [
                check_log_density(self.target.log_density(x), "current")?,
                check_log_density(self.proposal.log_density(x), "current proposal")?,
            ],
        };
        let lp_new = check_log_density(self.target.log_density(&z), "proposed")?;
        let lq_new = check_log_density(self.proposal.log_density(&z), "proposal")?;
        let accept = if lp_new == f64::NEG_INFINITY || lq_new == f64::NEG_INFINITY {
            false
        } else if lq_old == f64::NEG_INFINITY || lp_old == f64::NEG_INFINITY {
            true
        } else {
            mh_accept((lp_new + lq_old) - (lp_old + lq_new), u)?
        };
        self.counter.record(accept);
        if accept {
            self.cache.put(&z, [lp_new, lq_new]);
            Ok(z)
        } else {
            self.cache.put(x, [lp_old, lq_old]);
            Ok(x.clone())
        }
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }

    fn acceptance(&self) -> Option<AcceptanceStats> {
        Some(self.counter.snapshot())
    }
}

fn check_shared(kernels: &[SharedKernel]) -> Result<SharedTarget> {
    let first = kernels
        .first()
        .ok_or_else(|| Error::InvalidArgument("no kernels to combine".into()))?
        .target()
        .clone();
    for (i, k) in kernels.iter().enumerate().skip(1) {
        if !same_target(&first, k.target()) {
            return Err(Error::TargetMismatch(format!("kernel {i} has a different target than kernel 0")));
        }
    }
    Ok(first)
}

/// Applies its kernels in order.
pub struct ComposeKernel {
    kernels: Vec<SharedKernel>,
    target: SharedTarget,
}

pub fn compose_kernels(kernels: Vec<SharedKernel>) -> Result<ComposeKernel> {
    let target = check_shared(&kernels)?;
    Ok(ComposeKernel { kernels, target })
}

impl ComposeKernel {
    pub fn kernels(&self) -> &[SharedKernel] {
        &self.kernels
    }
}

impl MarkovKernel for ComposeKernel {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        let mut cur = self.kernels[0].step(x, rng)?;
        for k in &self.kernels[1..] {
            cur = k.step(&cur, rng)?;
        }
        Ok(cur)
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }
}

/// Random mixture: the adaptive kernel with probability `weight`.
pub struct MixKernel {
    adaptive: SharedKernel,
    fixed: SharedKernel,
    weight: f64,
}

pub fn mix_kernels(adaptive: SharedKernel, fixed: SharedKernel, weight: f64) -> Result<MixKernel> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidArgument(format!("mixture weight {weight} outside [0, 1]")));
    }
    check_shared(&[adaptive.clone(), fixed.clone()])?;
    Ok(MixKernel { adaptive, fixed, weight })
}

impl MarkovKernel for MixKernel {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        // Degenerate weights consume no randomness, so they replay the
        // chosen kernel exactly.
        if self.weight >= 1.0 {
            return self.adaptive.step(x, rng);
        }
        if self.weight <= 0.0 {
            return self.fixed.step(x, rng);
        }
        if rng.uniform() < self.weight {
            self.adaptive.step(x, rng)
        } else {
            self.fixed.step(x, rng)
        }
    }

    fn target(&self) -> &SharedTarget {
        self.adaptive.target()
    }
}
