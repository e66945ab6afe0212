//! States, targets, kernels and chain driving.

mod chain;
mod kernel;
mod slice;

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use chain::{read_trace_csv, run_chain, write_acceptance_json, write_trace_csv, ChainTrace};
pub use kernel::{
    compose_kernels, mh_accept, mix_kernels, rwmh_kernel, AcceptanceCounter, AcceptanceStats,
    ComposeKernel, IidKernel, ImhKernel, IndependentProposal, MarkovKernel, MixKernel,
    RwmhKernel, SharedKernel, SharedProposal,
};
pub use slice::{slice_kernel, SliceKernel, DEFAULT_SLICE_WIDTH, MAX_EXPANSIONS};

/// A point of the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn zeros(d: usize) -> Self {
        StateVector(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(v)
    }
}

/// Unnormalized log density. Implementations must be deterministic.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Number of additive components, when the log density is a sum.
    fn component_count(&self) -> Option<usize> {
        None
    }

    /// The `i`-th additive component. Only meaningful when
    /// `component_count` is `Some`.
    fn component_log_density(&self, _i: usize, _x: &[f64]) -> f64 {
        f64::NAN
    }
}

pub type SharedTarget = Arc<dyn TargetDensity>;

/// Identity of two shared targets (same allocation).
pub fn same_target(a: &SharedTarget, b: &SharedTarget) -> bool {
    std::ptr::eq(Arc::as_ptr(a) as *const (), Arc::as_ptr(b) as *const ())
}

/// Target defined by a closure.
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnTarget { dim, f }
    }

    pub fn shared(dim: usize, f: F) -> SharedTarget
    where
        F: 'static,
    {
        Arc::new(Self::new(dim, f))
    }
}

impl<F> TargetDensity for FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> crate::Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(crate::Error::Dimension { expected, got })
    }
}
