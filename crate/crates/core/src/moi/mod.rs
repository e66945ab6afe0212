//! The adaptive loop `phi_{t+1} = phi_t + gamma_t g(X_t, phi_t)` followed by
//! `n_t` steps of `kappa_{phi_{t+1}}`, and law-of-large-numbers diagnostics.

pub mod problems;

use serde::{Deserialize, Serialize};

use crate::mcmc::{SharedKernel, SharedTarget, StateVector};
use crate::optim::{sgd_step, OptimizerState, StepSchedule};
use crate::rng::RngStream;
use crate::stats::mcse;
use crate::{Error, Result};

/// An MOI problem: a parameterized target, an invariant kernel for it and the
/// mean-zero field `g`.
pub trait MoiProblem: Send + Sync {
    fn param_dim(&self) -> usize;

    /// `pi_phi`.
    fn target(&self, phi: &[f64]) -> Result<SharedTarget>;

    /// `kappa_phi`, invariant for `pi_phi`.
    fn kernel(&self, phi: &[f64]) -> Result<SharedKernel>;

    /// `g(x, phi)`.
    fn field(&self, x: &[f64], phi: &[f64]) -> Vec<f64>;

    /// Integrand `f(x, phi)` when `g = -grad_phi f`.
    fn objective(&self, _x: &[f64], _phi: &[f64]) -> Option<f64> {
        None
    }

    /// Deterministic `g(phi) = E_{pi_phi}[g(X, phi)]`, when known.
    fn mean_field(&self, _phi: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Number of kernel steps per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NtSchedule {
    Constant { n: usize },
    /// `ceil(1 + ln(1 + t))`.
    LogGrowth,
    /// `ceil(1 + log2(1 + t))`.
    Log2Growth,
}

impl Default for NtSchedule {
    fn default() -> Self {
        NtSchedule::Constant { n: 1 }
    }
}

impl NtSchedule {
    pub fn at(&self, t: usize) -> usize {
        match self {
            NtSchedule::Constant { n } => *n,
            NtSchedule::LogGrowth => (1.0 + (1.0 + t as f64).ln()).ceil() as usize,
            NtSchedule::Log2Growth => (1.0 + (1.0 + t as f64).log2()).ceil() as usize,
        }
    }
}

/// `(phi_t, X_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub opt: OptimizerState,
    pub x: StateVector,
}

impl AdaptiveState {
    pub fn new(phi0: Vec<f64>, x0: StateVector) -> Self {
        AdaptiveState { opt: OptimizerState::new(phi0), x: x0 }
    }

    pub fn phi(&self) -> &[f64] {
        &self.opt.phi
    }

    pub fn t(&self) -> usize {
        self.opt.t
    }
}

/// One iteration: parameter update with the current state, then `n_t` steps
/// of the kernel at the new parameter.
pub fn adaptive_step(
    problem: &dyn MoiProblem,
    state: &mut AdaptiveState,
    schedule: &StepSchedule,
    nt: &NtSchedule,
    rng: &mut RngStream,
) -> Result<()> {
    let t = state.t();
    let g = problem.field(&state.x, state.phi());
    if g.len() != problem.param_dim() {
        return Err(Error::Dimension { expected: problem.param_dim(), got: g.len() });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("g(X_t, phi_t) = {g:?}")).context(format!("t = {t}, phi = {:?}", state.phi())));
    }
    sgd_step(&mut state.opt, &g, schedule)?;
    let kernel = problem
        .kernel(state.phi())
        .map_err(|e| e.context(format!("building kernel at t = {}, phi = {:?}", t + 1, state.phi())))?;
    let dim = state.x.dim();
    for _ in 0..nt.at(t) {
        state.x = kernel
            .step(&state.x, rng)
            .map_err(|e| e.context(format!("kernel step at t = {}, phi = {:?}", t + 1, state.phi())))?;
    }
    if state.x.dim() != dim {
        return Err(Error::Dimension { expected: dim, got: state.x.dim() });
    }
    Ok(())
}

/// Traces of a run: `phi_0..phi_T`, `X_0..X_T` and the field norm at each
/// `t < T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoiTrace {
    pub phi: Vec<Vec<f64>>,
    pub x: Vec<StateVector>,
    pub g_norm: Vec<f64>,
}

impl MoiTrace {
    /// Indices kept when writing diagnostics: every `ceil(T / 1000)` steps
    /// plus the last.
    pub fn snapshot_indices(&self) -> Vec<usize> {
        let n = self.phi.len();
        let every = n.div_ceil(1000).max(1);
        let mut idx: Vec<usize> = (0..n).step_by(every).collect();
        if idx.last() != Some(&(n - 1)) {
            idx.push(n - 1);
        }
        idx
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `T` adaptive steps from `(phi0, x0)`.
pub fn run_moi(
    problem: &dyn MoiProblem,
    phi0: Vec<f64>,
    x0: StateVector,
    schedule: &StepSchedule,
    nt: &NtSchedule,
    steps: usize,
    rng: &mut RngStream,
) -> Result<MoiTrace> {
    if steps == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    if phi0.len() != problem.param_dim() {
        return Err(Error::Dimension { expected: problem.param_dim(), got: phi0.len() });
    }
    let mut state = AdaptiveState::new(phi0, x0);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut g_norm = Vec::with_capacity(steps);
    xs.push(state.x.clone());
    for _ in 0..steps {
        let gn = match problem.mean_field(state.phi()) {
            Some(g) => norm(&g),
            None => norm(&problem.field(&state.x, state.phi())),
        };
        g_norm.push(gn);
        adaptive_step(problem, &mut state, schedule, nt, rng)?;
        xs.push(state.x.clone());
    }
    Ok(MoiTrace { phi: state.opt.trajectory().to_vec(), x: xs, g_norm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnReport {
    /// `(1/t) sum_{s <= t} h(X_s)` for `t = 1..T`.
    pub running: Vec<f64>,
    pub final_error: f64,
    /// Batch-means standard error of the final average.
    pub se: f64,
}

pub fn lln_check(x_trace: &[StateVector], h: impl Fn(&[f64]) -> f64, reference_mean: f64) -> Result<LlnReport> {
    if x_trace.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let hs: Vec<f64> = x_trace.iter().map(|x| h(x)).collect();
    let mut running = Vec::with_capacity(hs.len());
    let mut sum = 0.0;
    for (i, v) in hs.iter().enumerate() {
        sum += v;
        running.push(sum / (i + 1) as f64);
    }
    let final_error = running[running.len() - 1] - reference_mean;
    Ok(LlnReport { running, final_error, se: mcse(&hs) })
}

/// Run configuration for the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoiRunConfig {
    pub problem_name: String,
    pub phi0: Vec<f64>,
    pub schedule: StepSchedule,
    #[serde(default)]
    pub nt: NtSchedule,
    #[serde(rename = "T")]
    pub steps: usize,
    pub seed: u64,
}
