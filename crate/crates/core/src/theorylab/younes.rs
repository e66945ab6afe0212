use std::sync::Arc;

use serde::Serialize;

use super::replicate;
use crate::mcmc::{FnTarget, MarkovKernel, SharedKernel, SharedTarget, StateVector};
use crate::moi::{adaptive_step, AdaptiveState, MoiProblem, NtSchedule};
use crate::optim::StepSchedule;
use crate::rng::RngStream;
use crate::stats::{mean, std_error};
use crate::{Error, Result};

/// `f(x, phi)` for `x in {+1, -1}`: strongly convex in mean with minimizer 0.
pub fn younes_objective(x: f64, phi: f64) -> f64 {
    match (x > 0.0, phi <= 0.0) {
        (true, true) => (phi - 1.0).powi(2),
        (true, false) => 1.0 - 2.0 * phi,
        (false, true) => 1.0 + 2.0 * phi,
        (false, false) => (1.0 + phi).powi(2),
    }
}

/// `g(x, phi) = -d f(x, phi) / d phi`.
pub fn younes_field(x: f64, phi: f64) -> f64 {
    match (x > 0.0, phi <= 0.0) {
        (true, true) => 2.0 - 2.0 * phi,
        (true, false) => 2.0,
        (false, true) => -2.0,
        (false, false) => -2.0 * (1.0 + phi),
    }
}

fn toggle_probability(phi: f64) -> f64 {
    (-(phi.abs().exp())).exp()
}

/// Toggles `+1 <-> -1` with probability `exp(-exp(|phi|))`.
pub struct YounesKernel {
    toggle: f64,
    target: SharedTarget,
}

impl YounesKernel {
    pub fn new(phi: f64, target: SharedTarget) -> Self {
        YounesKernel { toggle: toggle_probability(phi), target }
    }
}

impl MarkovKernel for YounesKernel {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        if x.dim() != 1 || x[0].abs() != 1.0 {
            return Err(Error::InvalidArgument(format!("Younes state must be +1 or -1, got {:?}", x.0)));
        }
        let u = rng.uniform();
        Ok(StateVector(vec![if u < self.toggle { -x[0] } else { x[0] }]))
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }
}

/// The counterexample as an MOI problem; the target is uniform on `{+1, -1}`.
pub struct YounesProblem {
    target: SharedTarget,
}

impl Default for YounesProblem {
    fn default() -> Self {
        let target = FnTarget::shared(1, |x: &[f64]| if x[0].abs() == 1.0 { -std::f64::consts::LN_2 } else { f64::NEG_INFINITY });
        YounesProblem { target }
    }
}

impl MoiProblem for YounesProblem {
    fn param_dim(&self) -> usize {
        1
    }

    fn target(&self, _phi: &[f64]) -> Result<SharedTarget> {
        Ok(self.target.clone())
    }

    fn kernel(&self, phi: &[f64]) -> Result<SharedKernel> {
        Ok(Arc::new(YounesKernel::new(phi[0], self.target.clone())))
    }

    fn field(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        vec![younes_field(x[0], phi[0])]
    }

    fn objective(&self, x: &[f64], phi: &[f64]) -> Option<f64> {
        Some(younes_objective(x[0], phi[0]))
    }

    fn mean_field(&self, phi: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.5 * (younes_field(1.0, phi[0]) + younes_field(-1.0, phi[0]))])
    }
}

/// One run from `phi0 = 0`, `X0 = +` with `gamma_t = 1 / (t + 1)`; returns
/// `(phi_0..phi_T, X_0..X_T)`.
pub(crate) fn younes_path(steps: usize, nt: &NtSchedule, rng: &mut RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    let problem = YounesProblem::default();
    let schedule = StepSchedule::harmonic();
    let mut state = AdaptiveState::new(vec![0.0], StateVector(vec![1.0]));
    let mut xs = Vec::with_capacity(steps + 1);
    xs.push(1.0);
    for _ in 0..steps {
        adaptive_step(&problem, &mut state, &schedule, nt, rng)?;
        xs.push(state.x[0]);
    }
    Ok((state.opt.trajectory().iter().map(|p| p[0]).collect(), xs))
}

/// `prod_{t >= 1} (1 - e^{-t^2})`, summed until the factors are 1 in double
/// precision.
pub fn younes_analytic_floor() -> f64 {
    (1..40).map(|t: i32| 1.0 - (-(t as f64).powi(2)).exp()).product()
}

/// Exact probability that the chain stays at `+` through `T` steps: along
/// that event `phi_t` is deterministic.
pub fn younes_stuck_probability(steps: usize, nt: &NtSchedule) -> f64 {
    let schedule = StepSchedule::harmonic();
    let mut phi = 0.0;
    let mut p = 1.0;
    for t in 0..steps {
        phi += schedule.at(t) * younes_field(1.0, phi);
        p *= (1.0 - toggle_probability(phi)).powi(nt.at(t) as i32);
    }
    p
}

#[derive(Debug, Clone, Serialize)]
pub struct YounesReport {
    pub steps: usize,
    pub reps: usize,
    pub stuck_fraction: f64,
    pub stuck_se: f64,
    pub exact_stuck_probability: f64,
    pub analytic_floor: f64,
    /// Smallest `phi_T` among runs that never toggled.
    pub min_phi_stuck: f64,
}

pub fn younes_experiment(steps: usize, reps: usize, nt: &NtSchedule, rng: &RngStream) -> Result<YounesReport> {
    if steps == 0 || reps < 2 {
        return Err(Error::InvalidArgument("need T >= 1 and at least two replications".into()));
    }
    let runs = replicate(reps, rng, |r| younes_path(steps, nt, r));
    let mut stuck = Vec::with_capacity(reps);
    let mut min_phi = f64::INFINITY;
    for run in runs {
        let (phis, xs) = run?;
        let never = xs.iter().all(|x| *x > 0.0);
        if never {
            min_phi = min_phi.min(*phis.last().expect("nonempty"));
        }
        stuck.push(never as u8 as f64);
    }
    Ok(YounesReport {
        steps,
        reps,
        stuck_fraction: mean(&stuck),
        stuck_se: std_error(&stuck),
        exact_stuck_probability: younes_stuck_probability(steps, nt),
        analytic_floor: younes_analytic_floor(),
        min_phi_stuck: min_phi,
    })
}
