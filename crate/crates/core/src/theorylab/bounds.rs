use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::replicate;
use crate::mcmc::{IidKernel, SharedKernel, SharedTarget, StateVector};
use crate::models::{mat_mul, DiagNormal, Matrix, TwoPointKernel, TwoPointTarget};
use crate::moi::{run_moi, MoiProblem, NtSchedule};
use crate::optim::StepSchedule;
use crate::rng::RngStream;
use crate::stats::{mean, std_error};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Deterministic,
    Iid,
    Markov,
}

/// `f(phi) = phi^2 / 2` with `g(x, phi) = x - phi` and certified constants.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremProblem {
    pub name: &'static str,
    pub regime: Regime,
    pub phi0: f64,
    pub schedule: StepSchedule,
    pub nt: NtSchedule,
    pub lipschitz: f64,
    pub f_lower: f64,
    pub a: f64,
    pub b: f64,
    /// `rho_k = rho^k` in the Markov regime.
    pub rho: f64,
}

/// Two-point chain on `{-1/2, +1/2}` flipping with probability 1/4, so
/// `E[X_k | x] = x 2^{-k}`.
fn two_point_kernel() -> TwoPointKernel {
    TwoPointKernel::new(TwoPointTarget::new([-0.5, 0.5], [0.5, 0.5]).expect("valid"), 0.5).expect("valid")
}

impl TheoremProblem {
    /// Constant step 1/2, `L = 1`, `phi0 = 1`.
    pub fn deterministic_quadratic() -> Self {
        TheoremProblem {
            name: "deterministic_quadratic",
            regime: Regime::Deterministic,
            phi0: 1.0,
            schedule: StepSchedule::constant(0.5).expect("valid"),
            nt: NtSchedule::default(),
            lipschitz: 1.0,
            f_lower: 0.0,
            a: 0.0,
            b: 0.0,
            rho: 0.0,
        }
    }

    /// `x ~ N(0, 1)` iid: `E (x - phi)^2 = 1 + phi^2`, so `a = b = 1`;
    /// `gamma_t = 1 / (2 (t + 1))`.
    pub fn iid_quadratic() -> Self {
        TheoremProblem {
            name: "iid_quadratic",
            regime: Regime::Iid,
            phi0: 2.0,
            schedule: StepSchedule::parametric(0.5, 2.0, 1.0).expect("valid"),
            nt: NtSchedule::default(),
            lipschitz: 1.0,
            f_lower: 0.0,
            a: 1.0,
            b: 1.0,
            rho: 0.0,
        }
    }

    /// Two-point chain with second eigenvalue 1/2: `rho_k = 2^{-k}`,
    /// `a = 1/2`, `b = 2`; `gamma_t = 1 / (5 (t + 1))`,
    /// `n_t = ceil(1 + log2(1 + t))`.
    pub fn markov_two_point() -> Self {
        TheoremProblem {
            name: "markov_two_point",
            regime: Regime::Markov,
            phi0: 2.0,
            schedule: StepSchedule::parametric(0.2, 5.0, 1.0).expect("valid"),
            nt: NtSchedule::Log2Growth,
            lipschitz: 1.0,
            f_lower: 0.0,
            a: 0.5,
            b: 2.0,
            rho: 0.5,
        }
    }

    pub fn by_regime(regime: Regime) -> Self {
        match regime {
            Regime::Deterministic => Self::deterministic_quadratic(),
            Regime::Iid => Self::iid_quadratic(),
            Regime::Markov => Self::markov_two_point(),
        }
    }

    pub fn f(&self, phi: f64) -> f64 {
        0.5 * phi * phi
    }

    pub fn g(&self, phi: f64) -> f64 {
        -phi
    }

    fn rho_k(&self, k: usize) -> f64 {
        self.rho.powi(k as i32)
    }

    /// Right-hand side of the displayed bound at every `t < steps`.
    pub fn bound_curve(&self, steps: usize) -> Vec<f64> {
        let (l, a, b) = (self.lipschitz, self.a, self.b);
        let head = self.f(self.phi0) - self.f_lower;
        let mut num = head;
        let mut den = 0.0;
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let g = self.schedule.at(k);
            match self.regime {
                Regime::Deterministic => den += g * (1.0 - g * l / 2.0),
                Regime::Iid => {
                    num += g * g * a * l / 2.0;
                    den += g * (1.0 - g * b * l / 2.0);
                }
                Regime::Markov => {
                    let r = self.rho_k(self.nt.at(k));
                    num += a * (g * g * l + 2.0 * g * r) / 2.0;
                    den += g * (1.0 - (2.0 * r * a + g * b * l) / 2.0);
                }
            }
            out.push(num / den);
        }
        out
    }
}

struct NoisyQuadratic {
    kernel: SharedKernel,
}

impl NoisyQuadratic {
    fn new(regime: Regime) -> Self {
        let kernel: SharedKernel = match regime {
            Regime::Markov => Arc::new(two_point_kernel()),
            _ => {
                let base = DiagNormal::isotropic(1, 0.0, 1.0).shared();
                Arc::new(IidKernel::new(base.clone(), base).expect("matching dims"))
            }
        };
        NoisyQuadratic { kernel }
    }
}

impl MoiProblem for NoisyQuadratic {
    fn param_dim(&self) -> usize {
        1
    }

    fn target(&self, _phi: &[f64]) -> Result<SharedTarget> {
        Ok(self.kernel.target().clone())
    }

    fn kernel(&self, _phi: &[f64]) -> Result<SharedKernel> {
        Ok(self.kernel.clone())
    }

    fn field(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        vec![x[0] - phi[0]]
    }

    fn mean_field(&self, phi: &[f64]) -> Option<Vec<f64>> {
        Some(vec![-phi[0]])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub problem: &'static str,
    pub regime: Regime,
    pub reps: usize,
    /// `min_{k <= t}` of the (mean) squared field norm.
    pub lhs: Vec<f64>,
    /// Standard error of the minimizing mean; zero when deterministic.
    pub se: Vec<f64>,
    pub rhs: Vec<f64>,
    pub first_violation: Option<usize>,
}

impl BoundReport {
    pub fn check(&self) -> Result<()> {
        match self.first_violation {
            None => Ok(()),
            Some(t) => Err(Error::BoundViolation(format!(
                "{}: at t = {t}, min E|g|^2 = {} (se {}) exceeds bound {}",
                self.problem, self.lhs[t], self.se[t], self.rhs[t]
            ))),
        }
    }
}

/// Simulates the problem for `T` steps (`reps` replications when
/// stochastic) and compares the running minimum against the bound at every
/// `t < T`, allowing `3 SE` when stochastic.
pub fn verify_theorem_bound(problem: &TheoremProblem, steps: usize, reps: usize, rng: &RngStream) -> Result<BoundReport> {
    if steps == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    let rhs = problem.bound_curve(steps);
    let (means, ses, reps) = match problem.regime {
        Regime::Deterministic => {
            let mut phi = problem.phi0;
            let mut m = Vec::with_capacity(steps);
            for t in 0..steps {
                m.push(problem.g(phi).powi(2));
                phi += problem.schedule.at(t) * problem.g(phi);
            }
            (m, vec![0.0; steps], 1)
        }
        regime => {
            if reps < 2 {
                return Err(Error::InvalidArgument("stochastic regimes need at least two replications".into()));
            }
            let moi = NoisyQuadratic::new(regime);
            let runs = replicate(reps, rng, |r| {
                let x0 = match regime {
                    Regime::Markov => StateVector(vec![0.5]),
                    _ => StateVector(vec![r.normal()]),
                };
                run_moi(&moi, vec![problem.phi0], x0, &problem.schedule, &problem.nt, steps, r)
            });
            let mut sq = vec![Vec::with_capacity(reps); steps];
            for run in runs {
                let trace = run?;
                for (t, phi) in trace.phi[..steps].iter().enumerate() {
                    sq[t].push(problem.g(phi[0]).powi(2));
                }
            }
            (sq.iter().map(|v| mean(v)).collect(), sq.iter().map(|v| std_error(v)).collect(), reps)
        }
    };
    let mut lhs = Vec::with_capacity(steps);
    let mut se = Vec::with_capacity(steps);
    let mut best = (f64::INFINITY, 0.0);
    let mut first_violation = None;
    for t in 0..steps {
        if means[t] < best.0 {
            best = (means[t], ses[t]);
        }
        lhs.push(best.0);
        se.push(best.1);
        if first_violation.is_none() && best.0 - 3.0 * best.1 > rhs[t] {
            first_violation = Some(t);
        }
    }
    Ok(BoundReport { problem: problem.name, regime: problem.regime, reps, lhs, se, rhs, first_violation })
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub lipschitz: f64,
    /// Smallest `a` with `E|g(X, phi)|^2 <= a + b |g(phi)|^2` on the grid.
    pub a_needed: f64,
    /// Audited `rho_k`, `k = 1..`, in the Markov regime.
    pub rho_needed: Vec<f64>,
    /// `sup_t gamma_t / (1 - 2 rho_{n_t} a)` (just `sup_t gamma_t` outside
    /// the Markov regime), to be compared with `1 / (L b)`.
    pub step_ratio: f64,
    pub dominated: bool,
}

fn grid() -> impl Iterator<Item = f64> {
    (0..=2000).map(|i| -10.0 + 0.01 * i as f64)
}

/// `E (X - phi)^2` for `X ~ N(0, 1)` by composite Simpson on `[-12, 12]`.
fn gaussian_second_moment(phi: f64) -> f64 {
    let n = 2400;
    let h = 24.0 / n as f64;
    let f = |x: f64| (x - phi).powi(2) * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(-12.0) + f(12.0);
    for i in 1..n {
        let x = -12.0 + h * i as f64;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Recomputes `L`, `a`, `rho_k` and the step conditions for `problem` over
/// the horizon `T` and checks the configured constants dominate them.
pub fn audit_constants(problem: &TheoremProblem, steps: usize) -> AuditReport {
    let h = 1e-3;
    let lipschitz = grid().map(|p| (problem.g(p + h) - problem.g(p)).abs() / h).fold(0.0, f64::max);
    let mut a_needed = 0.0;
    let mut rho_needed = Vec::new();
    let mut noise_ok = true;
    match problem.regime {
        Regime::Deterministic => {}
        Regime::Iid => {
            a_needed = grid().map(|p| gaussian_second_moment(p) - problem.b * problem.g(p).powi(2)).fold(f64::NEG_INFINITY, f64::max);
        }
        Regime::Markov => {
            let kernel = two_point_kernel();
            let values = [-0.5, 0.5];
            let p1 = kernel.transition_matrix();
            let mut pk: Matrix = p1.clone();
            for _k in 1..=20 {
                let mut worst: f64 = 0.0;
                for phi in grid() {
                    let g = problem.g(phi);
                    let scale = problem.a + problem.b * g * g;
                    for row in &pk {
                        let eg: f64 = row.iter().zip(values).map(|(p, v)| p * (v - phi)).sum();
                        let eg2: f64 = row.iter().zip(values).map(|(p, v)| p * (v - phi).powi(2)).sum();
                        worst = worst.max((g * eg - g * g).abs() / scale);
                        if eg2 > scale * (1.0 + 1e-12) {
                            noise_ok = false;
                        }
                        a_needed = f64::max(a_needed, eg2 - problem.b * g * g);
                    }
                }
                rho_needed.push(worst);
                pk = mat_mul(&pk, &p1);
            }
        }
    }
    let step_ratio = (0..steps.max(1))
        .map(|t| {
            let g = problem.schedule.at(t);
            match problem.regime {
                Regime::Markov => g / (1.0 - 2.0 * problem.rho_k(problem.nt.at(t)) * problem.a),
                _ => g,
            }
        })
        .fold(0.0, f64::max);
    let step_limit = match problem.regime {
        Regime::Deterministic => 1.0 / problem.lipschitz,
        _ => 1.0 / (problem.lipschitz * problem.b),
    };
    let rho_ok = rho_needed.iter().enumerate().all(|(i, r)| *r <= problem.rho_k(i + 1) + 1e-12);
    let dominated = lipschitz <= problem.lipschitz + 1e-9
        && a_needed <= problem.a + 1e-6
        && rho_ok
        && noise_ok
        && step_ratio < step_limit;
    AuditReport { lipschitz, a_needed, rho_needed, step_ratio, dominated }
}
