//! Concrete MOI problems used by tests, experiments and the CLI.

use std::sync::Arc;

use super::MoiProblem;
use crate::expfam::{ExpFamProposal, MomentParams, SharedFamily};
use crate::grad::problems::GaussianReverseKl;
use crate::grad::ReparamObjective;
use crate::mcmc::{
    AcceptanceCounter, AcceptanceStats, FnTarget, IidKernel, ImhKernel, MarkovKernel, SharedKernel, SharedTarget,
    StateVector,
};
use crate::models::{DiagNormal, TwoPointKernel, TwoPointTarget};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Learned IMH proposal: `g(x, phi) = s(x) - phi` with the kernel an IMH step
/// proposing from the family member with moments `phi`.
pub struct ImhLearning {
    pub family: SharedFamily,
    pub target: SharedTarget,
}

impl ImhLearning {
    pub fn new(family: SharedFamily, target: SharedTarget) -> Result<Self> {
        if family.dim() != target.dim() {
            return Err(Error::Dimension { expected: target.dim(), got: family.dim() });
        }
        Ok(ImhLearning { family, target })
    }
}

impl MoiProblem for ImhLearning {
    fn param_dim(&self) -> usize {
        self.family.stat_dim()
    }

    fn target(&self, _phi: &[f64]) -> Result<SharedTarget> {
        Ok(self.target.clone())
    }

    fn kernel(&self, phi: &[f64]) -> Result<SharedKernel> {
        let proposal = ExpFamProposal::from_moments_or_reference(self.family.clone(), &MomentParams(phi.to_vec()));
        Ok(Arc::new(ImhKernel::new(Arc::new(proposal), self.target.clone())?))
    }

    fn field(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        self.family.suff_stat(x).iter().zip(phi).map(|(s, p)| s - p).collect()
    }
}

/// Markov chain gradient descent on `f(phi) = E[(phi - X)^2 / 2]` with a
/// fixed two-point chain.
pub struct McgdTwoPoint {
    pub kernel: Arc<TwoPointKernel>,
    pub point: TwoPointTarget,
}

impl McgdTwoPoint {
    pub fn new(point: TwoPointTarget, rate: f64) -> Result<Self> {
        Ok(McgdTwoPoint { kernel: Arc::new(TwoPointKernel::new(point, rate)?), point })
    }
}

impl MoiProblem for McgdTwoPoint {
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

    fn objective(&self, x: &[f64], phi: &[f64]) -> Option<f64> {
        Some(0.5 * (phi[0] - x[0]).powi(2))
    }

    fn mean_field(&self, phi: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.point.mean() - phi[0]])
    }
}

/// Reverse-KL VI of `N(mu, s^2)`, `phi = (mu, log s)`, against a Gaussian.
/// The state is the base draw, refreshed iid each step.
pub struct ReverseKlVi {
    pub objective: GaussianReverseKl,
    base: Arc<DiagNormal>,
}

impl ReverseKlVi {
    pub fn new(p_mean: f64, p_sd: f64) -> Self {
        ReverseKlVi { objective: GaussianReverseKl { p_mean, p_sd }, base: DiagNormal::isotropic(1, 0.0, 1.0).shared() }
    }

    pub fn optimum(&self) -> Vec<f64> {
        vec![self.objective.p_mean, self.objective.p_sd.ln()]
    }
}

impl MoiProblem for ReverseKlVi {
    fn param_dim(&self) -> usize {
        2
    }

    fn target(&self, _phi: &[f64]) -> Result<SharedTarget> {
        Ok(self.base.clone())
    }

    fn kernel(&self, _phi: &[f64]) -> Result<SharedKernel> {
        Ok(Arc::new(IidKernel::new(self.base.clone(), self.base.clone())?))
    }

    fn field(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        self.objective.pathwise_gradient(x, phi).into_iter().map(|v| -v).collect()
    }

    fn objective(&self, x: &[f64], phi: &[f64]) -> Option<f64> {
        let y = self.objective.transform(x, phi);
        Some(self.objective.value(&y, phi))
    }

    fn mean_field(&self, phi: &[f64]) -> Option<Vec<f64>> {
        Some(self.objective.exact_gradient(phi).into_iter().map(|v| -v).collect())
    }
}

/// Random-walk MH on a 1-D target over the augmented state
/// `(x, alpha(previous move))`. The `x` marginal is invariant for the target;
/// the second coordinate is a deterministic record of the last move.
pub struct RecordingRwmh {
    base: SharedTarget,
    augmented: SharedTarget,
    step_sd: f64,
    counter: AcceptanceCounter,
}

/// `pi(x)` lifted to `(x, a)`, constant in `a`.
pub fn augmented_target(base: SharedTarget) -> SharedTarget {
    FnTarget::shared(2, move |x: &[f64]| base.log_density(&x[..1]))
}

impl RecordingRwmh {
    pub fn new(base: SharedTarget, augmented: SharedTarget, step_sd: f64) -> Result<Self> {
        if base.dim() != 1 || augmented.dim() != 2 {
            return Err(Error::Dimension { expected: 1, got: base.dim() });
        }
        if !(step_sd > 0.0 && step_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("step_sd must be positive, got {step_sd}")));
        }
        Ok(RecordingRwmh { base, augmented, step_sd, counter: AcceptanceCounter::default() })
    }
}

impl MarkovKernel for RecordingRwmh {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        if x.dim() != 2 {
            return Err(Error::Dimension { expected: 2, got: x.dim() });
        }
        let cur = x[0];
        let prop = cur + self.step_sd * rng.normal();
        let u = rng.uniform();
        let lr = self.base.log_density(&[prop]) - self.base.log_density(&[cur]);
        let alpha = if lr.is_nan() { 0.0 } else { lr.min(0.0).exp() };
        let accept = u < alpha;
        self.counter.record(accept);
        Ok(StateVector(vec![if accept { prop } else { cur }, alpha]))
    }

    fn target(&self) -> &SharedTarget {
        &self.augmented
    }

    fn acceptance(&self) -> Option<AcceptanceStats> {
        Some(self.counter.snapshot())
    }
}

/// Tunes `theta = log step_sd` of a 1-D RWMH so the mean acceptance
/// probability matches `alpha_star`, with `g = alpha - alpha_star`.
pub struct AcceptanceTuning {
    pub target: SharedTarget,
    pub alpha_star: f64,
    augmented: SharedTarget,
}

impl AcceptanceTuning {
    pub fn new(target: SharedTarget, alpha_star: f64) -> Result<Self> {
        if target.dim() != 1 {
            return Err(Error::Dimension { expected: 1, got: target.dim() });
        }
        if !(alpha_star > 0.0 && alpha_star < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha_star must lie in (0, 1), got {alpha_star}")));
        }
        let augmented = augmented_target(target.clone());
        Ok(AcceptanceTuning { target, alpha_star, augmented })
    }
}

impl MoiProblem for AcceptanceTuning {
    fn param_dim(&self) -> usize {
        1
    }

    fn target(&self, _phi: &[f64]) -> Result<SharedTarget> {
        Ok(self.augmented.clone())
    }

    fn kernel(&self, phi: &[f64]) -> Result<SharedKernel> {
        Ok(Arc::new(RecordingRwmh::new(self.target.clone(), self.augmented.clone(), phi[0].exp())?))
    }

    fn field(&self, x: &[f64], _phi: &[f64]) -> Vec<f64> {
        vec![x[1] - self.alpha_star]
    }
}

/// Deterministic `g(x, phi) = -phi` with a dummy state, for checking step
/// schedules whose sum is finite.
pub struct LinearDecay {
    base: Arc<DiagNormal>,
}

impl Default for LinearDecay {
    fn default() -> Self {
        LinearDecay { base: DiagNormal::isotropic(1, 0.0, 1.0).shared() }
    }
}

impl MoiProblem for LinearDecay {
    fn param_dim(&self) -> usize {
        1
    }

    fn target(&self, _phi: &[f64]) -> Result<SharedTarget> {
        Ok(self.base.clone())
    }

    fn kernel(&self, _phi: &[f64]) -> Result<SharedKernel> {
        Ok(Arc::new(IidKernel::new(self.base.clone(), self.base.clone())?))
    }

    fn field(&self, _x: &[f64], phi: &[f64]) -> Vec<f64> {
        vec![-phi[0]]
    }

    fn mean_field(&self, phi: &[f64]) -> Option<Vec<f64>> {
        Some(vec![-phi[0]])
    }
}

/// A problem together with a valid initial state.
pub struct NamedProblem {
    pub problem: Box<dyn MoiProblem>,
    pub x0: StateVector,
    pub description: &'static str,
}

pub const PROBLEM_NAMES: [&str; 5] = ["imh_gaussian", "mcgd_two_point", "reverse_kl_vi", "acceptance_tuning", "linear_decay"];

/// Built-in problems by name.
pub fn problem_by_name(name: &str) -> Result<NamedProblem> {
    use crate::expfam::DiagGaussian;
    Ok(match name {
        "imh_gaussian" => NamedProblem {
            problem: Box::new(ImhLearning::new(Arc::new(DiagGaussian::new(1)), DiagNormal::isotropic(1, 2.0, 1.5).shared())?),
            x0: StateVector(vec![0.0]),
            description: "learned Gaussian IMH proposal for N(2, 1.5^2)",
        },
        "mcgd_two_point" => NamedProblem {
            problem: Box::new(McgdTwoPoint::new(TwoPointTarget::new([-0.5, 0.5], [0.25, 0.75])?, 0.1)?),
            x0: StateVector(vec![-0.5]),
            description: "Markov chain gradient descent with a slow two-point chain",
        },
        "reverse_kl_vi" => NamedProblem {
            problem: Box::new(ReverseKlVi::new(1.0, 2.0)),
            x0: StateVector(vec![0.0]),
            description: "reverse-KL VI of N(1, 2^2) with an iid base kernel",
        },
        "acceptance_tuning" => NamedProblem {
            problem: Box::new(AcceptanceTuning::new(DiagNormal::isotropic(1, 0.0, 1.0).shared(), 0.44)?),
            x0: StateVector(vec![0.0, 0.44]),
            description: "RWMH step-size tuning to acceptance 0.44 on N(0, 1)",
        },
        "linear_decay" => NamedProblem {
            problem: Box::new(LinearDecay::default()),
            x0: StateVector(vec![0.0]),
            description: "deterministic g = -phi",
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown problem '{other}', expected one of {}",
                PROBLEM_NAMES.join(", ")
            )))
        }
    })
}
