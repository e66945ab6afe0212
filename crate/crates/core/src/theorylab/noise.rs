use serde::Serialize;

use super::replicate;
use crate::rng::RngStream;
use crate::stats::{jarque_bera, mean, std_error, std_normal_cdf, variance, NormalityReport};
use crate::{Error, Result};

/// `phi_{t+1} = phi_t + (x_t - phi_t) / 2`, `x_t ~ N(0, 1)`.
pub(crate) fn noise_ball_path(phi0: f64, steps: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut phi = phi0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(phi);
    for _ in 0..steps {
        phi += 0.5 * (rng.normal() - phi);
        out.push(phi);
    }
    out
}

/// `E[phi_t^2] = phi0^2 4^{-t} + (1 - 4^{-t}) / 3`.
pub fn noise_ball_second_moment(phi0: f64, t: usize) -> f64 {
    let q = 0.25f64.powi(t as i32);
    phi0 * phi0 * q + (1.0 - q) / 3.0
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseBallReport {
    pub steps: usize,
    pub reps: usize,
    pub mean: f64,
    pub se_mean: f64,
    /// `phi0 2^{-T}`.
    pub expected_mean: f64,
    pub variance: f64,
    /// `(1 - 4^{-T}) / 3`.
    pub expected_variance: f64,
    pub second_moment: f64,
    pub expected_second_moment: f64,
    pub normality: NormalityReport,
    #[serde(skip)]
    pub finals: Vec<f64>,
}

impl NoiseBallReport {
    pub fn variance_rel_error(&self) -> f64 {
        (self.variance - self.expected_variance).abs() / self.expected_variance
    }
}

pub fn noise_ball_experiment(phi0: f64, steps: usize, reps: usize, rng: &RngStream) -> Result<NoiseBallReport> {
    if steps == 0 || reps < 2 {
        return Err(Error::InvalidArgument("need T >= 1 and at least two replications".into()));
    }
    let finals = replicate(reps, rng, |r| *noise_ball_path(phi0, steps, r).last().expect("nonempty"));
    let second_moment = finals.iter().map(|p| p * p).sum::<f64>() / reps as f64;
    Ok(NoiseBallReport {
        steps,
        reps,
        mean: mean(&finals),
        se_mean: std_error(&finals),
        expected_mean: phi0 * 0.5f64.powi(steps as i32),
        variance: variance(&finals),
        expected_variance: (1.0 - 0.25f64.powi(steps as i32)) / 3.0,
        second_moment,
        expected_second_moment: noise_ball_second_moment(phi0, steps),
        normality: jarque_bera(&finals),
        finals,
    })
}

/// `phi` stored as a sign and `log |phi|` once `|phi|` passes `1e300`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogPhi {
    Plain(f64),
    Log { sign: f64, log_abs: f64 },
}

const LOG_SWITCH: f64 = 1e300;

impl LogPhi {
    pub fn log_abs(&self) -> f64 {
        match self {
            LogPhi::Plain(p) => p.abs().ln(),
            LogPhi::Log { log_abs, .. } => *log_abs,
        }
    }

    fn normalize(sign: f64, log_abs: f64) -> LogPhi {
        if log_abs < LOG_SWITCH.ln() {
            LogPhi::Plain(sign * log_abs.exp())
        } else {
            LogPhi::Log { sign, log_abs }
        }
    }

    /// `(1 - gamma) phi + gamma e^phi z`.
    pub fn step(self, gamma: f64, z: f64) -> LogPhi {
        match self {
            LogPhi::Plain(p) => {
                let next = (1.0 - gamma) * p + gamma * p.exp() * z;
                if next.is_finite() && next.abs() < LOG_SWITCH {
                    LogPhi::Plain(next)
                } else {
                    // e^phi dominates: |(1 - gamma) phi| < 710 is negligible.
                    LogPhi::normalize(z.signum(), gamma.ln() + p + z.abs().ln())
                }
            }
            LogPhi::Log { sign, log_abs } if sign < 0.0 => LogPhi::normalize(sign, log_abs + (1.0 - gamma).ln()),
            LogPhi::Log { log_abs, .. } => {
                // phi = e^{log_abs} >= 1e300, so e^phi z dominates completely.
                LogPhi::Log { sign: z.signum(), log_abs: gamma.ln() + log_abs.exp() + z.abs().ln() }
            }
        }
    }
}

/// `P(|phi'| > 2 |phi|)` for one step from `phi` with step `gamma`.
pub fn first_doubling_probability(phi: f64, gamma: f64) -> f64 {
    let scale = phi.abs() * (-phi).exp() / gamma;
    2.0 - std_normal_cdf(scale * (3.0 - gamma)) - std_normal_cdf(scale * (1.0 + gamma))
}

#[derive(Debug, Clone, Serialize)]
pub struct UnboundedReport {
    pub steps: usize,
    pub reps: usize,
    /// Fraction of runs with `|phi_t| > 2^{t+1}` for every `1 <= t <= T`.
    pub escape_fraction: f64,
    pub escape_se: f64,
    /// Monte Carlo `P(|phi_1| > 4)`.
    pub first_step_mc: f64,
    pub first_step_se: f64,
    pub first_step_exact: f64,
    /// Fraction of runs with `|phi_{k+1}| > 2 |phi_k|` for every `k <= t`.
    pub doubling_survival: Vec<f64>,
    /// Fraction of runs doubling through `t - 1` that double again at `t`.
    pub doubling_conditional: Vec<f64>,
}

/// `phi_{t+1} = (1 - gamma_t) phi_t + gamma_t e^{phi_t} Z_t` with
/// `gamma_t = 1 / (2 (t + 1))`.
pub fn unbounded_variance_experiment(phi0: f64, steps: usize, reps: usize, rng: &RngStream) -> Result<UnboundedReport> {
    if steps == 0 || reps < 2 {
        return Err(Error::InvalidArgument("need T >= 1 and at least two replications".into()));
    }
    let gamma = |t: usize| 0.5 / (t as f64 + 1.0);
    let runs = replicate(reps, rng, |r| {
        let mut phi = LogPhi::Plain(phi0);
        let mut escaped = true;
        let mut doubling_until = 0usize;
        let mut first = false;
        for t in 0..steps {
            let before = phi;
            let prev = phi.log_abs();
            phi = phi.step(gamma(t), r.normal());
            let la = phi.log_abs();
            if t == 0 {
                first = la > 4f64.ln();
            }
            if la <= (t as f64 + 2.0) * std::f64::consts::LN_2 {
                escaped = false;
            }
            // Past the double-precision range only the sign decides: a
            // positive phi is followed by a step of size ~e^phi.
            let doubled = if prev.is_infinite() && la.is_infinite() {
                matches!(before, LogPhi::Log { sign, .. } if sign > 0.0)
            } else {
                la > prev + std::f64::consts::LN_2
            };
            if doubling_until == t && doubled {
                doubling_until = t + 1;
            }
        }
        (escaped, first, doubling_until)
    });
    let esc: Vec<f64> = runs.iter().map(|r| r.0 as u8 as f64).collect();
    let first: Vec<f64> = runs.iter().map(|r| r.1 as u8 as f64).collect();
    let alive = |t: usize| runs.iter().filter(|r| r.2 >= t).count();
    let doubling_survival = (0..steps).map(|t| alive(t + 1) as f64 / reps as f64).collect();
    let doubling_conditional = (0..steps)
        .map(|t| if alive(t) == 0 { f64::NAN } else { alive(t + 1) as f64 / alive(t) as f64 })
        .collect();
    Ok(UnboundedReport {
        steps,
        reps,
        escape_fraction: mean(&esc),
        escape_se: std_error(&esc),
        first_step_mc: mean(&first),
        first_step_se: std_error(&first),
        first_step_exact: first_doubling_probability(phi0, gamma(0)),
        doubling_survival,
        doubling_conditional,
    })
}
