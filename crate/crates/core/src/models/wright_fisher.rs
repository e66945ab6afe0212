use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::mcmc::TargetDensity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    /// 1-based time index of the observed state.
    pub index: usize,
    pub value: f64,
    pub obs_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forbidden {
    pub lo: f64,
    pub hi: f64,
    /// Inclusive 1-based index range.
    pub index_lo: usize,
    pub index_hi: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintMode {
    /// Zero density inside the forbidden band.
    #[default]
    Hard,
    /// Quadratic log penalty `-sharpness * depth^2` for states inside the band.
    Smooth { sharpness: f64 },
}

/// Euler-Maruyama discretized Wright-Fisher diffusion conditioned on an
/// anchor observation and a forbidden band, parameterized by the standard
/// normal innovations `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrightFisherBridge {
    pub n_steps: usize,
    pub delta: f64,
    pub x_init: f64,
    pub anchor: Option<Anchor>,
    pub forbidden: Option<Forbidden>,
    #[serde(default)]
    pub constraint: ConstraintMode,
}

impl Default for WrightFisherBridge {
    fn default() -> Self {
        WrightFisherBridge {
            n_steps: 20,
            delta: 0.05,
            x_init: 0.5,
            anchor: Some(Anchor { index: 20, value: 0.5, obs_sd: 0.05 }),
            forbidden: Some(Forbidden { lo: 0.6, hi: 0.9, index_lo: 7, index_hi: 13 }),
            constraint: ConstraintMode::Hard,
        }
    }
}

impl WrightFisherBridge {
    /// Unconditioned diffusion: the target reduces to the prior on `z`.
    pub fn prior_only(n_steps: usize, delta: f64, x_init: f64) -> Self {
        WrightFisherBridge { n_steps, delta, x_init, anchor: None, forbidden: None, constraint: ConstraintMode::Hard }
    }
}

/// One projected Euler-Maruyama step.
pub fn wf_step(x_prev: f64, z: f64, delta: f64) -> f64 {
    (x_prev + (delta * x_prev * (1.0 - x_prev)).max(0.0).sqrt() * z).clamp(0.0, 1.0)
}

/// Path `X_1, ..., X_d` (X_0 = x_init is not included).
pub fn wf_forward(z: &[f64], model: &WrightFisherBridge) -> Vec<f64> {
    assert_eq!(z.len(), model.n_steps, "innovation vector has the wrong length");
    let mut x = model.x_init;
    z.iter()
        .map(|&zi| {
            x = wf_step(x, zi, model.delta);
            x
        })
        .collect()
}

fn log_likelihood(path: &[f64], model: &WrightFisherBridge) -> f64 {
    let mut ll = 0.0;
    if let Some(a) = &model.anchor {
        let r = (path[a.index - 1] - a.value) / a.obs_sd;
        ll += -0.5 * r * r - a.obs_sd.ln() - 0.5 * (2.0 * PI).ln();
    }
    if let Some(f) = &model.forbidden {
        for &x in &path[f.index_lo - 1..f.index_hi.min(path.len())] {
            if x > f.lo && x < f.hi {
                match model.constraint {
                    ConstraintMode::Hard => return f64::NEG_INFINITY,
                    ConstraintMode::Smooth { sharpness } => {
                        let depth = (x - f.lo).min(f.hi - x);
                        ll -= sharpness * depth * depth;
                    }
                }
            }
        }
    }
    ll
}

/// `log f0(z) + log L(G(z))` with f0 the standard normal on R^d.
pub fn wf_log_target(z: &[f64], model: &WrightFisherBridge) -> f64 {
    let prior = -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln();
    prior + log_likelihood(&wf_forward(z, model), model)
}

impl TargetDensity for WrightFisherBridge {
    fn dim(&self) -> usize {
        self.n_steps
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        wf_log_target(x, self)
    }
}
