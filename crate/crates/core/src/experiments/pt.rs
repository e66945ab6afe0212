use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::mcmc::{SharedProposal, SharedTarget, StateVector};
use crate::models::{DiagNormal, SymmetricBimodal, WrightFisherBridge};
use crate::rng::RngStream;
use crate::tempering::{default_explorers, nrpt_run, AnnealingPath, NrptOutput, ReplicaEnsemble, RoundTrip, Schedule, SwapStats};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PtTarget {
    Gaussian { d: usize, mean: f64, sd: f64 },
    Bimodal { d: usize, m: f64, sd: f64 },
    WrightFisher { model: WrightFisherBridge },
}

impl PtTarget {
    pub fn dim(&self) -> usize {
        match self {
            PtTarget::Gaussian { d, .. } | PtTarget::Bimodal { d, .. } => *d,
            PtTarget::WrightFisher { model } => model.n_steps,
        }
    }

    pub fn build(&self) -> Result<SharedTarget> {
        if self.dim() == 0 {
            return Err(Error::InvalidArgument("target dimension must be positive".into()));
        }
        Ok(match self {
            PtTarget::Gaussian { d, mean, sd } => {
                if !(*sd > 0.0) {
                    return Err(Error::InvalidArgument(format!("sd must be positive, got {sd}")));
                }
                Arc::new(DiagNormal::isotropic(*d, *mean, *sd))
            }
            PtTarget::Bimodal { d, m, sd } => {
                if !(*sd > 0.0) {
                    return Err(Error::InvalidArgument(format!("sd must be positive, got {sd}")));
                }
                Arc::new(SymmetricBimodal { d: *d, m: *m, sd: *sd })
            }
            PtTarget::WrightFisher { model } => Arc::new(model.clone()),
        })
    }
}

/// One NRPT run: `N(reference_mean, reference_sd^2)^d` reference, `n + 1`
/// equally spaced chains, all started at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtRunConfig {
    pub target: PtTarget,
    #[serde(default)]
    pub reference_mean: f64,
    #[serde(default = "one")]
    pub reference_sd: f64,
    pub n: usize,
    pub sweeps: usize,
    /// Two-leg path with a fixed `N(0, sd^2)^d` reference at beta = 1.
    #[serde(default)]
    pub two_leg_fixed_sd: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for PtRunConfig {
    fn default() -> Self {
        PtRunConfig {
            target: PtTarget::Bimodal { d: 1, m: 4.0, sd: 0.5 },
            reference_mean: 0.0,
            reference_sd: 5.0,
            n: 10,
            sweeps: 5000,
            two_leg_fixed_sd: None,
        }
    }
}

pub fn pt_run(config: &PtRunConfig, rng: &RngStream) -> Result<NrptOutput> {
    let target = config.target.build()?;
    let d = config.target.dim();
    if !(config.reference_sd > 0.0) {
        return Err(Error::InvalidArgument(format!("reference_sd must be positive, got {}", config.reference_sd)));
    }
    let reference: SharedProposal = Arc::new(DiagNormal::isotropic(d, config.reference_mean, config.reference_sd));
    let path = match config.two_leg_fixed_sd {
        Some(sd) if sd > 0.0 => AnnealingPath::two_leg(reference, Arc::new(DiagNormal::isotropic(d, 0.0, sd)), target)?,
        Some(sd) => return Err(Error::InvalidArgument(format!("two_leg_fixed_sd must be positive, got {sd}"))),
        None => AnnealingPath::single_leg(reference, target)?,
    };
    if config.n == 0 {
        return Err(Error::InvalidArgument("need at least two chains".into()));
    }
    let schedule = Schedule::uniform(config.n);
    let kernels = default_explorers(&path, &schedule)?;
    let ensemble = ReplicaEnsemble::replicated(StateVector::zeros(d), schedule)?;
    nrpt_run(&path, &kernels, ensemble, config.sweeps, rng)
}

/// CSV `pair,attempts,accepts`; pair `n` swaps chains `n` and `n + 1`.
pub fn write_swap_stats_csv<W: Write>(stats: &[SwapStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "attempts", "accepts"])?;
    for (n, s) in stats.iter().enumerate() {
        w.write_record([n.to_string(), s.attempts.to_string(), s.accepts.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `replica,sweep`: sweep at which the replica completed a round trip.
pub fn write_roundtrips_csv<W: Write>(trips: &[RoundTrip], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replica", "sweep"])?;
    for r in trips {
        w.write_record([r.replica.to_string(), r.sweep.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
