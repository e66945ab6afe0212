use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::expfam::{imh_kernel, DiagGaussian, MomentParams, SharedFamily};
use crate::mcmc::{
    compose_kernels, run_chain, rwmh_kernel, slice_kernel, SharedKernel, SharedTarget, StateVector,
    TargetDensity, DEFAULT_SLICE_WIDTH,
};
use crate::models::WrightFisherBridge;
use crate::optim::{round_based_driver, RoundOutput, RoundTrajectory};
use crate::rng::RngStream;
use crate::stats::ess;
use crate::{Error, Result};

/// Counts log-density evaluations of the wrapped target.
pub struct CountingTarget<T> {
    inner: T,
    evals: AtomicU64,
}

impl<T: TargetDensity> CountingTarget<T> {
    pub fn new(inner: T) -> Self {
        CountingTarget { inner, evals: AtomicU64::new(0) }
    }

    pub fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

impl<T: TargetDensity> TargetDensity for CountingTarget<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.log_density(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WfSettings {
    pub model: WrightFisherBridge,
    /// Training rounds; round `r` has `2^r` composite steps.
    pub rounds: usize,
    /// Composite steps with the trained proposal after training.
    pub eval_steps: usize,
    pub slice_width: f64,
    pub rwmh_step_sd: f64,
}

impl Default for WfSettings {
    fn default() -> Self {
        WfSettings {
            model: WrightFisherBridge::default(),
            rounds: 12,
            eval_steps: 20_000,
            slice_width: DEFAULT_SLICE_WIDTH,
            rwmh_step_sd: 2.38 / 20f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerReport {
    pub name: String,
    pub steps: usize,
    pub evaluations: u64,
    pub wall_time: f64,
    pub acceptance: f64,
    /// Per-coordinate ESS of the kept samples.
    pub ess: Vec<f64>,
}

impl SamplerReport {
    pub fn ess_per_second(&self) -> Vec<f64> {
        self.ess.iter().map(|e| e / self.wall_time).collect()
    }

    pub fn ess_per_evaluation(&self) -> Vec<f64> {
        self.ess.iter().map(|e| e / self.evaluations as f64).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WfReport {
    pub training: RoundTrajectory,
    pub composite: SamplerReport,
    pub rwmh: SamplerReport,
}

impl WfReport {
    /// Coordinates where the composite's rate is at least the baseline's.
    pub fn wins(&self, rate: impl Fn(&SamplerReport) -> Vec<f64>) -> usize {
        rate(&self.composite).iter().zip(rate(&self.rwmh)).filter(|(a, b)| **a >= *b).count()
    }
}

fn coordinate_ess(states: &[StateVector]) -> Vec<f64> {
    let d = states.first().map_or(0, |s| s.dim());
    (0..d).map(|i| ess(&states.iter().map(|x| x[i]).collect::<Vec<_>>())).collect()
}

/// Trains the IMH proposal round by round inside the IMH+slice composite,
/// samples with the trained composite, then gives random-walk Metropolis the
/// same number of density evaluations. The composite's wall time includes
/// training.
pub fn imh_wf_experiment(settings: &WfSettings, rng: &RngStream) -> Result<WfReport> {
    if settings.rounds == 0 || settings.eval_steps < 100 {
        return Err(Error::InvalidArgument("need at least one round and 100 evaluation steps".into()));
    }
    let d = settings.model.n_steps;
    let counter = Arc::new(CountingTarget::new(settings.model.clone()));
    let target: SharedTarget = counter.clone();
    let family: SharedFamily = Arc::new(DiagGaussian::new(d));
    let slice: SharedKernel = Arc::new(slice_kernel(target.clone(), settings.slice_width)?);
    let composite = |phi: &MomentParams| -> Result<_> {
        let imh: SharedKernel = Arc::new(imh_kernel(family.clone(), phi, target.clone())?);
        Ok((imh.clone(), compose_kernels(vec![imh, slice.clone()])?))
    };

    let start = Instant::now();
    let mut x = StateVector::zeros(d);
    if !target.log_density(&x).is_finite() {
        return Err(Error::InvalidArgument("the zero innovation path must have positive density".into()));
    }
    let phi0 = MomentParams(DiagGaussian::moments_from_mean_var(&vec![0.0; d], &vec![1.0; d]));
    let mut train_rng = rng.child(0);
    let training = round_based_driver(
        family.as_ref(),
        |phi, size, r| {
            let (_, k) = composite(phi)?;
            let trace = run_chain(&k, &x, size, r)?;
            x = trace.states.last().expect("nonempty round").clone();
            Ok(RoundOutput {
                stats: trace.states.iter().map(|s| family.suff_stat(s)).collect(),
                samples: trace.states.into_iter().map(|s| s.0).collect(),
            })
        },
        phi0,
        settings.rounds,
        &mut train_rng,
    )?;
    let (imh, k) = composite(&MomentParams(training.final_phi.clone()))?;
    let trace = run_chain(&k, &x, settings.eval_steps, &mut rng.child(1))?;
    let composite = SamplerReport {
        name: "imh_slice".into(),
        steps: training.total_samples() + settings.eval_steps,
        evaluations: counter.evaluations(),
        wall_time: start.elapsed().as_secs_f64(),
        acceptance: imh.acceptance().map_or(f64::NAN, |a| a.rate()),
        ess: coordinate_ess(&trace.states),
    };

    let budget = composite.evaluations as usize;
    let before = counter.evaluations();
    let start = Instant::now();
    let rw = rwmh_kernel(target.clone(), settings.rwmh_step_sd)?;
    let trace = run_chain(&rw, &StateVector::zeros(d), budget, &mut rng.child(2))?;
    let burn = budget / 10;
    let rwmh = SamplerReport {
        name: "rwmh".into(),
        steps: budget,
        evaluations: counter.evaluations() - before,
        wall_time: start.elapsed().as_secs_f64(),
        acceptance: trace.acceptance.map_or(f64::NAN, |a| a.rate()),
        ess: coordinate_ess(&trace.states[burn..]),
    };
    Ok(WfReport { training, composite, rwmh })
}

/// CSV `sampler,coordinate,ess,ess_per_evaluation`. Timings are left out so
/// the file is reproducible.
pub fn write_ess_csv<W: std::io::Write>(report: &WfReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sampler", "coordinate", "ess", "ess_per_evaluation"])?;
    for s in [&report.composite, &report.rwmh] {
        let pe = s.ess_per_evaluation();
        for i in 0..s.ess.len() {
            w.write_record([s.name.clone(), (i + 1).to_string(), s.ess[i].to_string(), pe[i].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
