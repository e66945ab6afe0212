//! Numerical counterexamples and bound checks for the convergence theory of
//! the adaptive loop.

mod bounds;
mod noise;
mod younes;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::optim::{sgd_step, OptimizerState, StepSchedule};
use crate::rng::RngStream;
use crate::{Error, Result};

pub use bounds::{
    audit_constants, verify_theorem_bound, AuditReport, BoundReport, Regime, TheoremProblem,
};
pub use noise::{
    first_doubling_probability, noise_ball_experiment, noise_ball_second_moment, unbounded_variance_experiment,
    LogPhi, NoiseBallReport, UnboundedReport,
};
pub use younes::{
    younes_analytic_floor, younes_field, younes_objective, younes_experiment, younes_stuck_probability, YounesKernel,
    YounesProblem, YounesReport,
};

/// Largest horizon used by the lab.
pub const MAX_T: usize = 10_000;

/// Runs `f` on `reps` independent child streams of `master`, in parallel.
pub(crate) fn replicate<T: Send>(reps: usize, master: &RngStream, f: impl Fn(&mut RngStream) -> T + Sync) -> Vec<T> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = master.child(r as u64);
            f(&mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectedBehavior {
    /// The divergence guard trips, or the iterates run away monotonically.
    Diverge,
    /// `|phi_T - value| <= tol` with `value != 0`.
    StallAt { value: f64, tol: f64 },
    Converge { to: f64, tol: f64 },
}

/// A deterministic 1-D counterexample `phi_{t+1} = phi_t + gamma_t g(phi_t)`,
/// `g = -f'`.
#[derive(Debug, Clone)]
pub struct CounterexampleSpec {
    pub name: &'static str,
    pub f: fn(f64) -> f64,
    pub g: fn(f64) -> f64,
    pub schedule: StepSchedule,
    pub phi0: f64,
    /// Minimizer of `f`.
    pub phi_star: f64,
    pub expected: ExpectedBehavior,
}

pub fn wiggle_f(phi: f64) -> f64 {
    1.0 - (-phi * phi).exp() + (-(phi - 2.0).powi(2)).exp() + (-(phi + 2.0).powi(2)).exp()
}

pub fn wiggle_g(phi: f64) -> f64 {
    -(2.0 * phi * (-phi * phi).exp() - 2.0 * (phi - 2.0) * (-(phi - 2.0).powi(2)).exp()
        - 2.0 * (phi + 2.0) * (-(phi + 2.0).powi(2)).exp())
}

pub fn quadratic_f(phi: f64) -> f64 {
    0.5 * phi * phi
}

pub fn quadratic_g(phi: f64) -> f64 {
    -phi
}

pub fn cosh_f(phi: f64) -> f64 {
    phi.exp() + (-phi).exp()
}

pub fn cosh_g(phi: f64) -> f64 {
    -(phi.exp() - (-phi).exp())
}

/// `prod_{k < T} (1 - gamma_k)`.
pub fn step_product(schedule: &StepSchedule, steps: usize) -> f64 {
    (0..steps).map(|k| 1.0 - schedule.at(k)).product()
}

impl CounterexampleSpec {
    pub fn wiggle(phi0: f64) -> Self {
        let expected = if phi0.abs() < 1.0 { ExpectedBehavior::Converge { to: 0.0, tol: 1e-3 } } else { ExpectedBehavior::Diverge };
        CounterexampleSpec {
            name: "wiggle",
            f: wiggle_f,
            g: wiggle_g,
            schedule: StepSchedule::harmonic(),
            phi0,
            phi_star: 0.0,
            expected,
        }
    }

    /// Quadratic with the summable schedule `1 / (t + 2)^2`; stalls at
    /// `phi0 prod (1 - gamma_k)`.
    pub fn quadratic_stuck(phi0: f64, steps: usize) -> Self {
        let schedule = StepSchedule::parametric(0.25, 2.0, 2.0).expect("valid schedule");
        let value = phi0 * step_product(&schedule, steps);
        CounterexampleSpec {
            name: "quadratic_stuck",
            f: quadratic_f,
            g: quadratic_g,
            schedule,
            phi0,
            phi_star: 0.0,
            expected: ExpectedBehavior::StallAt { value, tol: 1e-3 },
        }
    }

    pub fn quadratic_diverge(phi0: f64) -> Self {
        CounterexampleSpec {
            name: "quadratic_diverge",
            f: quadratic_f,
            g: quadratic_g,
            schedule: StepSchedule::constant(3.0).expect("valid schedule"),
            phi0,
            phi_star: 0.0,
            expected: ExpectedBehavior::Diverge,
        }
    }

    pub fn cosh(phi0: f64) -> Self {
        CounterexampleSpec {
            name: "cosh",
            f: cosh_f,
            g: cosh_g,
            schedule: StepSchedule::harmonic(),
            phi0,
            phi_star: 0.0,
            expected: ExpectedBehavior::Diverge,
        }
    }

    /// Largest `|g + f'|` over `points` random points in `[-lo, lo]`, with
    /// `f'` by central differences.
    pub fn field_gradient_gap(&self, points: usize, range: f64, rng: &mut RngStream) -> f64 {
        let h = 1e-5;
        (0..points)
            .map(|_| {
                let phi = (2.0 * rng.uniform() - 1.0) * range;
                let fd = ((self.f)(phi + h) - (self.f)(phi - h)) / (2.0 * h);
                ((self.g)(phi) + fd).abs() / (1.0 + fd.abs())
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    /// Divergence guard tripped at iteration `t`.
    Diverged { t: usize },
    /// Iterates moved strictly away from the minimizer at every step.
    Escaping { phi_final: f64 },
    Stalled { phi_final: f64 },
    Converged { phi_final: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleReport {
    pub name: &'static str,
    pub trajectory: Vec<f64>,
    pub verdict: Verdict,
    pub matches_expected: bool,
}

/// Simulates `T` steps and classifies the outcome.
pub fn run_counterexample(spec: &CounterexampleSpec, steps: usize) -> Result<CounterexampleReport> {
    if steps == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    let mut state = OptimizerState::new(vec![spec.phi0]);
    let mut diverged = None;
    for _ in 0..steps {
        let g = (spec.g)(state.phi[0]);
        match sgd_step(&mut state, [g], &spec.schedule) {
            Ok(()) => {}
            Err(Error::Divergence { t, trajectory, .. }) => {
                diverged = Some((t, trajectory));
                break;
            }
            Err(e) => return Err(e.context(spec.name)),
        }
    }
    let trajectory: Vec<f64> = match &diverged {
        Some((_, traj)) => traj.iter().map(|p| p[0]).collect(),
        None => state.trajectory().iter().map(|p| p[0]).collect(),
    };
    let last = *trajectory.last().expect("nonempty trajectory");
    let dist: Vec<f64> = trajectory.iter().map(|p| (p - spec.phi_star).abs()).collect();
    let escaping = dist.windows(2).all(|w| w[1] > w[0]);
    let verdict = if let Some((t, _)) = diverged {
        Verdict::Diverged { t }
    } else if escaping {
        Verdict::Escaping { phi_final: last }
    } else if (spec.g)(last).abs() < 1e-6 && (last - spec.phi_star).abs() < 1e-3 {
        Verdict::Converged { phi_final: last }
    } else {
        Verdict::Stalled { phi_final: last }
    };
    let matches_expected = match (&spec.expected, &verdict) {
        (ExpectedBehavior::Diverge, Verdict::Diverged { .. }) => true,
        (ExpectedBehavior::Diverge, Verdict::Escaping { phi_final }) => (phi_final - spec.phi_star).abs() > (spec.phi0 - spec.phi_star).abs(),
        (ExpectedBehavior::StallAt { value, tol }, Verdict::Stalled { phi_final } | Verdict::Escaping { phi_final } | Verdict::Converged { phi_final }) => {
            value.abs() > *tol && (phi_final - value).abs() <= *tol
        }
        (ExpectedBehavior::Converge { to, tol }, Verdict::Converged { phi_final } | Verdict::Stalled { phi_final }) => (phi_final - to).abs() <= *tol,
        _ => false,
    };
    Ok(CounterexampleReport { name: spec.name, trajectory, verdict, matches_expected })
}


fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

fn write_trajectory(path: &Path, traj: &[f64]) -> Result<()> {
    write_rows(path, "t,phi", traj.iter().enumerate().map(|(t, p)| format!("{t},{p}")))
}

/// Writes the figure CSVs into `dir` and returns their paths.
pub fn emit_figures(dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let figs: [(&str, CounterexampleSpec, usize); 4] = [
        ("fig_wiggle.csv", CounterexampleSpec::wiggle(2.5), MAX_T),
        ("fig_quadratic_stuck.csv", CounterexampleSpec::quadratic_stuck(1.0, 100), 100),
        ("fig_quadratic_diverge.csv", CounterexampleSpec::quadratic_diverge(1.0), 100),
        ("fig_cosh.csv", CounterexampleSpec::cosh(1.39), 100),
    ];
    for (file, spec, steps) in figs {
        let report = run_counterexample(&spec, steps)?;
        let path = dir.join(file);
        write_trajectory(&path, &report.trajectory)?;
        out.push(path);
    }

    let master = RngStream::new(seed, 0x7e0);
    let noise = replicate(5, &master.child(1), |rng| noise::noise_ball_path(3.0, 50, rng));
    let path = dir.join("fig_noiseball.csv");
    write_rows(
        &path,
        "rep,t,phi",
        noise.iter().enumerate().flat_map(|(r, traj)| traj.iter().enumerate().map(move |(t, p)| format!("{r},{t},{p}"))),
    )?;
    out.push(path);

    let paths = replicate(5, &master.child(2), |rng| younes::younes_path(200, &crate::moi::NtSchedule::default(), rng));
    let path = dir.join("fig_strcvx.csv");
    write_rows(
        &path,
        "rep,t,phi,x",
        paths.iter().enumerate().flat_map(|(r, run)| match run {
            Ok((phis, xs)) => phis
                .iter()
                .zip(xs)
                .enumerate()
                .map(move |(t, (p, x))| format!("{r},{t},{p},{}", if *x > 0.0 { "+" } else { "-" }))
                .collect::<Vec<_>>(),
            Err(_) => Vec::new(),
        }),
    )?;
    out.push(path);
    Ok(out)
}
