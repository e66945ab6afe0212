//! Config-driven experiment runners. Each run writes plot-ready CSV/JSON
//! files into its output directory and reports named checks.

mod bench;
mod online;
mod pt;
mod wf;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use bench::*;
pub use online::*;
pub use pt::*;
pub use wf::*;

use crate::grad::problems::{estimator_bench, write_bench_csv};
use crate::mcmc::{write_trace_csv, StateVector};
use crate::models::{DiagNormal, Normal};
use crate::rng::RngStream;
use crate::tempering::{pt_scaling, two_leg_vs_single_leg, VptConfig, VptRun};
use crate::theorylab::{
    emit_figures, noise_ball_experiment, run_counterexample, verify_theorem_bound, younes_experiment, CounterexampleSpec,
    TheoremProblem, MAX_T,
};
use crate::transport::{
    adaptive_transport_run, affine_map, composite_invariance_error, transport_loss, transport_loss_gradient,
    write_loss_csv, write_particles_csv, AffineMap, TransportMap, TransportSettings,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Theorylab,
    OnlineNormals,
    ImhWf,
    PtScaling,
    PtVariational,
    Transport,
    EstimatorBench,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Theorylab,
        ExperimentKind::OnlineNormals,
        ExperimentKind::ImhWf,
        ExperimentKind::PtScaling,
        ExperimentKind::PtVariational,
        ExperimentKind::Transport,
        ExperimentKind::EstimatorBench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Theorylab => "theorylab",
            ExperimentKind::OnlineNormals => "online-normals",
            ExperimentKind::ImhWf => "imh-wf",
            ExperimentKind::PtScaling => "pt-scaling",
            ExperimentKind::PtVariational => "pt-variational",
            ExperimentKind::Transport => "transport",
            ExperimentKind::EstimatorBench => "estimator-bench",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub outputs: &'static [&'static str],
    pub expected_runtime: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    ExperimentKind::ALL
        .into_iter()
        .map(|k| {
            let (description, outputs, expected_runtime): (&str, &[&str], &str) = match k {
                ExperimentKind::Theorylab => (
                    "Stochastic approximation counterexamples (escape, stall, doubling, blow-up, stuck Markov chain), the constant-step noise ball and the convergence bounds",
                    &[
                        "fig_wiggle.csv",
                        "fig_quadratic_stuck.csv",
                        "fig_quadratic_diverge.csv",
                        "fig_cosh.csv",
                        "fig_noiseball.csv",
                        "fig_strcvx.csv",
                        "counterexamples.json",
                        "noise_ball.json",
                        "younes.json",
                        "bounds.csv",
                    ],
                    "< 1 min",
                ),
                ExperimentKind::OnlineNormals => (
                    "Forward KL of naive natural-parameter SGD against online moment matching when learning N(0.2, 0.4) from iid and IMH draws",
                    &["kl.csv", "kl_median.csv", "identity.json"],
                    "< 10 s",
                ),
                ExperimentKind::ImhWf => (
                    "Per-coordinate ESS of a round-trained IMH + slice composite against random-walk Metropolis on the constrained Wright-Fisher bridge",
                    &["ess.csv", "training.csv"],
                    "< 1 min",
                ),
                ExperimentKind::PtScaling => (
                    "Median log IMH acceptance against dimension and NRPT swap acceptance with 2 sqrt(d) chains on Gaussian products",
                    &["scaling.csv", "curse_fit.json"],
                    "< 1 min",
                ),
                ExperimentKind::PtVariational => (
                    "Two-leg against single-leg variational parallel tempering on a bimodal target started in one mode",
                    &["mode_retention.csv", "vpt_rounds.csv", "swap_stats.csv", "roundtrips.csv", "trace.csv"],
                    "< 1 min",
                ),
                ExperimentKind::Transport => (
                    "Adaptive MCMC with an affine transport map trained on N(2, 0.25)",
                    &["particles.csv", "loss.csv", "map.json", "checks.json"],
                    "< 10 s",
                ),
                ExperimentKind::EstimatorBench => (
                    "Bias and variance of reparameterization, REINFORCE, control-variate, Rao-Blackwell and mini-batch gradient estimators",
                    &["bench.csv", "variance.csv"],
                    "< 30 s",
                ),
            };
            CatalogEntry { name: k.name(), description, outputs, expected_runtime }
        })
        .collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Experiment settings; unknown keys are rejected when the run starts.
    #[serde(default)]
    pub overrides: Map<String, Value>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig { experiment, seed, overrides: Map::new(), output_dir: output_dir.into() }
    }

    /// Parses the overrides into the experiment's settings type.
    pub fn settings<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(Value::Object(self.overrides.clone()))
            .map_err(|e| Error::InvalidArgument(format!("overrides for {}: {e}", self.experiment)))
    }

    /// Checks the overrides without running anything.
    pub fn validate(&self) -> Result<()> {
        match self.experiment {
            ExperimentKind::Theorylab => self.settings::<TheorylabSettings>().map(drop),
            ExperimentKind::OnlineNormals => self.settings::<OnlineSettings>().map(drop),
            ExperimentKind::ImhWf => self.settings::<WfSettings>().map(drop),
            ExperimentKind::PtScaling => self.settings::<ScalingSettings>().map(drop),
            ExperimentKind::PtVariational => self.settings::<VptSettings>().map(drop),
            ExperimentKind::Transport => self.settings::<TransportExperimentSettings>().map(drop),
            ExperimentKind::EstimatorBench => self.settings::<BenchSettings>().map(drop),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExperimentOutcome {
    /// Files written, in order.
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
    /// Timing-dependent numbers. They vary between runs and are kept out of
    /// the artifact files.
    pub timing: Map<String, Value>,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Collects output files under one directory.
struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        self.write(name, |w| {
            let mut c = csv::Writer::from_writer(w);
            for r in rows {
                c.serialize(r)?;
            }
            c.flush()?;
            Ok(())
        })
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let rng = RngStream::new(config.seed, 0);
    let mut out = Outputs::new(&config.output_dir)?;
    let (checks, timing) = match config.experiment {
        ExperimentKind::Theorylab => (theorylab(&config.settings()?, config.seed, &rng, &mut out)?, Map::new()),
        ExperimentKind::OnlineNormals => (online_normals(&config.settings()?, &rng, &mut out)?, Map::new()),
        ExperimentKind::ImhWf => imh_wf(&config.settings()?, &rng, &mut out)?,
        ExperimentKind::PtScaling => (scaling(&config.settings()?, &rng, &mut out)?, Map::new()),
        ExperimentKind::PtVariational => (variational(&config.settings()?, &rng, &mut out)?, Map::new()),
        ExperimentKind::Transport => (transport(&config.settings()?, &rng, &mut out)?, Map::new()),
        ExperimentKind::EstimatorBench => (estimators(&config.settings()?, config.seed, &rng, &mut out)?, Map::new()),
    };
    Ok(ExperimentOutcome { files: out.files, checks, timing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorylabSettings {
    pub noise_reps: usize,
    pub noise_steps: usize,
    pub noise_phi0: f64,
    pub younes_steps: usize,
    pub younes_reps: usize,
    pub bound_steps: usize,
    pub bound_reps: usize,
}

impl Default for TheorylabSettings {
    fn default() -> Self {
        TheorylabSettings {
            noise_reps: 10_000,
            noise_steps: 50,
            noise_phi0: 3.0,
            younes_steps: 1000,
            younes_reps: 2000,
            bound_steps: MAX_T,
            bound_reps: 200,
        }
    }
}

#[derive(Serialize)]
struct CounterexampleRow {
    name: &'static str,
    steps: usize,
    verdict: crate::theorylab::Verdict,
    matches_expected: bool,
    phi_final: f64,
}

#[derive(Serialize)]
struct BoundRow {
    problem: &'static str,
    t: usize,
    lhs: f64,
    se: f64,
    rhs: f64,
}

fn theorylab(s: &TheorylabSettings, seed: u64, rng: &RngStream, out: &mut Outputs) -> Result<Vec<Check>> {
    out.files.extend(emit_figures(out.dir, seed)?);
    let mut checks = Vec::new();

    let stall_steps = MAX_T;
    let specs = [
        (CounterexampleSpec::wiggle(2.5), MAX_T),
        (CounterexampleSpec::quadratic_stuck(1.0, stall_steps), stall_steps),
        (CounterexampleSpec::quadratic_diverge(1.0), 100),
        (CounterexampleSpec::cosh(1.39), MAX_T),
    ];
    let mut rows = Vec::new();
    let mut all_match = true;
    let mut details = Vec::new();
    for (spec, steps) in &specs {
        let r = run_counterexample(spec, *steps)?;
        all_match &= r.matches_expected;
        let last = *r.trajectory.last().expect("nonempty");
        details.push(format!("{} {:?}", r.name, r.verdict));
        match r.name {
            "quadratic_stuck" => {
                let exact = (stall_steps as f64 + 2.0) / (2.0 * (stall_steps as f64 + 1.0));
                checks.push(Check::new(
                    "quadratic_stall_limit",
                    (last - exact).abs() < 1e-12 && last > 0.0,
                    format!("phi_T = {last}, exact product {exact}"),
                ));
            }
            "quadratic_diverge" => {
                let doubling = r.trajectory.iter().enumerate().all(|(t, p)| p.abs() == 2f64.powi(t as i32));
                checks.push(Check::new("quadratic_doubling", doubling, format!("{} iterates, |phi_t| = 2^t", r.trajectory.len())));
            }
            _ => {}
        }
        rows.push(CounterexampleRow { name: r.name, steps: *steps, verdict: r.verdict, matches_expected: r.matches_expected, phi_final: last });
    }
    checks.push(Check::new("counterexample_verdicts", all_match, details.join("; ")));
    out.json("counterexamples.json", &rows)?;

    let younes = younes_experiment(s.younes_steps, s.younes_reps, &crate::moi::NtSchedule::default(), &rng.child(1))?;
    checks.push(Check::new(
        "younes_stuck",
        younes.stuck_fraction >= 0.5 && younes.stuck_fraction >= younes.analytic_floor - 3.0 * younes.stuck_se,
        format!("stuck {} (se {}), floor {}", younes.stuck_fraction, younes.stuck_se, younes.analytic_floor),
    ));
    out.json("younes.json", &younes)?;

    let noise = noise_ball_experiment(s.noise_phi0, s.noise_steps, s.noise_reps, &rng.child(2))?;
    checks.push(Check::new(
        "noise_ball",
        noise.variance_rel_error() < 0.05 && (noise.mean - noise.expected_mean).abs() < 3.0 * noise.se_mean,
        format!("variance {} vs {}, mean {} (se {})", noise.variance, noise.expected_variance, noise.mean, noise.se_mean),
    ));
    out.json("noise_ball.json", &noise)?;

    let grid = log_grid(s.bound_steps);
    let mut rows = Vec::new();
    for (k, p) in [TheoremProblem::deterministic_quadratic(), TheoremProblem::iid_quadratic(), TheoremProblem::markov_two_point()]
        .iter()
        .enumerate()
    {
        let r = verify_theorem_bound(p, s.bound_steps, s.bound_reps, &rng.child(3 + k as u64))?;
        let detail = match r.check() {
            Ok(()) => format!("holds at every t < {}", s.bound_steps),
            Err(e) => e.to_string(),
        };
        checks.push(Check::new(&format!("bound_{}", p.name), r.first_violation.is_none(), detail));
        rows.extend(grid.iter().map(|&t| BoundRow { problem: p.name, t, lhs: r.lhs[t - 1], se: r.se[t - 1], rhs: r.rhs[t - 1] }));
    }
    out.csv("bounds.csv", &rows)?;
    Ok(checks)
}

fn online_normals(s: &OnlineSettings, rng: &RngStream, out: &mut Outputs) -> Result<Vec<Check>> {
    let r = online_normals_experiment(s, rng)?;
    out.csv("kl.csv", &r.rows)?;
    out.csv("kl_median.csv", &r.medians)?;
    out.json(
        "identity.json",
        &json!({
            "max_ulps": r.identity_max_ulps,
            "t_max": s.t_max,
            "naive_domain_exits": r.naive_exits.iter().map(|(src, seed, t)| json!({"source": src, "seed": seed, "t": t})).collect::<Vec<_>>(),
        }),
    )?;
    let violations = r.ordering_violations();
    Ok(vec![
        Check::new(
            "moment_matching_beats_naive_sgd",
            violations.is_empty(),
            if violations.is_empty() {
                format!("median KL lower at every logged t >= {}", s.compare_from)
            } else {
                format!("not lower at {violations:?}")
            },
        ),
        Check::new("known_variance_identity", r.identity_max_ulps <= 10.0, format!("max gap {} ulps", r.identity_max_ulps)),
    ])
}

fn imh_wf(s: &WfSettings, rng: &RngStream, out: &mut Outputs) -> Result<(Vec<Check>, Map<String, Value>)> {
    let r = imh_wf_experiment(s, rng)?;
    out.write("ess.csv", |w| write_ess_csv(&r, w))?;
    out.csv(
        "training.csv",
        &r.training
            .rounds
            .iter()
            .map(|x| (x.round, x.size, x.heldout_log_density, x.retried))
            .collect::<Vec<_>>(),
    )?;
    let d = r.composite.ess.len();
    let needed = (3 * d).div_ceil(4);
    let wins = r.wins(|x| x.ess_per_second());
    let per_eval = r.wins(|x| x.ess_per_evaluation());
    let mut timing = Map::new();
    timing.insert("composite_wall_time".into(), json!(r.composite.wall_time));
    timing.insert("rwmh_wall_time".into(), json!(r.rwmh.wall_time));
    timing.insert("composite_ess_per_second".into(), json!(r.composite.ess_per_second()));
    timing.insert("rwmh_ess_per_second".into(), json!(r.rwmh.ess_per_second()));
    Ok((
        vec![Check::new(
            "ess_per_second",
            wins >= needed,
            format!(
                "composite at least as fast on {wins}/{d} coordinates (needed {needed}); per evaluation {per_eval}/{d}; IMH acceptance {:.3}",
                r.composite.acceptance
            ),
        )],
        timing,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSettings {
    pub dims: Vec<usize>,
    /// Proposal and reference sd; the target is `N(0, 1)^d`.
    pub reference_sd: f64,
    pub sweeps: usize,
    pub curse_pairs: usize,
    pub min_r_squared: f64,
    pub min_swap_acceptance: f64,
}

impl Default for ScalingSettings {
    fn default() -> Self {
        ScalingSettings {
            dims: vec![1, 2, 4, 8, 16, 32, 64],
            reference_sd: 1.2,
            sweeps: 2000,
            curse_pairs: 2000,
            min_r_squared: 0.9,
            min_swap_acceptance: 0.2,
        }
    }
}

#[derive(Serialize)]
struct ScalingCsvRow {
    d: usize,
    n_chains: usize,
    median_log_imh_acceptance: f64,
    imh_acceptance: f64,
    mean_swap_acceptance: f64,
    min_swap_acceptance: f64,
    round_trips: usize,
}

fn scaling(s: &ScalingSettings, rng: &RngStream, out: &mut Outputs) -> Result<Vec<Check>> {
    if s.dims.len() < 2 {
        return Err(Error::InvalidArgument("need at least two dimensions".into()));
    }
    let curse = crate::expfam::curse_of_dim_experiment(
        &Normal::standard(),
        &Normal::new(0.0, s.reference_sd),
        &s.dims,
        s.curse_pairs,
        &mut rng.child(0),
    );
    let rows = pt_scaling(&s.dims, s.reference_sd, s.sweeps, &rng.child(1))?;
    let csv_rows: Vec<ScalingCsvRow> = rows
        .iter()
        .zip(&curse.rows)
        .map(|(r, c)| ScalingCsvRow {
            d: r.d,
            n_chains: r.n_chains,
            median_log_imh_acceptance: c.median_log_alpha,
            imh_acceptance: r.imh_acceptance,
            mean_swap_acceptance: r.mean_swap_acceptance,
            min_swap_acceptance: r.min_swap_acceptance,
            round_trips: r.round_trips,
        })
        .collect();
    out.csv("scaling.csv", &csv_rows)?;
    out.json(
        "curse_fit.json",
        &json!({ "slope": curse.fit.slope, "intercept": curse.fit.intercept, "r_squared": curse.fit.r_squared }),
    )?;
    let last = rows.last().expect("nonempty");
    Ok(vec![
        Check::new(
            "imh_log_acceptance_linear",
            curse.fit.r_squared >= s.min_r_squared && curse.fit.slope < 0.0,
            format!("slope {}, R^2 {}", curse.fit.slope, curse.fit.r_squared),
        ),
        Check::new(
            "nrpt_swap_acceptance",
            last.mean_swap_acceptance >= s.min_swap_acceptance,
            format!(
                "d = {}: mean swap acceptance {} with {} chains, IMH acceptance {}",
                last.d, last.mean_swap_acceptance, last.n_chains, last.imh_acceptance
            ),
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VptSettings {
    pub seeds: usize,
    pub benchmark: VptConfig,
    /// Fraction of seeds where the two-leg path must keep both modes.
    pub retain_fraction: f64,
    /// Fraction of seeds where the single-leg path must collapse.
    pub collapse_fraction: f64,
}

impl Default for VptSettings {
    fn default() -> Self {
        VptSettings { seeds: 20, benchmark: VptConfig::default(), retain_fraction: 0.9, collapse_fraction: 0.5 }
    }
}

#[derive(Serialize)]
struct VptRoundRow {
    path: &'static str,
    round: usize,
    sweeps: usize,
    mean: f64,
    variance: f64,
    swap_rate: f64,
    round_trips: usize,
    flagged: bool,
}

fn vpt_rows(path: &'static str, run: &VptRun) -> Vec<VptRoundRow> {
    let fam = crate::expfam::DiagGaussian::new(1);
    run.rounds
        .iter()
        .map(|r| {
            let (m, v) = fam.mean_var_from_moments(&r.phi);
            VptRoundRow {
                path,
                round: r.round,
                sweeps: r.sweeps,
                mean: m[0],
                variance: v[0],
                swap_rate: r.swap_rate,
                round_trips: r.round_trips,
                flagged: r.flagged,
            }
        })
        .collect()
}

fn variational(s: &VptSettings, rng: &RngStream, out: &mut Outputs) -> Result<Vec<Check>> {
    let report = two_leg_vs_single_leg(&s.benchmark, s.seeds, &rng.child(0))?;
    out.csv(
        "mode_retention.csv",
        &(0..s.seeds)
            .map(|k| (k, report.two_leg_min_fraction[k], report.single_leg_min_fraction[k]))
            .collect::<Vec<_>>(),
    )?;
    let two = s.benchmark.run(true, &rng.child(1))?;
    let one = s.benchmark.run(false, &rng.child(2))?;
    let mut rows = vpt_rows("two_leg", &two);
    rows.extend(vpt_rows("single_leg", &one));
    out.csv("vpt_rounds.csv", &rows)?;
    out.write("swap_stats.csv", |w| write_swap_stats_csv(&two.ensemble.swap_stats, w))?;
    out.write("roundtrips.csv", |w| write_roundtrips_csv(&two.ensemble.round_trips, w))?;
    out.write("trace.csv", |w| write_trace_csv(&two.final_trace, w))?;
    let need_retain = (s.retain_fraction * s.seeds as f64).ceil() as usize;
    let need_collapse = (s.collapse_fraction * s.seeds as f64).ceil() as usize;
    Ok(vec![
        Check::new(
            "two_leg_retains_modes",
            report.two_leg_retained >= need_retain,
            format!("{}/{} seeds (needed {need_retain})", report.two_leg_retained, s.seeds),
        ),
        Check::new(
            "single_leg_collapses",
            report.single_leg_collapsed >= need_collapse,
            format!("{}/{} seeds (needed {need_collapse})", report.single_leg_collapsed, s.seeds),
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportExperimentSettings {
    pub target_mean: f64,
    pub target_sd: f64,
    pub particles: usize,
    pub run: TransportSettings,
    /// Allowed distance of the trained `(mu, s)` from the target's.
    pub tolerance: f64,
}

impl Default for TransportExperimentSettings {
    fn default() -> Self {
        TransportExperimentSettings {
            target_mean: 2.0,
            target_sd: 0.5,
            particles: 64,
            run: TransportSettings::default(),
            tolerance: 0.1,
        }
    }
}

/// Largest relative gap between the analytic loss gradient and central
/// differences over random particle sets and parameters.
fn loss_gradient_gap(rng: &mut RngStream) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = AffineMap::new(&[2.0 * rng.normal()], &[(0.5 * rng.normal()).exp()])?;
        let particles: Vec<StateVector> = (0..16).map(|_| StateVector(vec![1.0 + 2.0 * rng.normal()])).collect();
        let g = transport_loss_gradient(&m, &particles);
        for j in 0..2 {
            let h = 1e-6;
            let mut phi = m.params().to_vec();
            let (mut p, mut q) = (m.clone(), m.clone());
            phi[j] += h;
            p.set_params(&phi)?;
            phi[j] -= 2.0 * h;
            q.set_params(&phi)?;
            let fd = (transport_loss(&p, &particles) - transport_loss(&q, &particles)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn transport(s: &TransportExperimentSettings, rng: &RngStream, out: &mut Outputs) -> Result<Vec<Check>> {
    if !(s.target_sd > 0.0) || s.particles < 2 {
        return Err(Error::InvalidArgument("need a positive target sd and at least two particles".into()));
    }
    let target = Arc::new(DiagNormal::isotropic(1, s.target_mean, s.target_sd));
    let mut init = rng.child(0);
    let particles: Vec<StateVector> = (0..s.particles).map(|_| StateVector(vec![init.normal()])).collect();
    let run = adaptive_transport_run(target, affine_map(1)?, particles, s.run, None, &rng.child(1))?;
    out.write("particles.csv", |w| write_particles_csv(&run.particles, w))?;
    out.write("loss.csv", |w| write_loss_csv(&run.losses, w))?;
    out.json("map.json", &run.map)?;

    let (mu, sd) = (run.map.mu()[0], run.map.s()[0]);
    let grid: Vec<f64> = (0..16).map(|i| s.target_mean - 4.0 * s.target_sd + 0.5 * s.target_sd * i as f64).collect();
    let (m0, s0) = (s.target_mean, s.target_sd);
    let invariance = composite_invariance_error(&grid, |x| -0.5 * ((x - m0) / s0).powi(2), &run.map)?;
    let gap = loss_gradient_gap(&mut rng.child(2))?;
    let checks = vec![
        Check::new(
            "trained_map",
            (mu - s.target_mean).abs() <= s.tolerance && (sd - s.target_sd).abs() <= s.tolerance,
            format!("mu {mu}, s {sd}; transport acceptance {}", run.transport_acceptance()),
        ),
        Check::new("composite_invariance", invariance < 1e-10, format!("max deviation {invariance:e}")),
        Check::new("loss_gradient", gap < 1e-4, format!("max relative gap {gap:e}")),
    ];
    out.json("checks.json", &checks)?;
    Ok(checks)
}

fn estimators(s: &BenchSettings, seed: u64, rng: &RngStream, out: &mut Outputs) -> Result<Vec<Check>> {
    let results = estimator_bench(s.reps, s.t, seed)?;
    out.write("bench.csv", |w| write_bench_csv(&results, w))?;
    let rows = variance_comparisons(s, &rng.child(0))?;
    out.csv("variance.csv", &rows)?;
    let biased: Vec<String> = results
        .iter()
        .filter(|r| !r.unbiased())
        .map(|r| format!("{}/{}: err {} se {}", r.row.estimator, r.row.problem, r.row.mean_err, r.se))
        .collect();
    let need = (0.9 * s.seeds as f64).ceil() as usize;
    let reinforce = rows.iter().filter(|r| r.reinforce_variance > r.reparam_variance).count();
    let rb = rows.iter().filter(|r| r.rao_blackwell_variance < r.raw_score_variance).count();
    let expected = 1.0 - s.rho * s.rho;
    let ratio = crate::stats::median(&rows.iter().map(|r| r.cv_variance_ratio).collect::<Vec<_>>());
    Ok(vec![
        Check::new(
            "unbiased",
            biased.is_empty(),
            if biased.is_empty() { format!("{} estimators within 3 SE", results.len()) } else { biased.join("; ") },
        ),
        Check::new("reinforce_above_reparam", reinforce >= need, format!("{reinforce}/{} seeds", s.seeds)),
        Check::new("rao_blackwell_reduces", rb >= need, format!("{rb}/{} seeds", s.seeds)),
        Check::new(
            "control_variate_factor",
            (ratio / expected - 1.0).abs() < 0.2,
            format!("median variance ratio {ratio}, 1 - rho^2 = {expected}"),
        ),
    ])
}

#[cfg(test)]
mod tests;
