use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::expfam::{
    gaussian_kl, naive_sgd_update, online_update, DiagGaussian, ExpFamily, MomentParams, NaturalParams,
    UnitVarianceGaussian,
};
use crate::mcmc::{ImhKernel, MarkovKernel, StateVector};
use crate::models::DiagNormal;
use crate::optim::StepSchedule;
use crate::rng::RngStream;
use crate::stats::median;
use crate::theorylab::replicate;
use crate::{Error, Result};

pub const TARGET_MEAN: f64 = 0.2;
pub const TARGET_VAR: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawSource {
    Iid,
    /// IMH chain on the target with a fixed `N(0, imh_proposal_sd^2)` proposal.
    Imh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    NaiveSgd,
    MomentMatching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSettings {
    pub t_max: usize,
    pub seeds: usize,
    /// Step sizes of naive natural-parameter SGD.
    pub naive_schedule: StepSchedule,
    pub imh_proposal_sd: f64,
    /// Comparisons start at this `t`.
    pub compare_from: usize,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        OnlineSettings {
            t_max: 10_000,
            seeds: 20,
            naive_schedule: StepSchedule::Parametric { gamma0: 0.1, c: 1.0, alpha: 1.0 },
            imh_proposal_sd: 1.0,
            compare_from: 100,
        }
    }
}

/// `1, 2, 5, 10, 20, 50, ...` up to `t_max`, plus `t_max`.
pub fn log_grid(t_max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1;
    while decade <= t_max {
        for m in [1, 2, 5] {
            if m * decade <= t_max {
                out.push(m * decade);
            }
        }
        decade *= 10;
    }
    if out.last() != Some(&t_max) {
        out.push(t_max);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlRow {
    pub source: DrawSource,
    pub seed: usize,
    pub t: usize,
    pub learner: Learner,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianRow {
    pub source: DrawSource,
    pub t: usize,
    pub naive_sgd: f64,
    pub moment_matching: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineReport {
    pub rows: Vec<KlRow>,
    pub medians: Vec<MedianRow>,
    /// Largest gap, in ulps, between naive SGD with `1/t` steps and the
    /// online update on the known-variance subfamily.
    pub identity_max_ulps: f64,
    pub compare_from: usize,
    /// Runs where naive SGD left the natural domain, with the step.
    pub naive_exits: Vec<(DrawSource, usize, usize)>,
}

impl OnlineReport {
    /// Logged times `t >= compare_from` where moment matching does not beat
    /// naive SGD in median.
    pub fn ordering_violations(&self) -> Vec<(DrawSource, usize)> {
        self.medians
            .iter()
            .filter(|m| m.t >= self.compare_from && !(m.moment_matching < m.naive_sgd))
            .map(|m| (m.source, m.t))
            .collect()
    }
}

/// Forward KL from the target to the Gaussian with moments `phi`;
/// infinite while `phi` is not a valid moment vector.
fn kl_of_moments(fam: &DiagGaussian, phi: &[f64]) -> f64 {
    if !fam.is_feasible_moment(phi) {
        return f64::INFINITY;
    }
    let (m, v) = fam.mean_var_from_moments(phi);
    gaussian_kl(&[TARGET_MEAN], &[TARGET_VAR], &m, &v)
}

fn kl_of_natural(fam: &DiagGaussian, eta: &[f64]) -> f64 {
    let (m, v) = fam.mean_var_from_natural(eta);
    gaussian_kl(&[TARGET_MEAN], &[TARGET_VAR], &m, &v)
}

fn draws(source: DrawSource, settings: &OnlineSettings, rng: &mut RngStream) -> Result<Vec<f64>> {
    let sd = TARGET_VAR.sqrt();
    match source {
        DrawSource::Iid => Ok((0..settings.t_max).map(|_| TARGET_MEAN + sd * rng.normal()).collect()),
        DrawSource::Imh => {
            let target = Arc::new(DiagNormal::isotropic(1, TARGET_MEAN, sd));
            let proposal = Arc::new(DiagNormal::isotropic(1, 0.0, settings.imh_proposal_sd));
            let k = ImhKernel::new(proposal, target)?;
            let mut x = StateVector(vec![0.0]);
            (0..settings.t_max)
                .map(|_| {
                    x = k.step(&x, rng)?;
                    Ok(x[0])
                })
                .collect()
        }
    }
}

/// Both learners on one draw sequence, logged on `grid`. Both start from the
/// standard normal. Once naive SGD leaves the natural domain its KL is
/// infinite for the rest of the run.
fn learn(zs: &[f64], schedule: &StepSchedule, grid: &[usize]) -> Result<(Vec<f64>, Vec<f64>, Option<usize>)> {
    let fam = DiagGaussian::new(1);
    let mut phi = MomentParams(DiagGaussian::moments_from_mean_var(&[0.0], &[1.0]));
    let mut eta = Some(NaturalParams(DiagGaussian::natural_from_mean_var(&[0.0], &[1.0])));
    let mut exit = None;
    let (mut naive, mut mm) = (Vec::new(), Vec::new());
    let mut next = grid.iter().peekable();
    for (i, z) in zs.iter().enumerate() {
        let t = i + 1;
        let s = fam.suff_stat(&[*z]);
        phi = online_update(&phi, &s, t as u64);
        if let Some(e) = &eta {
            eta = match naive_sgd_update(e, &s, schedule.at(i), &fam) {
                Ok(e) => Some(e),
                Err(Error::OutsideDomain(_)) => {
                    exit = Some(t);
                    None
                }
                Err(e) => return Err(e.context(format!("naive SGD at t = {t}"))),
            };
        }
        if next.peek() == Some(&&t) {
            next.next();
            naive.push(eta.as_ref().map_or(f64::INFINITY, |e| kl_of_natural(&fam, &e.0)));
            mm.push(kl_of_moments(&fam, &phi.0));
        }
    }
    Ok((naive, mm, exit))
}

fn identity_ulps(t_max: usize, rng: &mut RngStream) -> Result<f64> {
    let fam = UnitVarianceGaussian::new(1);
    let mut eta = NaturalParams(vec![0.0]);
    let mut phi = MomentParams(vec![0.0]);
    let mut worst = 0.0f64;
    for t in 1..=t_max {
        let s = [TARGET_MEAN + TARGET_VAR.sqrt() * rng.normal()];
        eta = naive_sgd_update(&eta, &s, 1.0 / t as f64, &fam)?;
        phi = online_update(&phi, &s, t as u64);
        let scale = eta.0[0].abs().max(s[0].abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((eta.0[0] - phi.0[0]).abs() / (f64::EPSILON * scale));
    }
    Ok(worst)
}

/// Forward KL of naive natural-parameter SGD and online moment matching
/// learning `N(0.2, 0.4)`, from iid and from IMH draws.
pub fn online_normals_experiment(settings: &OnlineSettings, rng: &RngStream) -> Result<OnlineReport> {
    if settings.t_max == 0 || settings.seeds == 0 {
        return Err(Error::InvalidArgument("need t_max >= 1 and at least one seed".into()));
    }
    settings.naive_schedule.validate()?;
    let grid = log_grid(settings.t_max);
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    let mut naive_exits = Vec::new();
    for (k, source) in [DrawSource::Iid, DrawSource::Imh].into_iter().enumerate() {
        let runs = replicate(settings.seeds, &rng.child(k as u64), |r| {
            let zs = draws(source, settings, r)?;
            learn(&zs, &settings.naive_schedule, &grid)
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        for (seed, (naive, mm, exit)) in runs.iter().enumerate() {
            if let Some(t) = exit {
                naive_exits.push((source, seed, *t));
            }
            for (j, t) in grid.iter().enumerate() {
                rows.push(KlRow { source, seed, t: *t, learner: Learner::NaiveSgd, kl: naive[j] });
                rows.push(KlRow { source, seed, t: *t, learner: Learner::MomentMatching, kl: mm[j] });
            }
        }
        for (j, t) in grid.iter().enumerate() {
            medians.push(MedianRow {
                source,
                t: *t,
                naive_sgd: median(&runs.iter().map(|r| r.0[j]).collect::<Vec<_>>()),
                moment_matching: median(&runs.iter().map(|r| r.1[j]).collect::<Vec<_>>()),
            });
        }
    }
    let identity_max_ulps = identity_ulps(settings.t_max, &mut rng.child(2))?;
    Ok(OnlineReport { rows, medians, identity_max_ulps, compare_from: settings.compare_from, naive_exits })
}
