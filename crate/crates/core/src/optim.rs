//! Step-size schedules, SGD, heavy-ball momentum, Polyak averaging and the
//! round-based (doubling) adaptation driver.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::expfam::{ExpFamily, MomentParams, SuffStatAccumulator};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Iterates with `|phi| > DIVERGENCE_THRESHOLD` abort the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Default schedule exponent.
pub const DEFAULT_ALPHA: f64 = 0.6;

/// Default fraction of iterates excluded from the Polyak average.
pub const DEFAULT_POLYAK_BURN_IN: f64 = 0.5;

/// Step sizes `gamma_t`, indexed from `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `gamma0 (1 + c gamma0 t)^(-alpha)`.
    Parametric { gamma0: f64, c: f64, alpha: f64 },
    Constant { gamma: f64 },
    /// Explicit values; the last one is repeated past the end.
    Sequence { values: Vec<f64> },
}

impl StepSchedule {
    pub fn parametric(gamma0: f64, c: f64, alpha: f64) -> Result<Self> {
        let s = StepSchedule::Parametric { gamma0, c, alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(gamma: f64) -> Result<Self> {
        let s = StepSchedule::Constant { gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn sequence(values: Vec<f64>) -> Result<Self> {
        let s = StepSchedule::Sequence { values };
        s.validate()?;
        Ok(s)
    }

    /// `1 / (t + 1)`.
    pub fn harmonic() -> Self {
        StepSchedule::Parametric { gamma0: 1.0, c: 1.0, alpha: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSchedule::Parametric { gamma0, c, alpha } => {
                *gamma0 > 0.0 && gamma0.is_finite() && *c >= 0.0 && c.is_finite() && alpha.is_finite()
            }
            StepSchedule::Constant { gamma } => *gamma > 0.0 && gamma.is_finite(),
            StepSchedule::Sequence { values } => !values.is_empty() && values.iter().all(|g| *g > 0.0 && g.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("step sizes must be positive and finite: {self:?}")))
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        match self {
            StepSchedule::Parametric { gamma0, c, alpha } => gamma0 * (1.0 + c * gamma0 * t as f64).powf(-alpha),
            StepSchedule::Constant { gamma } => *gamma,
            StepSchedule::Sequence { values } => values[t.min(values.len() - 1)],
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Iterate, previous iterate and the stored trajectory `phi_0, ..., phi_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub phi: Vec<f64>,
    pub prev_phi: Vec<f64>,
    pub t: usize,
    pub polyak_burn_in: f64,
    history: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(phi0: Vec<f64>) -> Self {
        Self::with_burn_in(phi0, DEFAULT_POLYAK_BURN_IN)
    }

    pub fn with_burn_in(phi0: Vec<f64>, polyak_burn_in: f64) -> Self {
        assert!((0.0..1.0).contains(&polyak_burn_in), "burn-in fraction must lie in [0, 1)");
        OptimizerState { prev_phi: phi0.clone(), history: vec![phi0.clone()], phi: phi0, t: 0, polyak_burn_in }
    }

    pub fn trajectory(&self) -> &[Vec<f64>] {
        &self.history
    }

    fn advance(&mut self, next: Vec<f64>) -> Result<()> {
        self.prev_phi = std::mem::replace(&mut self.phi, next);
        self.t += 1;
        self.history.push(self.phi.clone());
        let n = norm(&self.phi);
        if !n.is_finite() || n > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence { t: self.t, norm: n, trajectory: self.history.clone() });
        }
        Ok(())
    }

    fn check_dim(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.phi.len() {
            return Err(Error::Dimension { expected: self.phi.len(), got: g.len() });
        }
        Ok(())
    }
}

/// `phi_{t+1} = phi_t + gamma_t g`.
pub fn sgd_step(state: &mut OptimizerState, g_hat: impl AsRef<[f64]>, schedule: &StepSchedule) -> Result<()> {
    let g = g_hat.as_ref();
    state.check_dim(g)?;
    let gamma = schedule.at(state.t);
    let next = state.phi.iter().zip(g).map(|(p, gi)| p + gamma * gi).collect();
    state.advance(next)
}

/// `phi_{t+1} = phi_t + gamma g + beta (phi_t - phi_{t-1})`.
pub fn momentum_step(state: &mut OptimizerState, g_hat: impl AsRef<[f64]>, gamma: f64, beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("momentum beta = {beta} outside [0, 1)")));
    }
    let g = g_hat.as_ref();
    state.check_dim(g)?;
    let next = (0..g.len())
        .map(|i| state.phi[i] + gamma * g[i] + beta * (state.phi[i] - state.prev_phi[i]))
        .collect();
    state.advance(next)
}

/// Mean of the iterates after the burn-in fraction of the trajectory.
pub fn polyak_average(state: &OptimizerState) -> Result<Vec<f64>> {
    let n = state.history.len();
    let skip = (state.polyak_burn_in * n as f64).floor() as usize;
    let kept = &state.history[skip.min(n)..];
    if kept.is_empty() {
        return Err(Error::InvalidArgument("no post-burn-in iterates to average".into()));
    }
    let m = state.phi.len();
    let mut avg = vec![0.0; m];
    for it in kept {
        for i in 0..m {
            avg[i] += it[i];
        }
    }
    avg.iter_mut().for_each(|a| *a /= kept.len() as f64);
    Ok(avg)
}

/// Row of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub gamma: f64,
    pub phi: Vec<f64>,
    pub grad_norm: f64,
}

/// Writes `t,gamma_t,phi_1..phi_m,grad_norm`.
pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = rows.first().map_or(0, |r| r.phi.len());
    let mut header = vec!["t".to_string(), "gamma_t".to_string()];
    header.extend((1..=m).map(|i| format!("phi_{i}")));
    header.push("grad_norm".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string(), r.gamma.to_string()];
        rec.extend(r.phi.iter().map(|v| v.to_string()));
        rec.push(r.grad_norm.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Output of one adaptation round: sufficient statistics and raw samples,
/// in chain order.
#[derive(Debug, Clone, Default)]
pub struct RoundOutput {
    pub stats: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub size: usize,
    /// Parameter used to run this round.
    pub phi: Vec<f64>,
    /// Mean `log f_phi(Z)` over this round's kept samples; `phi` was fitted
    /// on earlier rounds only, so this is a held-out score.
    pub heldout_log_density: f64,
    pub retried: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrajectory {
    pub rounds: Vec<RoundRecord>,
    pub final_phi: Vec<f64>,
}

impl RoundTrajectory {
    pub fn total_samples(&self) -> usize {
        self.rounds.iter().map(|r| r.size).sum()
    }
}

/// Fraction of each round discarded before averaging statistics.
pub const ROUND_BURN_IN: f64 = 0.1;

fn round_mean(family: &dyn ExpFamily, out: &RoundOutput) -> Result<MomentParams> {
    let skip = (ROUND_BURN_IN * out.stats.len() as f64).floor() as usize;
    let mut acc = SuffStatAccumulator::new(family.stat_dim());
    for s in &out.stats[skip..] {
        acc.update(s);
    }
    crate::expfam::forward_kl_optimum(family, &acc)
}

/// Round `r = 1..=R` runs `2^r` samples with `phi^(r)`, the mean statistic of
/// round `r - 1` (`phi^(1) = phi0`). An infeasible round is retried once at
/// double length.
pub fn round_based_driver<F>(
    family: &dyn ExpFamily,
    mut adapt_round: F,
    phi0: MomentParams,
    rounds: usize,
    rng: &mut RngStream,
) -> Result<RoundTrajectory>
where
    F: FnMut(&MomentParams, usize, &mut RngStream) -> Result<RoundOutput>,
{
    if rounds == 0 {
        return Err(Error::InvalidArgument("at least one round is required".into()));
    }
    let eta_of = |phi: &MomentParams| crate::expfam::moment_to_natural(family, phi, None);
    let mut phi = phi0;
    let mut records = Vec::with_capacity(rounds);
    for r in 1..=rounds {
        let eta = eta_of(&phi).map_err(|e| e.context(format!("round {r}")))?;
        let mut size = 1usize << r;
        let mut stream = rng.child(r as u64);
        let mut out = adapt_round(&phi, size, &mut stream)?;
        let mut retried = false;
        let next = match round_mean(family, &out) {
            Ok(p) => p,
            Err(_) => {
                retried = true;
                size *= 2;
                out = adapt_round(&phi, size, &mut stream)?;
                round_mean(family, &out).map_err(|e| e.context(format!("round {r} after retry")))?
            }
        };
        let skip = (ROUND_BURN_IN * out.samples.len() as f64).floor() as usize;
        let kept = &out.samples[skip..];
        let heldout = kept.iter().map(|z| family.log_density(z, &eta.0)).sum::<f64>() / kept.len().max(1) as f64;
        records.push(RoundRecord { round: r, size, phi: phi.0.clone(), heldout_log_density: heldout, retried });
        phi = next;
    }
    Ok(RoundTrajectory { rounds: records, final_phi: phi.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::DiagGaussian;
    use crate::stats::{median, std_error};
    use proptest::prelude::*;

    #[test]
    fn parametric_schedule_values() {
        let s = StepSchedule::parametric(0.5, 2.0, 1.0).unwrap();
        for t in 0..10 {
            assert!((s.at(t) - 1.0 / (2.0 * (t as f64 + 1.0))).abs() < 1e-15);
        }
        let s = StepSchedule::parametric(0.25, 2.0, 2.0).unwrap();
        assert!((s.at(3) - 1.0 / 25.0).abs() < 1e-15);
        assert_eq!(StepSchedule::harmonic().at(9), 0.1);
        assert!(StepSchedule::constant(0.0).is_err());
        assert!(StepSchedule::sequence(vec![]).is_err());
        let seq = StepSchedule::sequence(vec![0.3, 0.2]).unwrap();
        assert_eq!((seq.at(0), seq.at(1), seq.at(7)), (0.3, 0.2, 0.2));
    }

    #[test]
    fn schedule_config_is_strict() {
        let s: StepSchedule = serde_json::from_str(r#"{"kind":"parametric","gamma0":1.0,"c":1.0,"alpha":0.6}"#).unwrap();
        assert_eq!(s, StepSchedule::Parametric { gamma0: 1.0, c: 1.0, alpha: 0.6 });
        assert!(serde_json::from_str::<StepSchedule>(r#"{"kind":"constant","gamma":1.0,"extra":2}"#).is_err());
    }

    #[test]
    fn divergent_sums_for_alpha_at_most_one() {
        for alpha in [0.6, 0.8, 1.0] {
            let s = StepSchedule::parametric(1.0, 1.0, alpha).unwrap();
            let mut partial = Vec::new();
            let mut sum = 0.0;
            for t in 0..1_000_000 {
                sum += s.at(t);
                if (t + 1) % 1000 == 0 {
                    partial.push(sum);
                }
            }
            // Growth between decades does not level off.
            let g1 = partial[99] - partial[9];
            let g2 = partial[999] - partial[99];
            assert!(g2 >= 0.99 * g1, "alpha = {alpha}: {g1} then {g2}");
        }
    }

    #[test]
    fn sgd_examples() {
        let mut st = OptimizerState::new(vec![1.5, -2.0]);
        sgd_step(&mut st, [0.0, 0.0], &StepSchedule::harmonic()).unwrap();
        assert_eq!(st.phi, vec![1.5, -2.0]);
        assert_eq!(st.t, 1);

        let sched = StepSchedule::constant(3.0).unwrap();
        let mut st = OptimizerState::new(vec![1.0]);
        let err = loop {
            let g = [-st.phi[0]];
            if let Err(e) = sgd_step(&mut st, g, &sched) {
                break e;
            }
            assert_eq!(st.phi[0].abs(), 2f64.powi(st.t as i32));
            if st.t == 3 {
                assert_eq!(st.phi[0], -8.0);
            }
        };
        match err {
            Error::Divergence { t, trajectory, .. } => {
                assert_eq!(t, 40);
                assert_eq!(trajectory.len(), 41);
            }
            e => panic!("unexpected {e}"),
        }

        let sched = StepSchedule::constant(0.5).unwrap();
        let mut st = OptimizerState::new(vec![1.0]);
        for t in 1..=30 {
            let g = [-st.phi[0]];
            sgd_step(&mut st, g, &sched).unwrap();
            assert_eq!(st.phi[0], 0.5f64.powi(t));
        }
        assert!(sgd_step(&mut st, [1.0, 2.0], &sched).is_err());
    }

    #[test]
    fn momentum_examples() {
        let sched = StepSchedule::constant(0.1).unwrap();
        let mut a = OptimizerState::new(vec![1.0]);
        let mut b = OptimizerState::new(vec![1.0]);
        for _ in 0..50 {
            let (ga, gb) = ([-a.phi[0]], [-b.phi[0]]);
            momentum_step(&mut a, ga, 0.1, 0.0).unwrap();
            sgd_step(&mut b, gb, &sched).unwrap();
            assert_eq!(a.phi, b.phi);
        }

        let iters = |beta: f64| {
            let mut st = OptimizerState::new(vec![1.0]);
            while st.phi[0].abs() >= 1e-6 {
                let g = [-st.phi[0]];
                momentum_step(&mut st, g, 0.1, beta).unwrap();
            }
            st.t
        };
        assert!(iters(0.5) < iters(0.0));

        let mut st = OptimizerState::new(vec![0.0]);
        for _ in 0..200 {
            momentum_step(&mut st, [0.3], 0.1, 0.5).unwrap();
        }
        let velocity = st.phi[0] - st.prev_phi[0];
        assert!((velocity - 2.0 * 0.1 * 0.3).abs() < 1e-12);
        assert!(momentum_step(&mut st, [0.3], 0.1, 1.0).is_err());
    }

    #[test]
    fn polyak_examples() {
        let mut st = OptimizerState::with_burn_in(vec![2.0], 0.0);
        sgd_step(&mut st, [4.0], &StepSchedule::constant(1.0).unwrap()).unwrap();
        assert_eq!(polyak_average(&st).unwrap(), vec![4.0]);

        let mut st = OptimizerState::new(vec![7.0]);
        for _ in 0..9 {
            sgd_step(&mut st, [0.0], &StepSchedule::harmonic()).unwrap();
        }
        assert_eq!(polyak_average(&st).unwrap(), vec![7.0]);

        let mut st = OptimizerState::with_burn_in(vec![0.0], 0.5);
        sgd_step(&mut st, [1.0], &StepSchedule::constant(1.0).unwrap()).unwrap();
        // Two iterates, one burned in.
        assert_eq!(polyak_average(&st).unwrap(), vec![1.0]);
    }

    #[test]
    fn polyak_beats_last_iterate_in_noise_ball() {
        let sched = StepSchedule::constant(0.5).unwrap();
        let wins = (0..20)
            .filter(|&seed| {
                let mut rng = RngStream::new(seed, 0);
                let mut st = OptimizerState::new(vec![1.0]);
                for _ in 0..10_000 {
                    let g = [-st.phi[0] + rng.normal()];
                    sgd_step(&mut st, g, &sched).unwrap();
                }
                polyak_average(&st).unwrap()[0].abs() < st.phi[0].abs()
            })
            .count();
        assert!(wins >= 18, "{wins}/20");
    }

    #[test]
    fn deterministic_quadratic_meets_descent_bound() {
        // min_k |g(phi_k)|^2 <= (f(phi0) - f_low) / sum_k gamma_k (1 - gamma_k L / 2), L = 1.
        for sched in [StepSchedule::constant(0.5).unwrap(), StepSchedule::parametric(1.0, 1.0, 0.6).unwrap()] {
            let mut st = OptimizerState::new(vec![1.0]);
            let f0 = 0.5;
            let mut denom = 0.0;
            let mut best = f64::INFINITY;
            for t in 0..=10_000 {
                let g = -st.phi[0];
                best = best.min(g * g);
                let gamma = sched.at(t);
                denom += gamma * (1.0 - gamma / 2.0);
                assert!(best <= f0 / denom, "t = {t}");
                sgd_step(&mut st, [g], &sched).unwrap();
            }
        }
        assert!((0.5f64 / (0.5 * (1.0 - 0.25)) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn trajectory_csv_header() {
        let rows = vec![TrajectoryRow { t: 0, gamma: 0.5, phi: vec![1.0, 2.0], grad_norm: 3.0 }];
        let mut buf = Vec::new();
        write_trajectory_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,gamma_t,phi_1,phi_2,grad_norm\n0,0.5,1,2,3\n");
    }

    fn iid_round(mean: f64, var: f64) -> impl FnMut(&MomentParams, usize, &mut RngStream) -> Result<RoundOutput> {
        move |_phi, n, rng| {
            let fam = DiagGaussian::new(1);
            let samples: Vec<Vec<f64>> = (0..n).map(|_| vec![mean + var.sqrt() * rng.normal()]).collect();
            Ok(RoundOutput { stats: samples.iter().map(|z| fam.suff_stat(z)).collect(), samples })
        }
    }

    #[test]
    fn round_driver_at_optimum() {
        let fam = DiagGaussian::new(1);
        let mut rng = RngStream::new(1, 0);
        let tr = round_based_driver(&fam, iid_round(0.2, 0.4), MomentParams(vec![0.2, 0.44]), 10, &mut rng).unwrap();
        assert_eq!(tr.total_samples(), (1 << 11) - 2);
        for (r, rec) in tr.rounds.iter().enumerate().skip(1) {
            // Mean statistic of the previous round, 90% of 2^r samples kept.
            let n = (rec.size / 2) as f64 * 0.9;
            let se1 = (0.4 / n).sqrt();
            assert!((rec.phi[0] - 0.2).abs() < 4.0 * se1, "round {r}: {:?}", rec.phi);
        }
        let n = 1024.0 * 0.9;
        assert!((tr.final_phi[0] - 0.2).abs() < 3.0 * (0.4f64 / n).sqrt());
    }

    #[test]
    fn round_driver_retries_and_fails() {
        let fam = DiagGaussian::new(1);
        let mut rng = RngStream::new(1, 0);
        let constant = |_: &MomentParams, n: usize, _: &mut RngStream| {
            Ok(RoundOutput { stats: vec![vec![1.0, 1.0]; n], samples: vec![vec![1.0]; n] })
        };
        assert!(round_based_driver(&fam, constant, MomentParams(vec![0.0, 1.0]), 3, &mut rng).is_err());
        let mut calls = Vec::new();
        let flaky = |_: &MomentParams, n: usize, rng: &mut RngStream| {
            calls.push(n);
            let z = if calls.len() == 1 { vec![vec![0.5]; n] } else { (0..n).map(|_| vec![rng.normal()]).collect() };
            Ok(RoundOutput { stats: z.iter().map(|v: &Vec<f64>| vec![v[0], v[0] * v[0]]).collect(), samples: z })
        };
        let tr = round_based_driver(&fam, flaky, MomentParams(vec![0.0, 1.0]), 2, &mut rng).unwrap();
        assert!(tr.rounds[0].retried && tr.rounds[0].size == 4);
        assert_eq!(calls, vec![2, 4, 4]);
    }

    #[test]
    fn heldout_score_improves_over_rounds() {
        let fam = DiagGaussian::new(1);
        let mut per_round: Vec<Vec<f64>> = vec![Vec::new(); 8];
        for seed in 0..10 {
            let mut rng = RngStream::new(seed, 0);
            let tr = round_based_driver(&fam, iid_round(3.0, 0.25), MomentParams(vec![0.0, 1.0]), 8, &mut rng).unwrap();
            for (r, rec) in tr.rounds.iter().enumerate() {
                per_round[r].push(rec.heldout_log_density);
            }
        }
        let med: Vec<f64> = per_round.iter().map(|v| median(v)).collect();
        // Rounds 1 and 2 are fitted on two and four samples; from round 3
        // on, round sizes dominate the noise.
        assert!(med[7] > med[0]);
        for w in med[2..].windows(2) {
            let spread = std_error(&per_round[2]);
            assert!(w[1] >= w[0] - 3.0 * spread, "{med:?}");
        }
    }

    proptest! {
        #[test]
        fn parametric_positive_and_decreasing(g0 in 0.01f64..10.0, c in 0.01f64..10.0, alpha in 0.51f64..1.0, t in 0usize..100_000) {
            let s = StepSchedule::parametric(g0, c, alpha).unwrap();
            prop_assert!(s.at(t) > 0.0);
            prop_assert!(s.at(t + 1) < s.at(t));
            prop_assert!((s.at(t) - g0 * (1.0 + c * g0 * t as f64).powf(-alpha)).abs() <= 1e-15 * g0);
        }

        #[test]
        fn time_advances_by_one(steps in 1usize..50) {
            let mut st = OptimizerState::new(vec![0.0]);
            for k in 0..steps {
                prop_assert_eq!(st.t, k);
                sgd_step(&mut st, [0.1], &StepSchedule::harmonic()).unwrap();
            }
            prop_assert_eq!(st.trajectory().len(), steps + 1);
        }
    }
}
