use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::mcmc::{ImhKernel, IndependentProposal, MarkovKernel};
use crate::models::{discrete_transition_oracle, DiagNormal, DiscreteTarget, Matrix, SymmetricBimodal};
use crate::stats::{ks_test, mcse, mean, std_normal_cdf};

fn normal(mean: f64, sd: f64) -> Arc<DiagNormal> {
    DiagNormal::isotropic(1, mean, sd).shared()
}

fn gaussian_path(q_sd: f64) -> AnnealingPath {
    AnnealingPath::single_leg(normal(0.0, q_sd), normal(1.0, 0.7)).unwrap()
}

#[test]
fn path_log_densities() {
    let q = normal(0.0, 2.0);
    let pi = normal(1.0, 0.5);
    let pi0 = normal(-1.0, 3.0);
    let one = AnnealingPath::single_leg(q.clone(), pi.clone()).unwrap();
    let two = AnnealingPath::two_leg(q.clone(), pi0.clone(), pi.clone()).unwrap();
    let x = [0.3];
    let (lq, lp, l0) = (IndependentProposal::log_density(q.as_ref(), &x), TargetDensity::log_density(pi.as_ref(), &x), TargetDensity::log_density(pi0.as_ref(), &x));
    assert_eq!(one.log_density_at(0.0, &x), lq);
    assert_eq!(one.log_density_at(1.0, &x), lp);
    assert!((one.log_density_at(0.3, &x) - (0.7 * lq + 0.3 * lp)).abs() < 1e-14);
    assert_eq!(two.log_density_at(0.0, &x), lq);
    assert_eq!(two.log_density_at(0.5, &x), lp);
    assert_eq!(two.log_density_at(1.0, &x), l0);
    assert!((two.log_density_at(0.25, &x) - (0.5 * lq + 0.5 * lp)).abs() < 1e-14);
    assert!((two.log_density_at(0.75, &x) - (0.5 * l0 + 0.5 * lp)).abs() < 1e-14);
    assert_eq!(one.target_beta(), 1.0);
    assert_eq!(two.target_beta(), 0.5);
    assert!(one.exact_sampler(0.0).is_some() && one.exact_sampler(1.0).is_none());
    assert!(two.exact_sampler(1.0).is_some() && two.exact_sampler(0.5).is_none());
}

#[test]
fn zero_weight_never_multiplies_infinity() {
    let q = Arc::new(DiscreteTarget::new(vec![0.5, 0.5]).unwrap());
    let pi = Arc::new(DiscreteTarget::new(vec![1.0, 0.0]).unwrap());
    let path = AnnealingPath::single_leg(q, pi).unwrap();
    assert_eq!(path.log_density_at(0.0, &[1.0]), 0.5f64.ln());
    assert_eq!(path.log_density_at(0.5, &[1.0]), f64::NEG_INFINITY);
}

#[test]
fn schedules() {
    assert_eq!(Schedule::uniform(4).betas(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(Schedule::uniform(0).betas(), &[1.0]);
    assert_eq!(Schedule::uniform(10).index_of(0.5), Some(5));
    assert!(Schedule::new(vec![0.0, 0.6, 0.4, 1.0]).is_err());
    assert!(Schedule::new(vec![0.1, 1.0]).is_err());
    assert!(Schedule::new(vec![0.0, 0.9]).is_err());
    assert!(Schedule::new(vec![0.0, 0.5, 0.5, 1.0]).is_ok());
    let s: Schedule = serde_json::from_str("[0.0, 0.5, 1.0]").unwrap();
    assert_eq!(s.n(), 2);
    assert!(serde_json::from_str::<Schedule>("[0.0, 0.5]").is_err());
}

#[test]
fn deo_pair_sets() {
    assert_eq!(deo_pairs(1, 5).collect::<Vec<_>>(), vec![0, 2]);
    assert_eq!(deo_pairs(2, 5).collect::<Vec<_>>(), vec![1, 3]);
    assert_eq!(deo_pairs(3, 2).collect::<Vec<_>>(), vec![0]);
    assert_eq!(deo_pairs(4, 2).count(), 0);
    assert_eq!(deo_pairs(1, 1).count(), 0);
}

#[test]
fn single_chain_is_plain_mcmc() {
    let path = gaussian_path(2.0);
    let schedule = Schedule::uniform(0);
    let kernels = default_explorers(&path, &schedule).unwrap();
    let master = RngStream::new(3, 0);
    let x0 = StateVector(vec![0.0]);
    let out = nrpt_run(&path, &kernels, ReplicaEnsemble::replicated(x0.clone(), schedule).unwrap(), 200, &master).unwrap();
    let mut x = x0;
    for t in 1..=200u64 {
        x = kernels[0].step(&x, &mut sweep_streams(&master, t, 1)[0]).unwrap();
        assert_eq!(out.target_trace[t as usize - 1], x);
    }
    assert!(out.swap_stats().is_empty());
}

#[test]
fn equal_betas_always_swap() {
    let path = gaussian_path(2.0);
    assert_eq!(swap_log_ratio(&path, 0.4, 0.4, &[5.0], &[-3.0]), 0.0);
    let same = AnnealingPath::single_leg(normal(0.0, 1.0), normal(0.0, 1.0)).unwrap();
    assert!(swap_log_ratio(&same, 0.0, 1.0, &[5.0], &[-3.0]).abs() < 1e-12);
}

/// Positions of each replica under all-accept DEO, by direct permutation.
fn all_accept_positions(n_chains: usize, sweeps: u64) -> Vec<Vec<usize>> {
    let mut at: Vec<usize> = (0..n_chains).collect();
    let mut history = vec![];
    for t in 1..=sweeps {
        let start = if t % 2 == 1 { 0 } else { 1 };
        let mut n = start;
        while n + 1 < n_chains {
            at.swap(n, n + 1);
            n += 2;
        }
        let mut pos = vec![0; n_chains];
        for (p, r) in at.iter().enumerate() {
            pos[*r] = p;
        }
        history.push(pos);
    }
    history
}

#[test]
fn all_accept_deo_shuttles_deterministically() {
    for n in 1..=6usize {
        let same = AnnealingPath::single_leg(normal(0.0, 1.0), normal(0.0, 1.0)).unwrap();
        let schedule = Schedule::uniform(n);
        let kernels = default_explorers(&same, &schedule).unwrap();
        let sweeps = 6 * (n as u64 + 1);
        let out = nrpt_run(&same, &kernels, ReplicaEnsemble::replicated(StateVector(vec![0.0]), schedule).unwrap(), sweeps as usize, &RngStream::new(1, 0)).unwrap();
        assert!(out.swap_stats().iter().all(|s| s.accepts == s.attempts));

        let history = all_accept_positions(n + 1, sweeps);
        let last = history.last().unwrap();
        for (p, r) in out.ensemble.replica_indices.iter().enumerate() {
            assert_eq!(last[*r], p);
        }
        // No reversals: a replica only turns around at an end.
        for r in 0..=n {
            let mut path: Vec<usize> = vec![r];
            path.extend(history.iter().map(|h| h[r]));
            let moves: Vec<i64> = path.windows(2).map(|w| w[1] as i64 - w[0] as i64).filter(|d| *d != 0).collect();
            for (k, w) in moves.windows(2).enumerate() {
                if w[0] != w[1] {
                    let pos: i64 = r as i64 + moves[..=k].iter().sum::<i64>();
                    assert!(pos == 0 || pos == n as i64, "reversal of replica {r} at {pos}");
                }
            }
        }
        // Replica 0 completes its first round trip at sweep 2N + 1, then every
        // 2(N + 1) sweeps.
        let trips: Vec<u64> = out.round_trips().iter().filter(|rt| rt.replica == 0).map(|rt| rt.sweep).collect();
        assert_eq!(trips[0], 2 * n as u64 + 1);
        assert!(trips.windows(2).all(|w| w[1] - w[0] == 2 * (n as u64 + 1)));
        assert!(trips[0] <= 4 * n as u64);
    }
}

fn two_state_path() -> AnnealingPath {
    let q = Arc::new(DiscreteTarget::new(vec![0.3, 0.7]).unwrap());
    let pi = Arc::new(DiscreteTarget::new(vec![0.8, 0.2]).unwrap());
    AnnealingPath::single_leg(q, pi).unwrap()
}

fn tempered_probs(path: &AnnealingPath, beta: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..2).map(|i| path.log_density_at(beta, &[i as f64]).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

fn exact_swap_acceptance(path: &AnnealingPath, a: f64, b: f64) -> f64 {
    let (pa, pb) = (tempered_probs(path, a), tempered_probs(path, b));
    let mut e = 0.0;
    for x in 0..2 {
        for y in 0..2 {
            let lr = swap_log_ratio(path, a, b, &[x as f64], &[y as f64]);
            e += pa[x] * pb[y] * lr.min(0.0).exp();
        }
    }
    e
}

#[test]
fn swap_acceptance_matches_enumeration() {
    let path = two_state_path();
    let schedule = Schedule::uniform(2);
    let kernels: Vec<SharedKernel> = schedule
        .betas()
        .iter()
        .map(|&b| -> SharedKernel {
            let exact = Arc::new(DiscreteTarget::new(tempered_probs(&path, b)).unwrap());
            Arc::new(IidKernel::new(exact, path.tempered(b)).unwrap())
        })
        .collect();
    let ens = ReplicaEnsemble::replicated(StateVector(vec![0.0]), schedule.clone()).unwrap();
    let out = nrpt_run(&path, &kernels, ens, 40_000, &RngStream::new(11, 0)).unwrap();
    for (n, s) in out.swap_stats().iter().enumerate() {
        let p = exact_swap_acceptance(&path, schedule.betas()[n], schedule.betas()[n + 1]);
        let se = (p * (1.0 - p) / s.attempts as f64).sqrt();
        assert!((s.rate() - p).abs() < 3.0 * se, "pair {n}: {} vs {p}", s.rate());
        assert!(p < 0.99);
    }
}

fn kron(mats: &[Matrix]) -> Matrix {
    mats.iter().skip(1).fold(mats[0].clone(), |acc, m| {
        let (a, b) = (acc.len(), m.len());
        let mut out = vec![vec![0.0; a * b]; a * b];
        for i in 0..a {
            for j in 0..a {
                for k in 0..b {
                    for l in 0..b {
                        out[i * b + k][j * b + l] = acc[i][j] * m[k][l];
                    }
                }
            }
        }
        out
    })
}

#[test]
fn one_sweep_leaves_the_product_invariant() {
    let path = two_state_path();
    let betas = [0.0, 0.5, 1.0];
    let probs: Vec<Vec<f64>> = betas.iter().map(|&b| tempered_probs(&path, b)).collect();
    let uniform = DiscreteTarget::new(vec![0.5, 0.5]).unwrap();
    let local: Vec<Matrix> = probs
        .iter()
        .map(|p| discrete_transition_oracle(&DiscreteTarget::new(p.clone()).unwrap(), &uniform).unwrap())
        .collect();
    let joint_local = kron(&local);
    let decode = |s: usize| [(s >> 2) & 1, (s >> 1) & 1, s & 1];
    let encode = |x: [usize; 3]| (x[0] << 2) | (x[1] << 1) | x[2];
    let swap_matrix = |pairs: &[usize]| {
        let mut m = vec![vec![0.0; 8]; 8];
        for s in 0..8 {
            // Pairs in one phase are disjoint, so their moves factorize.
            let mut dist = vec![(decode(s), 1.0)];
            for &n in pairs {
                let mut next = vec![];
                for (x, w) in dist {
                    let lr = swap_log_ratio(&path, betas[n], betas[n + 1], &[x[n] as f64], &[x[n + 1] as f64]);
                    let a = lr.min(0.0).exp();
                    let mut y = x;
                    y.swap(n, n + 1);
                    next.push((y, w * a));
                    next.push((x, w * (1.0 - a)));
                }
                dist = next;
            }
            for (x, w) in dist {
                m[s][encode(x)] += w;
            }
        }
        m
    };
    let pi: Vec<f64> = (0..8).map(|s| decode(s).iter().enumerate().map(|(n, &x)| probs[n][x]).product()).collect();
    for pairs in [vec![0], vec![1]] {
        let sweep = crate::models::mat_mul(&joint_local, &swap_matrix(&pairs));
        let after = crate::models::apply_left(&pi, &sweep);
        let err = pi.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        assert!(sweep.iter().all(|row| (row.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }
}

#[test]
fn two_chain_nrpt_is_imh_composed_with_the_local_kernel() {
    let q = normal(0.0, 1.5);
    let pi = normal(1.0, 0.7);
    let path = AnnealingPath::single_leg(q.clone(), pi.clone()).unwrap();
    let schedule = Schedule::uniform(1);
    let kernels = default_explorers(&path, &schedule).unwrap();
    let master = RngStream::new(42, 9);
    let x0 = StateVector(vec![0.5]);
    let out = nrpt_run(&path, &kernels, ReplicaEnsemble::replicated(x0.clone(), schedule).unwrap(), 2000, &master).unwrap();

    let imh = ImhKernel::new(q, pi).unwrap();
    let mut x = x0;
    let mut trace = vec![];
    for t in 1..=2000u64 {
        let mut s = sweep_streams(&master, t, 2);
        x = kernels[1].step(&x, &mut s[1]).unwrap();
        if t % 2 == 1 {
            x = imh.step(&x, &mut s[0]).unwrap();
        }
        trace.push(x.clone());
    }
    assert_eq!(out.target_trace, trace);
    assert_eq!(out.swap_stats()[0].accepts, imh.acceptance().unwrap().accept_count);
}

#[test]
fn exchangeable_chains_and_exact_reference_draws() {
    let same = AnnealingPath::single_leg(normal(0.5, 1.0), normal(0.5, 1.0)).unwrap();
    let schedule = Schedule::uniform(3);
    let kernels = default_explorers(&same, &schedule).unwrap();
    let mut ens = ReplicaEnsemble::replicated(StateVector(vec![0.5]), schedule).unwrap();
    let master = RngStream::new(5, 0);
    let mut per_chain = vec![vec![]; 4];
    for _ in 0..20_000 {
        nrpt_sweep(&mut ens, &same, &kernels, &master).unwrap();
        for (n, x) in ens.states.iter().enumerate() {
            per_chain[n].push(x[0]);
        }
    }
    let m0 = mean(&per_chain[0]);
    for c in &per_chain[1..] {
        let se = (mcse(c).powi(2) + mcse(&per_chain[0]).powi(2)).sqrt();
        assert!((mean(c) - m0).abs() < 3.0 * se);
    }

    // Mismatched reference: the reference chain's own draws are exact.
    let path = gaussian_path(2.0);
    let schedule = Schedule::uniform(3);
    let kernels = default_explorers(&path, &schedule).unwrap();
    let mut ens = ReplicaEnsemble::replicated(StateVector(vec![0.0]), schedule).unwrap();
    let mut draws = vec![];
    for _ in 0..5000 {
        let t = ens.t + 1;
        let mut s = sweep_streams(&master, t, 4);
        local_exploration(&mut ens, &kernels, &mut s).unwrap();
        draws.push(ens.states[0][0]);
        deo_swap(&mut ens, &path, &mut s).unwrap();
    }
    assert!(ks_test(&draws, |x| std_normal_cdf(x / 2.0)) > 0.01);
}

struct FailingKernel(SharedTarget);

impl MarkovKernel for FailingKernel {
    fn step(&self, _x: &StateVector, _rng: &mut RngStream) -> crate::Result<StateVector> {
        Err(Error::InvalidDensity("boom".into()))
    }
    fn target(&self) -> &SharedTarget {
        &self.0
    }
}

#[test]
fn kernel_errors_name_the_chain() {
    let path = gaussian_path(2.0);
    let schedule = Schedule::uniform(3);
    let mut kernels = default_explorers(&path, &schedule).unwrap();
    kernels[2] = Arc::new(FailingKernel(path.tempered(schedule.betas()[2])));
    let err = nrpt_run(&path, &kernels, ReplicaEnsemble::replicated(StateVector(vec![0.0]), schedule).unwrap(), 5, &RngStream::new(0, 0))
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("chain 2") && msg.contains("sweep 1"), "{msg}");
    assert!(nrpt_run(&path, &kernels, ReplicaEnsemble::replicated(StateVector(vec![0.0]), Schedule::uniform(3)).unwrap(), 0, &RngStream::new(0, 0)).is_err());
    assert!(ReplicaEnsemble::new(vec![StateVector(vec![0.0])], Schedule::uniform(2)).is_err());
    let two = AnnealingPath::two_leg(normal(0.0, 1.0), normal(0.0, 3.0), normal(1.0, 1.0)).unwrap();
    assert!(target_index(&two, &Schedule::uniform(3)).is_err());
}

#[test]
fn bimodal_target_visits_both_modes() {
    let target = SymmetricBimodal { d: 1, m: 4.0, sd: 0.5 };
    let path = AnnealingPath::single_leg(normal(0.0, 5.0), Arc::new(target.clone())).unwrap();
    let schedule = Schedule::uniform(10);
    let kernels = default_explorers(&path, &schedule).unwrap();
    let ens = ReplicaEnsemble::replicated(StateVector(vec![4.0]), schedule).unwrap();
    let out = nrpt_run(&path, &kernels, ens, 100_000, &RngStream::new(8, 0)).unwrap();
    let pos = out.target_trace.iter().filter(|x| target.in_positive_mode(x)).count() as f64 / 1e5;
    assert!(pos >= 0.2 && pos <= 0.8, "{pos}");
    assert!(out.round_trips().len() > 100);
}

#[test]
fn target_chain_matches_single_chain_slice() {
    let target = normal(1.0, 2.0);
    let path = AnnealingPath::single_leg(normal(0.0, 1.0), target.clone()).unwrap();
    let schedule = Schedule::uniform(4);
    let kernels = default_explorers(&path, &schedule).unwrap();
    let ens = ReplicaEnsemble::replicated(StateVector(vec![0.0]), schedule).unwrap();
    let out = nrpt_run(&path, &kernels, ens, 40_000, &RngStream::new(2, 0)).unwrap();
    let a: Vec<f64> = out.target_trace.iter().map(|x| x[0]).collect();
    let slice = crate::mcmc::slice_kernel(target, 1.0).unwrap();
    let b = crate::mcmc::run_chain(&slice, &StateVector(vec![0.0]), 40_000, &mut RngStream::new(2, 1)).unwrap().coordinate(0);
    for f in [|v: f64| v, |v: f64| v * v] {
        let (fa, fb): (Vec<f64>, Vec<f64>) = (a.iter().map(|v| f(*v)).collect(), b.iter().map(|v| f(*v)).collect());
        let se = (mcse(&fa).powi(2) + mcse(&fb).powi(2)).sqrt();
        assert!((mean(&fa) - mean(&fb)).abs() < 3.0 * se);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let path = gaussian_path(2.0);
            let schedule = Schedule::uniform(6);
            let kernels = default_explorers(&path, &schedule).unwrap();
            let ens = ReplicaEnsemble::replicated(StateVector(vec![0.0]), schedule).unwrap();
            let out = nrpt_run(&path, &kernels, ens, 500, &RngStream::new(4, 4)).unwrap();
            (out.target_trace, out.ensemble.swap_stats, out.ensemble.round_trips)
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn pt_keeps_swapping_where_imh_starves() {
    let rows = pt_scaling(&[1, 64], 1.2, 2000, &RngStream::new(6, 0)).unwrap();
    let d64 = &rows[1];
    assert_eq!(d64.n_chains, 17);
    assert!(d64.mean_swap_acceptance >= 0.2, "{d64:?}");
    assert!(d64.imh_acceptance < rows[0].imh_acceptance);
    let rows = pt_scaling(&[64], 2.0, 2000, &RngStream::new(6, 1)).unwrap();
    assert!(rows[0].imh_acceptance < 0.01 && rows[0].mean_swap_acceptance >= 0.2, "{:?}", rows[0]);
}

#[test]
fn vpt_recovers_a_family_member() {
    let target = Arc::new(DiagNormal::new(vec![1.0, -0.5], vec![0.8, 1.3]));
    let phi0 = MomentParamsExt::standard(2);
    let ens = ReplicaEnsemble::replicated(StateVector(vec![0.0, 0.0]), Schedule::uniform(4)).unwrap();
    let run = tune_variational_reference(|q| AnnealingPath::single_leg(q, target.clone()), phi0, ens, 11, &RngStream::new(3, 0)).unwrap();
    let want = crate::expfam::DiagGaussian::moments_from_mean_var(&[1.0, -0.5], &[0.64, 1.69]);
    let last = run.rounds.last().unwrap();
    for j in 0..4 {
        assert!((run.final_phi()[j] - want[j]).abs() < 3.0 * last.phi_se[j], "{j}: {:?} vs {want:?}", run.final_phi());
    }
    assert_eq!(run.phi_trajectory.len(), 12);
    assert!(run.rounds.iter().all(|r| !r.flagged && r.sweeps == 1 << r.round));
}

struct MomentParamsExt;

impl MomentParamsExt {
    fn standard(d: usize) -> crate::expfam::MomentParams {
        crate::expfam::MomentParams(crate::expfam::DiagGaussian::moments_from_mean_var(&vec![0.0; d], &vec![1.0; d]))
    }
}

#[test]
fn vpt_reference_covers_both_modes() {
    let target = Arc::new(SymmetricBimodal { d: 1, m: 2.0, sd: 0.5 });
    let phi0 = crate::expfam::MomentParams(vec![0.0, 9.0]);
    let ens = ReplicaEnsemble::replicated(StateVector(vec![2.0]), Schedule::uniform(8)).unwrap();
    let run = tune_variational_reference(|q| AnnealingPath::single_leg(q, target.clone()), phi0, ens, 12, &RngStream::new(12, 0)).unwrap();
    let last = run.rounds.last().unwrap();
    let second = 4.0 + 0.25;
    assert!(run.final_phi()[0].abs() < 3.0 * last.phi_se[0], "{:?}", run.final_phi());
    assert!((run.final_phi()[1] - second).abs() < 3.0 * last.phi_se[1], "{:?} {:?}", run.final_phi(), last.phi_se);
}

#[test]
fn two_leg_stabilizes_adaptation() {
    let report = two_leg_vs_single_leg(&VptConfig::default(), 20, &RngStream::new(2024, 0)).unwrap();
    assert!(report.two_leg_retained >= 18, "{report:?}");
    assert!(report.single_leg_collapsed >= 10, "{report:?}");
}

#[test]
fn vpt_config_is_strict() {
    let c: VptConfig = toml::from_str("m = 3.0\nrounds = 4").unwrap();
    assert_eq!((c.m, c.rounds, c.n), (3.0, 4, 10));
    assert!(toml::from_str::<VptConfig>("mm = 3.0").is_err());
    let odd = VptConfig { n: 5, ..VptConfig::default() };
    assert!(odd.run(true, &RngStream::new(0, 0)).is_err());
}

#[test]
fn ess_rates() {
    let mut rng = RngStream::new(1, 1);
    let iid: Vec<StateVector> = (0..10_000).map(|_| StateVector(vec![rng.normal()])).collect();
    let r = ess_per_second(&iid, 1.0).unwrap()[0] / 1e4;
    assert!((0.8..=1.2).contains(&r), "{r}");
    let constant = vec![StateVector(vec![3.0]); 500];
    assert!((ess_per_second(&constant, 1.0).unwrap()[0] - 1.0).abs() < 1e-12);
    let mut x = 0.0;
    let ar: Vec<StateVector> = (0..100_000)
        .map(|_| {
            x = 0.5 * x + (0.75f64).sqrt() * rng.normal();
            StateVector(vec![x])
        })
        .collect();
    let r = ess_per_second(&ar, 2.0).unwrap()[0] * 2.0 / 1e5;
    assert!((r - 1.0 / 3.0).abs() < 0.2 / 3.0, "{r}");
    assert!(ess_per_second(&iid[..99], 1.0).is_err());
    assert!(ess_per_second(&iid, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn two_leg_continuity_and_endpoints(x in -5.0f64..5.0, mq in -2.0f64..2.0, sq in 0.3f64..3.0) {
        let pi = normal(1.0, 0.8);
        let pi0 = normal(-1.0, 2.5);
        let two = AnnealingPath::two_leg(normal(mq, sq), pi0.clone(), pi.clone()).unwrap();
        let lp = TargetDensity::log_density(pi.as_ref(), &[x]);
        prop_assert_eq!(two.log_density_at(0.5, &[x]), lp);
        prop_assert_eq!(two.log_density_at(1.0, &[x]), TargetDensity::log_density(pi0.as_ref(), &[x]));
        let below = two.log_density_at(0.5 - 1e-9, &[x]);
        let above = two.log_density_at(0.5 + 1e-9, &[x]);
        prop_assert!((below - lp).abs() < 1e-6 && (above - lp).abs() < 1e-6);
    }

    #[test]
    fn replica_indices_stay_a_permutation(seed in 0u64..1000, n in 1usize..7, sweeps in 1usize..60) {
        let path = gaussian_path(3.0);
        let schedule = Schedule::uniform(n);
        let kernels = default_explorers(&path, &schedule).unwrap();
        let ens = ReplicaEnsemble::replicated(StateVector(vec![0.0]), schedule).unwrap();
        let out = nrpt_run(&path, &kernels, ens, sweeps, &RngStream::new(seed, 0)).unwrap();
        let mut idx = out.ensemble.replica_indices.clone();
        idx.sort_unstable();
        prop_assert_eq!(idx, (0..=n).collect::<Vec<_>>());
        let attempts: u64 = out.swap_stats().iter().map(|s| s.attempts).sum();
        let expected: u64 = (1..=sweeps as u64).map(|t| deo_pairs(t, n + 1).count() as u64).sum();
        prop_assert_eq!(attempts, expected);
    }

    #[test]
    fn uniform_schedules_are_valid(n in 0usize..200) {
        let s = Schedule::uniform(n);
        prop_assert!(Schedule::new(s.betas().to_vec()).is_ok());
        prop_assert_eq!(s.len(), n + 1);
    }
}
