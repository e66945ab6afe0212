use proptest::prelude::*;

use super::problems::*;
use super::*;
use crate::stats::{mean, std_error, variance};

fn fd_check(f: impl Fn(&[f64]) -> f64, grad: &[f64], at: &[f64]) {
    let h = 1e-5;
    for i in 0..at.len() {
        let mut p = at.to_vec();
        let mut m = at.to_vec();
        p[i] += h;
        m[i] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        assert!((fd - grad[i]).abs() <= 1e-4 * fd.abs().max(1e-2), "coordinate {i}: fd {fd} vs {}", grad[i]);
    }
}

#[test]
fn shift_gradient_is_exactly_one() {
    let mut rng = RngStream::new(1, 0);
    for t in [1, 7, 100] {
        let g = reparam_gradient(&Shift, &[2.0], t, &mut rng).unwrap();
        assert_eq!(g.value, vec![1.0]);
        assert_eq!(g.meta.samples_used, t);
    }
    assert!(reparam_gradient(&Shift, &[2.0], 0, &mut rng).is_err());
}

#[test]
fn scaled_square_gradient() {
    let mut rng = RngStream::new(2, 0);
    let g = reparam_gradient(&ScaledSquare, &[1.5], 10_000, &mut rng).unwrap();
    let se = (g.meta.sample_variance[0] / 10_000.0).sqrt();
    assert!((g.value[0] - 3.0).abs() < 3.0 * se, "{} +- {se}", g.value[0]);
}

#[test]
fn reverse_kl_reparam_matches_closed_form() {
    let obj = GaussianReverseKl { p_mean: 1.0, p_sd: 2.0 };
    let phi = [0.3, -0.4];
    let truth = obj.exact_gradient(&phi);
    let mut rng = RngStream::new(3, 0);
    let g = reparam_gradient(&obj, &phi, 10_000, &mut rng).unwrap();
    for i in 0..2 {
        let se = (g.meta.sample_variance[i] / 10_000.0).sqrt();
        assert!((g.value[i] - truth[i]).abs() < 3.0 * se, "coordinate {i}");
    }
    fd_check(|p| obj.kl(p), &truth, &phi);
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let obj = GaussianReverseKl { p_mean: -0.5, p_sd: 0.7 };
    let mut rng = RngStream::new(4, 0);
    for _ in 0..20 {
        let phi = [rng.normal(), 0.5 * rng.normal()];
        let x = [rng.normal()];
        let y = obj.transform(&x, &phi);
        fd_check(|p| obj.value(&y, p), &obj.grad_phi(&y, &phi), &phi);
        fd_check(|yy| obj.value(yy, &phi), &obj.grad_y(&y, &phi), &y);
        fd_check(|p| obj.value(&obj.transform(&x, p), p), &obj.pathwise_gradient(&x, &phi), &phi);
        fd_check(|p| GaussianLocationScale::log_density(x[0], p), &GaussianLocationScale::score(x[0], &phi), &phi);
    }
}

#[test]
fn pushforward_matches_closed_form_density() {
    // m_phi(X) = mu + exp(l) X with X ~ N(0, 1) has the density of N(mu, exp(2 l)).
    let obj = GaussianReverseKl { p_mean: 0.0, p_sd: 1.0 };
    let phi = [0.8, -0.3];
    let mut rng = RngStream::new(5, 0);
    let ys: Vec<f64> = (0..50_000).map(|_| obj.transform(&obj.base_sample(&mut rng), &phi)[0]).collect();
    let s = phi[1].exp();
    let p = crate::stats::ks_test(&ys, |y| crate::stats::std_normal_cdf((y - phi[0]) / s));
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn reinforce_examples() {
    let mut rng = RngStream::new(6, 0);
    let constant = FnIntegrand { f: |_: &[f64], _: &[f64]| 2.5, grad: |_: &[f64], _: &[f64]| vec![0.0, 0.0] };
    let g = reinforce_gradient(&constant, &GaussianLocationScale, &[0.1, 0.2], 10_000, &mut rng).unwrap();
    for i in 0..2 {
        let se = (g.meta.sample_variance[i] / 10_000.0).sqrt();
        assert!(g.value[i].abs() < 3.0 * se);
    }
    let linear = FnIntegrand { f: |x: &[f64], _: &[f64]| x[0], grad: |_: &[f64], _: &[f64]| vec![0.0] };
    let g = reinforce_gradient(&linear, &GaussianLocation, &[0.4], 10_000, &mut rng).unwrap();
    let se = (g.meta.sample_variance[0] / 10_000.0).sqrt();
    assert!((g.value[0] - 1.0).abs() < 3.0 * se);
}

#[test]
fn reinforce_has_higher_variance_than_reparam() {
    let linear = FnIntegrand { f: |x: &[f64], _: &[f64]| x[0], grad: |_: &[f64], _: &[f64]| vec![0.0] };
    let wins = (0..20)
        .filter(|&seed| {
            let mut rng = RngStream::new(seed, 7);
            let r = reinforce_gradient(&linear, &GaussianLocation, &[0.4], 1000, &mut rng).unwrap();
            let p = reparam_gradient(&Shift, &[0.4], 1000, &mut rng).unwrap();
            r.meta.sample_variance[0] > p.meta.sample_variance[0]
        })
        .count();
    assert_eq!(wins, 20);
}

#[test]
fn control_variate_examples() {
    let mut rng = RngStream::new(8, 0);
    let (g, _) = correlated_pairs(0.0, 1.0, 1000, &mut rng);
    let exact = mean(&g.iter().map(|v| v[0]).collect::<Vec<_>>());
    let cv = control_variate(&g, &g, &[exact]).unwrap();
    assert!(cv.meta.sample_variance[0] < 1e-25);
    assert!((cv.value[0] - exact).abs() < 1e-12);

    let (g, _) = correlated_pairs(0.0, 1.0, 10_000, &mut rng);
    let (_, c) = correlated_pairs(0.0, 0.0, 10_000, &mut rng);
    let raw_var = variance(&g.iter().map(|v| v[0]).collect::<Vec<_>>());
    let cv = control_variate(&g, &c, &[0.0]).unwrap();
    assert!((cv.meta.sample_variance[0] / raw_var - 1.0).abs() < 0.1);

    let (g, c) = correlated_pairs(0.9, 1.0, 10_000, &mut rng);
    let raw_var = variance(&g.iter().map(|v| v[0]).collect::<Vec<_>>());
    let cv = control_variate(&g, &c, &[0.0]).unwrap();
    let factor = cv.meta.variance_reduction.as_ref().unwrap()[0];
    assert!((factor / 0.19 - 1.0).abs() < 0.2, "factor {factor}");
    assert!((cv.meta.sample_variance[0] / raw_var / 0.19 - 1.0).abs() < 0.2);

    let flat = vec![vec![0.0]; 10];
    let cv = control_variate(&g[..10], &flat, &[0.0]).unwrap();
    assert!(cv.meta.degenerate);
    assert!(control_variate(&g[..1], &c[..1], &[0.0]).is_err());
}

#[test]
fn rao_blackwell_examples() {
    let mut rng = RngStream::new(9, 0);
    let draws: Vec<(StateVector, StateVector)> =
        (0..10_000).map(|_| (StateVector(vec![rng.normal()]), StateVector(vec![rng.normal()]))).collect();
    let rep = rao_blackwellize(|a, _b, _p| vec![a[0] * 2.0], |a, _p| vec![a[0] * 2.0], &draws, &[]).unwrap();
    assert_eq!(rep.raw.value, rep.rao_blackwell.value);

    let rep = rao_blackwellize(|a, b, _p| vec![a[0] + b[0]], |a, _p| vec![a[0]], &draws, &[]).unwrap();
    assert!((rep.raw.meta.sample_variance[0] - 2.0).abs() < 0.1);
    assert!((rep.rao_blackwell.meta.sample_variance[0] - 1.0).abs() < 0.05);
}

#[test]
fn rao_blackwell_mean_field_problem() {
    let mf = MeanFieldFactor { rho: 0.6 };
    let phi = [0.5, -0.3];
    let mut wins = 0;
    for seed in 0..20 {
        let mut rng = RngStream::new(seed, 10);
        let draws = mf.draws(&phi, 2000, &mut rng);
        let rep = rao_blackwellize(|a, b, p| mf.raw(a, b, p), |a, p| mf.conditional(a, p), &draws, &phi).unwrap();
        let se = ((rep.raw.meta.sample_variance[0] + rep.rao_blackwell.meta.sample_variance[0]) / 2000.0).sqrt();
        assert!((rep.raw.value[0] - rep.rao_blackwell.value[0]).abs() < 3.0 * se);
        if rep.rao_blackwell.meta.sample_variance[0] < rep.raw.meta.sample_variance[0] {
            wins += 1;
        }
    }
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn conditional_mean_is_exact() {
    let mf = MeanFieldFactor { rho: -0.4 };
    let phi = [0.2, 0.9];
    let x1 = [1.3];
    let mut rng = RngStream::new(11, 0);
    let raws: Vec<f64> = (0..200_000).map(|_| mf.raw(&x1, &[phi[1] + rng.normal()], &phi)[0]).collect();
    assert!((mean(&raws) - mf.conditional(&x1, &phi)[0]).abs() < 3.0 * std_error(&raws));
}

#[test]
fn minibatch_examples() {
    let comps: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> = (1..=3)
        .map(|i| Box::new(move |p: &[f64]| vec![i as f64 * p[0].signum()]) as Box<dyn Fn(&[f64]) -> Vec<f64>>)
        .collect();
    let mut rng = RngStream::new(12, 0);
    assert_eq!(minibatch_gradient(&comps, &[1.0], 3, &mut rng).unwrap().value, vec![6.0]);
    assert!(minibatch_gradient(&comps, &[1.0], 4, &mut rng).is_err());
    assert!(minibatch_gradient(&comps, &[1.0], 0, &mut rng).is_err());
    let (m, v1) = minibatch_exact_moments(&[1.0, 2.0, 3.0], 1);
    assert!((m - 6.0).abs() < 1e-12);
    let (m2, v2) = minibatch_exact_moments(&[1.0, 2.0, 3.0], 2);
    let (m3, v3) = minibatch_exact_moments(&[1.0, 2.0, 3.0], 3);
    assert!((m2 - 6.0).abs() < 1e-12 && (m3 - 6.0).abs() < 1e-12);
    assert!(v1 > v2 && v2 > v3 && v3 == 0.0);
    // B = 1 draws {3, 6, 9}: variance 6.
    assert!((v1 - 6.0).abs() < 1e-12);
    let draws: Vec<f64> = (0..30_000).map(|_| minibatch_gradient(&comps, &[1.0], 1, &mut rng).unwrap().value[0]).collect();
    assert!((mean(&draws) - 6.0).abs() < 3.0 * std_error(&draws));
}

#[test]
fn bench_estimators_are_unbiased() {
    let results = problems::estimator_bench(10_000, 10, 2024).unwrap();
    for r in &results {
        assert!(r.unbiased(), "{:?}", r);
    }
    let mut buf = Vec::new();
    problems::write_bench_csv(&results, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("estimator,problem,T,mean_err,variance\n"));
}

#[test]
fn non_finite_terms_are_reported() {
    struct Bad;
    impl ScoreFamily for Bad {
        fn param_dim(&self) -> usize {
            1
        }
        fn sample(&self, _phi: &[f64], _rng: &mut RngStream) -> StateVector {
            StateVector(vec![0.0])
        }
        fn log_density(&self, _x: &[f64], _phi: &[f64]) -> f64 {
            0.0
        }
        fn score(&self, _x: &[f64], _phi: &[f64]) -> Vec<f64> {
            vec![f64::NAN]
        }
    }
    let one = FnIntegrand { f: |_: &[f64], _: &[f64]| 1.0, grad: |_: &[f64], _: &[f64]| vec![0.0] };
    let err = reinforce_gradient(&one, &Bad, &[0.0], 5, &mut RngStream::new(0, 0)).unwrap_err();
    assert!(err.to_string().contains("sample 0"));
}

proptest! {
    #[test]
    fn score_has_mean_zero_identity(mu in -2.0f64..2.0, l in -1.0f64..1.0) {
        // d/dphi q = q d/dphi log q, integrated on a grid.
        let phi = [mu, l];
        let s = l.exp();
        let h = s * 1e-3;
        let mut total = [0.0; 2];
        let mut x = mu - 10.0 * s;
        while x < mu + 10.0 * s {
            let q = GaussianLocationScale::log_density(x, &phi).exp();
            let sc = GaussianLocationScale::score(x, &phi);
            total[0] += q * sc[0] * h;
            total[1] += q * sc[1] * h;
            x += h;
        }
        prop_assert!(total[0].abs() < 1e-6 && total[1].abs() < 1e-6);
    }

    #[test]
    fn minibatch_unbiased_exactly(vals in proptest::collection::vec(-5.0f64..5.0, 2..7), b in 1usize..7) {
        let b = b.min(vals.len());
        let (m, _) = minibatch_exact_moments(&vals, b);
        prop_assert!((m - vals.iter().sum::<f64>()).abs() < 1e-9);
    }
}
