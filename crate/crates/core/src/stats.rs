//! Summary statistics, goodness-of-fit tests and effective sample size.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::mcmc::{SharedKernel, StateVector};
use crate::rng::RngStream;
use crate::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean for independent draws.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Batch-means standard error, for autocorrelated traces.
pub fn mcse(xs: &[f64]) -> f64 {
    let n = xs.len();
    let b = (n as f64).sqrt().floor().max(1.0) as usize;
    let nb = n / b;
    if nb < 2 {
        return std_error(xs);
    }
    let means: Vec<f64> = (0..nb).map(|i| mean(&xs[i * b..(i + 1) * b])).collect();
    (variance(&means) / nb as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    statrs::function::erf::erfc(x)
}

/// Kolmogorov-Smirnov statistic of a sample against a continuous cdf.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail probability with the Stephens correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_test(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    ks_pvalue(ks_statistic(xs, cdf), xs.len())
}

/// Pearson chi-square goodness-of-fit p-value.
pub fn chi_square_test(observed: &[u64], probs: &[f64]) -> Result<f64> {
    if observed.len() != probs.len() || observed.len() < 2 {
        return Err(Error::InvalidArgument("chi-square needs matching tables with >= 2 cells".into()));
    }
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let df = probs.iter().filter(|p| **p > 0.0).count() as f64 - 1.0;
    let chi = ChiSquared::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(chi.sf(stat))
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct NormalityReport {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub jarque_bera: f64,
    pub pvalue: f64,
}

/// Moment-based normality test (Jarque-Bera, chi-square with 2 df).
pub fn jarque_bera(xs: &[f64]) -> NormalityReport {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    let jb = n / 6.0 * (skewness * skewness + excess_kurtosis * excess_kurtosis / 4.0);
    NormalityReport { skewness, excess_kurtosis, jarque_bera: jb, pvalue: (-jb / 2.0).exp() }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit { slope, intercept: my - slope * mx, r_squared }
}

/// Autocorrelations at lags `0..n` via zero-padded FFT.
pub fn autocorrelation(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = xs.iter().map(|x| Complex::new(x - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 {
        return vec![1.0; n];
    }
    buf[..n].iter().map(|c| c.re / c0).collect()
}

/// Effective sample size with Geyer's initial monotone positive sequence.
pub fn ess(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return n as f64;
    }
    if xs.iter().all(|x| *x == xs[0]) {
        return 1.0;
    }
    let rho = autocorrelation(xs);
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let mut gamma = rho[2 * m] + rho[2 * m + 1];
        if gamma <= 0.0 {
            break;
        }
        gamma = gamma.min(prev);
        prev = gamma;
        tau += 2.0 * gamma;
        m += 1;
    }
    let tau = tau.max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Invariance test for a kernel on a one-dimensional target: start
/// `n_chains` chains from exact draws, apply `k_steps` steps to each, and
/// KS-test the final states against the target cdf. Chains are independent,
/// so the test is exact in distribution under invariance.
pub fn invariance_ks(
    kernel: &SharedKernel,
    exact: impl Fn(&mut RngStream) -> StateVector,
    cdf: impl Fn(f64) -> f64,
    k_steps: usize,
    n_chains: usize,
    seed: u64,
) -> Result<f64> {
    let master = RngStream::new(seed, 0x1a7);
    let mut finals = Vec::with_capacity(n_chains);
    for c in 0..n_chains {
        let mut rng = master.child(c as u64);
        let mut x = exact(&mut rng);
        for _ in 0..k_steps {
            x = kernel.step(&x, &mut rng)?;
        }
        finals.push(x[0]);
    }
    Ok(ks_test(&finals, cdf))
}

/// Discrete analogue of [`invariance_ks`]: states are labels `0..probs.len()`
/// stored in the first coordinate.
pub fn invariance_chi2(
    kernel: &SharedKernel,
    probs: &[f64],
    k_steps: usize,
    n_chains: usize,
    seed: u64,
) -> Result<f64> {
    let master = RngStream::new(seed, 0xc42);
    let mut counts = vec![0u64; probs.len()];
    for c in 0..n_chains {
        let mut rng = master.child(c as u64);
        let mut x = StateVector(vec![sample_discrete(probs, &mut rng) as f64]);
        for _ in 0..k_steps {
            x = kernel.step(&x, &mut rng)?;
        }
        counts[x[0] as usize] += 1;
    }
    chi_square_test(&counts, probs)
}

pub fn sample_discrete(probs: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_detects_shift_and_accepts_truth() {
        let mut r = RngStream::new(1, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| r.normal()).collect();
        assert!(ks_test(&xs, std_normal_cdf) > 1e-3);
        assert!(ks_test(&xs, |x| std_normal_cdf(x - 0.1)) < 1e-6);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Critical value 1.3581 gives 5% tail asymptotically.
        let n = 1_000_000;
        let d = 1.3581 / (n as f64).sqrt();
        assert!((ks_pvalue(d, n) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn chi_square_basic() {
        assert!(chi_square_test(&[500, 500], &[0.5, 0.5]).unwrap() > 0.99);
        assert!(chi_square_test(&[600, 400], &[0.5, 0.5]).unwrap() < 1e-6);
    }

    #[test]
    fn ess_iid_ar1_constant() {
        let mut r = RngStream::new(3, 0);
        let iid: Vec<f64> = (0..20_000).map(|_| r.normal()).collect();
        let e = ess(&iid) / iid.len() as f64;
        assert!((0.8..=1.2).contains(&e), "iid ess ratio {e}");

        let mut x = 0.0;
        let ar: Vec<f64> = (0..100_000)
            .map(|_| {
                x = 0.5 * x + (0.75f64).sqrt() * r.normal();
                x
            })
            .collect();
        let e = ess(&ar) / ar.len() as f64;
        assert!((e - 1.0 / 3.0).abs() < 0.2 / 3.0, "ar1 ess ratio {e}");

        assert_eq!(ess(&vec![2.0; 500]), 1.0);
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jarque_bera_normal_vs_uniform() {
        let mut r = RngStream::new(5, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| r.normal()).collect();
        assert!(jarque_bera(&xs).pvalue > 1e-3);
        let us: Vec<f64> = (0..10_000).map(|_| r.uniform()).collect();
        assert!(jarque_bera(&us).pvalue < 1e-6);
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
