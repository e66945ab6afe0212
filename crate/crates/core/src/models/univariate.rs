use std::f64::consts::PI;
use std::sync::Arc;

use crate::rng::RngStream;
use crate::stats::std_normal_cdf;

/// A normalized one-dimensional density that can be sampled exactly.
pub trait Univariate: Send + Sync {
    fn log_density(&self, x: f64) -> f64;
    fn sample(&self, rng: &mut RngStream) -> f64;
    fn cdf(&self, x: f64) -> f64;
    fn mean(&self) -> f64;
    fn variance(&self) -> f64;
}

pub type SharedUnivariate = Arc<dyn Univariate>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal {
    pub mean: f64,
    pub sd: f64,
}

impl Normal {
    pub fn new(mean: f64, sd: f64) -> Self {
        assert!(sd > 0.0, "normal sd must be positive");
        Normal { mean, sd }
    }

    pub fn standard() -> Self {
        Normal { mean: 0.0, sd: 1.0 }
    }

    pub fn shared(mean: f64, sd: f64) -> SharedUnivariate {
        Arc::new(Self::new(mean, sd))
    }
}

pub(crate) fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

impl Univariate for Normal {
    fn log_density(&self, x: f64) -> f64 {
        normal_log_density(x, self.mean, self.sd)
    }

    fn sample(&self, rng: &mut RngStream) -> f64 {
        self.mean + self.sd * rng.normal()
    }

    fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mean) / self.sd)
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    fn variance(&self) -> f64 {
        self.sd * self.sd
    }
}

/// Finite mixture of normals.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMixture {
    pub weights: Vec<f64>,
    pub components: Vec<Normal>,
}

impl NormalMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Normal>) -> Self {
        assert_eq!(weights.len(), components.len());
        let total: f64 = weights.iter().sum();
        NormalMixture { weights: weights.iter().map(|w| w / total).collect(), components }
    }

    /// Equal-weight mixture of N(-m, sd^2) and N(m, sd^2).
    pub fn symmetric(m: f64, sd: f64) -> Self {
        Self::new(vec![0.5, 0.5], vec![Normal::new(-m, sd), Normal::new(m, sd)])
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Univariate for NormalMixture {
    fn log_density(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    fn sample(&self, rng: &mut RngStream) -> f64 {
        let k = crate::stats::sample_discrete(&self.weights, rng);
        self.components[k].sample(rng)
    }

    fn cdf(&self, x: f64) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.cdf(x)).sum()
    }

    fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.mean).sum()
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * (c.variance() + c.mean * c.mean))
            .sum::<f64>()
            - m * m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_normalized() {
        let n = Normal::new(1.0, 2.0);
        let h = 1e-3;
        let total: f64 = (-20_000..20_000).map(|i| n.log_density(1.0 + i as f64 * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mixture_moments() {
        let m = NormalMixture::symmetric(2.0, 0.5);
        assert_eq!(m.mean(), 0.0);
        assert!((m.variance() - 4.25).abs() < 1e-12);
        assert!((m.cdf(0.0) - 0.5).abs() < 1e-12);
        let mut r = RngStream::new(0, 0);
        let xs: Vec<f64> = (0..50_000).map(|_| m.sample(&mut r)).collect();
        assert!(crate::stats::ks_test(&xs, |x| m.cdf(x)) > 1e-3);
    }
}
