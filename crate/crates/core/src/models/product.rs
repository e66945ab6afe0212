use std::sync::Arc;

use super::univariate::{normal_log_density, SharedUnivariate};
use crate::mcmc::{IndependentProposal, StateVector, TargetDensity};
use crate::rng::RngStream;

/// Independent product of a one-dimensional density.
#[derive(Clone)]
pub struct ProductTarget {
    base: SharedUnivariate,
    d: usize,
}

pub fn product_target(base: SharedUnivariate, d: usize) -> ProductTarget {
    assert!(d >= 1, "product dimension must be positive");
    ProductTarget { base, d }
}

impl ProductTarget {
    pub fn base(&self) -> &SharedUnivariate {
        &self.base
    }
}

impl TargetDensity for ProductTarget {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.base.log_density(v)).sum()
    }

    fn component_count(&self) -> Option<usize> {
        Some(self.d)
    }

    fn component_log_density(&self, i: usize, x: &[f64]) -> f64 {
        self.base.log_density(x[i])
    }
}

impl IndependentProposal for ProductTarget {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample(&self, rng: &mut RngStream) -> StateVector {
        StateVector((0..self.d).map(|_| self.base.sample(rng)).collect())
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        TargetDensity::log_density(self, x)
    }
}

/// Gaussian with diagonal covariance, usable both as a target and as an
/// exact sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagNormal {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl DiagNormal {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Self {
        assert_eq!(mean.len(), sd.len());
        assert!(sd.iter().all(|s| *s > 0.0));
        DiagNormal { mean, sd }
    }

    pub fn isotropic(d: usize, mean: f64, sd: f64) -> Self {
        Self::new(vec![mean; d], vec![sd; d])
    }

    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

impl TargetDensity for DiagNormal {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(&v, (&m, &s))| normal_log_density(v, m, s))
            .sum()
    }
}

impl IndependentProposal for DiagNormal {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut RngStream) -> StateVector {
        StateVector(self.mean.iter().zip(&self.sd).map(|(m, s)| m + s * rng.normal()).collect())
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        TargetDensity::log_density(self, x)
    }
}

/// Equal-weight mixture of two isotropic Gaussians at `-m` and `+m` in every
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricBimodal {
    pub d: usize,
    pub m: f64,
    pub sd: f64,
}

impl SymmetricBimodal {
    /// Which mode a point is nearer to: `true` for the positive mode.
    pub fn in_positive_mode(&self, x: &[f64]) -> bool {
        x.iter().sum::<f64>() > 0.0
    }
}

impl TargetDensity for SymmetricBimodal {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let a: f64 = x.iter().map(|&v| normal_log_density(v, self.m, self.sd)).sum();
        let b: f64 = x.iter().map(|&v| normal_log_density(v, -self.m, self.sd)).sum();
        super::univariate::log_sum_exp(&[a, b]) - std::f64::consts::LN_2
    }
}

impl IndependentProposal for SymmetricBimodal {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample(&self, rng: &mut RngStream) -> StateVector {
        let c = if rng.uniform() < 0.5 { -self.m } else { self.m };
        StateVector((0..self.d).map(|_| c + self.sd * rng.normal()).collect())
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        TargetDensity::log_density(self, x)
    }
}
