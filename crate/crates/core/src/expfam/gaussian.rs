use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::ExpFamily;
use crate::mcmc::StateVector;
use crate::rng::RngStream;

/// Smallest variance accepted when building a proposal.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Gaussians with diagonal covariance. Statistics are ordered
/// `(z_1..z_d, z_1^2..z_d^2)`, natural parameters `(mu/v, -1/(2v))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagGaussian {
    d: usize,
}

impl DiagGaussian {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1, "dimension must be positive");
        DiagGaussian { d }
    }

    /// `(mean, variance)` per coordinate from natural parameters.
    pub fn mean_var_from_natural(&self, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.d;
        let var: Vec<f64> = (0..d).map(|i| -0.5 / eta[d + i]).collect();
        let mean = (0..d).map(|i| eta[i] * var[i]).collect();
        (mean, var)
    }

    pub fn mean_var_from_moments(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mean: Vec<f64> = phi[..d].to_vec();
        let var = (0..d).map(|i| phi[d + i] - phi[i] * phi[i]).collect();
        (mean, var)
    }

    pub fn moments_from_mean_var(mean: &[f64], var: &[f64]) -> Vec<f64> {
        let mut phi = mean.to_vec();
        phi.extend(mean.iter().zip(var).map(|(m, v)| v + m * m));
        phi
    }

    pub fn natural_from_mean_var(mean: &[f64], var: &[f64]) -> Vec<f64> {
        let mut eta: Vec<f64> = mean.iter().zip(var).map(|(m, v)| m / v).collect();
        eta.extend(var.iter().map(|v| -0.5 / v));
        eta
    }
}

impl ExpFamily for DiagGaussian {
    fn name(&self) -> &'static str {
        "diag_gaussian"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn stat_dim(&self) -> usize {
        2 * self.d
    }

    fn suff_stat(&self, z: &[f64]) -> Vec<f64> {
        let mut s = z.to_vec();
        s.extend(z.iter().map(|v| v * v));
        s
    }

    fn log_normalizer(&self, eta: &[f64]) -> f64 {
        let d = self.d;
        (0..d).map(|i| -eta[i] * eta[i] / (4.0 * eta[d + i]) - 0.5 * (-2.0 * eta[d + i]).ln()).sum()
    }

    fn base_log_measure(&self, _z: &[f64]) -> f64 {
        -0.5 * self.d as f64 * (2.0 * PI).ln()
    }

    fn in_natural_domain(&self, eta: &[f64]) -> bool {
        eta.len() == 2 * self.d && eta.iter().all(|v| v.is_finite()) && eta[self.d..].iter().all(|v| *v < 0.0)
    }

    fn moment_map(&self, eta: &[f64]) -> Vec<f64> {
        let (mean, var) = self.mean_var_from_natural(eta);
        Self::moments_from_mean_var(&mean, &var)
    }

    fn moment_jacobian(&self, eta: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let (mean, var) = self.mean_var_from_natural(eta);
        let mut j = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            let (m, v) = (mean[i], var[i]);
            j[(i, i)] = v;
            j[(i, d + i)] = 2.0 * m * v;
            j[(d + i, i)] = 2.0 * m * v;
            j[(d + i, d + i)] = 2.0 * v * v + 4.0 * m * m * v;
        }
        j
    }

    fn is_feasible_moment(&self, phi: &[f64]) -> bool {
        phi.len() == 2 * self.d
            && phi.iter().all(|v| v.is_finite())
            && (0..self.d).all(|i| phi[self.d + i] - phi[i] * phi[i] > MIN_VARIANCE)
    }

    fn closed_form_inverse(&self, phi: &[f64]) -> Option<Vec<f64>> {
        let (mean, var) = self.mean_var_from_moments(phi);
        Some(Self::natural_from_mean_var(&mean, &var))
    }

    fn inverse_moment_jacobian(&self, phi: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.d;
        let (mean, var) = self.mean_var_from_moments(phi);
        let mut j = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            let (m, v) = (mean[i], var[i]);
            let v2 = v * v;
            j[(i, i)] = (v + 2.0 * m * m) / v2;
            j[(i, d + i)] = -m / v2;
            j[(d + i, i)] = -m / v2;
            j[(d + i, d + i)] = 0.5 / v2;
        }
        Some(j)
    }

    fn reference_natural(&self) -> Vec<f64> {
        let mut eta = vec![0.0; self.d];
        eta.extend(std::iter::repeat_n(-0.5, self.d));
        eta
    }

    fn sample(&self, eta: &[f64], rng: &mut RngStream) -> StateVector {
        let (mean, var) = self.mean_var_from_natural(eta);
        StateVector(mean.iter().zip(&var).map(|(m, v)| m + v.sqrt() * rng.normal()).collect())
    }

    fn log_density(&self, z: &[f64], eta: &[f64]) -> f64 {
        // Same value as the generic formula, in the numerically stabler
        // location-scale form.
        let (mean, var) = self.mean_var_from_natural(eta);
        z.iter()
            .zip(mean.iter().zip(&var))
            .map(|(x, (m, v))| -0.5 * (x - m) * (x - m) / v - 0.5 * (2.0 * PI * v).ln())
            .sum()
    }
}

/// `KL(N(m_p, v_p) || N(m_q, v_q))` summed over independent coordinates.
pub fn gaussian_kl(mean_p: &[f64], var_p: &[f64], mean_q: &[f64], var_q: &[f64]) -> f64 {
    (0..mean_p.len())
        .map(|i| {
            let dm = mean_p[i] - mean_q[i];
            0.5 * ((var_q[i] / var_p[i]).ln() + (var_p[i] + dm * dm) / var_q[i] - 1.0)
        })
        .sum()
}

/// Gaussians with identity covariance: `s(z) = z`, `sigma` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitVarianceGaussian {
    d: usize,
}

impl UnitVarianceGaussian {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1, "dimension must be positive");
        UnitVarianceGaussian { d }
    }
}

impl ExpFamily for UnitVarianceGaussian {
    fn name(&self) -> &'static str {
        "unit_variance_gaussian"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn stat_dim(&self) -> usize {
        self.d
    }

    fn suff_stat(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }

    fn log_normalizer(&self, eta: &[f64]) -> f64 {
        0.5 * eta.iter().map(|e| e * e).sum::<f64>()
    }

    fn base_log_measure(&self, z: &[f64]) -> f64 {
        -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.d as f64 * (2.0 * PI).ln()
    }

    fn in_natural_domain(&self, eta: &[f64]) -> bool {
        eta.len() == self.d && eta.iter().all(|v| v.is_finite())
    }

    fn moment_map(&self, eta: &[f64]) -> Vec<f64> {
        eta.to_vec()
    }

    fn moment_jacobian(&self, _eta: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.d, self.d)
    }

    fn is_feasible_moment(&self, phi: &[f64]) -> bool {
        phi.len() == self.d && phi.iter().all(|v| v.is_finite())
    }

    fn closed_form_inverse(&self, phi: &[f64]) -> Option<Vec<f64>> {
        Some(phi.to_vec())
    }

    fn inverse_moment_jacobian(&self, _phi: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(self.d, self.d))
    }

    fn reference_natural(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }

    fn sample(&self, eta: &[f64], rng: &mut RngStream) -> StateVector {
        StateVector(eta.iter().map(|m| m + rng.normal()).collect())
    }
}
