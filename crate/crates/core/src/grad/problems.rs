//! Closed-form test problems for the estimators, each with a known gradient.

use super::{
    control_variate, minibatch_gradient, rao_blackwellize, reinforce_gradient, reparam_gradient, BenchRow, FnIntegrand,
    GradientEstimate, ReparamObjective, ScoreFamily,
};
use crate::mcmc::StateVector;
use crate::rng::RngStream;
use crate::stats::{mean, std_error, variance};
use crate::Result;

/// `f(x, phi) = x`, `m_phi(x) = x + phi`.
pub struct Shift;

impl ReparamObjective for Shift {
    fn param_dim(&self) -> usize {
        1
    }
    fn base_sample(&self, rng: &mut RngStream) -> StateVector {
        StateVector(vec![rng.normal()])
    }
    fn transform(&self, x: &[f64], phi: &[f64]) -> StateVector {
        StateVector(vec![x[0] + phi[0]])
    }
    fn transform_vjp(&self, _x: &[f64], _phi: &[f64], v: &[f64]) -> Vec<f64> {
        vec![v[0]]
    }
    fn value(&self, y: &[f64], _phi: &[f64]) -> f64 {
        y[0]
    }
    fn grad_y(&self, _y: &[f64], _phi: &[f64]) -> Vec<f64> {
        vec![1.0]
    }
    fn grad_phi(&self, _y: &[f64], _phi: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

/// `f(x, phi) = x^2`, `m_phi(x) = phi x`, base `N(0, 1)`; gradient `2 phi`.
pub struct ScaledSquare;

impl ReparamObjective for ScaledSquare {
    fn param_dim(&self) -> usize {
        1
    }
    fn base_sample(&self, rng: &mut RngStream) -> StateVector {
        StateVector(vec![rng.normal()])
    }
    fn transform(&self, x: &[f64], phi: &[f64]) -> StateVector {
        StateVector(vec![phi[0] * x[0]])
    }
    fn transform_vjp(&self, x: &[f64], _phi: &[f64], v: &[f64]) -> Vec<f64> {
        vec![v[0] * x[0]]
    }
    fn value(&self, y: &[f64], _phi: &[f64]) -> f64 {
        y[0] * y[0]
    }
    fn grad_y(&self, y: &[f64], _phi: &[f64]) -> Vec<f64> {
        vec![2.0 * y[0]]
    }
    fn grad_phi(&self, _y: &[f64], _phi: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

/// `N(mu, exp(2 l))` with `phi = (mu, l)` in one dimension.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLocationScale;

impl GaussianLocationScale {
    pub fn log_density(x: f64, phi: &[f64]) -> f64 {
        let s = phi[1].exp();
        let z = (x - phi[0]) / s;
        -0.5 * z * z - phi[1] - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn score(x: f64, phi: &[f64]) -> Vec<f64> {
        let s = phi[1].exp();
        let z = (x - phi[0]) / s;
        vec![z / s, z * z - 1.0]
    }
}

impl ScoreFamily for GaussianLocationScale {
    fn param_dim(&self) -> usize {
        2
    }
    fn sample(&self, phi: &[f64], rng: &mut RngStream) -> StateVector {
        StateVector(vec![phi[0] + phi[1].exp() * rng.normal()])
    }
    fn log_density(&self, x: &[f64], phi: &[f64]) -> f64 {
        Self::log_density(x[0], phi)
    }
    fn score(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        Self::score(x[0], phi)
    }
}

/// `N(phi, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLocation;

impl ScoreFamily for GaussianLocation {
    fn param_dim(&self) -> usize {
        1
    }
    fn sample(&self, phi: &[f64], rng: &mut RngStream) -> StateVector {
        StateVector(vec![phi[0] + rng.normal()])
    }
    fn log_density(&self, x: &[f64], phi: &[f64]) -> f64 {
        let z = x[0] - phi[0];
        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
    fn score(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        vec![x[0] - phi[0]]
    }
}

/// Reverse KL `E_q[log q_phi(Y) - log p(Y)]` for `q_phi = N(mu, exp(2 l))` and
/// `p = N(p_mean, p_sd^2)`, reparameterized as `Y = mu + exp(l) X`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianReverseKl {
    pub p_mean: f64,
    pub p_sd: f64,
}

impl GaussianReverseKl {
    pub fn kl(&self, phi: &[f64]) -> f64 {
        let s = phi[1].exp();
        (self.p_sd / s).ln() + (s * s + (phi[0] - self.p_mean).powi(2)) / (2.0 * self.p_sd * self.p_sd) - 0.5
    }

    pub fn exact_gradient(&self, phi: &[f64]) -> Vec<f64> {
        let s2 = (2.0 * phi[1]).exp();
        let v = self.p_sd * self.p_sd;
        vec![(phi[0] - self.p_mean) / v, s2 / v - 1.0]
    }

    fn log_p(&self, y: f64) -> f64 {
        let z = (y - self.p_mean) / self.p_sd;
        -0.5 * z * z - self.p_sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

impl ReparamObjective for GaussianReverseKl {
    fn param_dim(&self) -> usize {
        2
    }
    fn base_sample(&self, rng: &mut RngStream) -> StateVector {
        StateVector(vec![rng.normal()])
    }
    fn transform(&self, x: &[f64], phi: &[f64]) -> StateVector {
        StateVector(vec![phi[0] + phi[1].exp() * x[0]])
    }
    fn transform_vjp(&self, x: &[f64], phi: &[f64], v: &[f64]) -> Vec<f64> {
        vec![v[0], v[0] * phi[1].exp() * x[0]]
    }
    fn value(&self, y: &[f64], phi: &[f64]) -> f64 {
        GaussianLocationScale::log_density(y[0], phi) - self.log_p(y[0])
    }
    fn grad_y(&self, y: &[f64], phi: &[f64]) -> Vec<f64> {
        let s2 = (2.0 * phi[1]).exp();
        vec![-(y[0] - phi[0]) / s2 + (y[0] - self.p_mean) / (self.p_sd * self.p_sd)]
    }
    fn grad_phi(&self, y: &[f64], phi: &[f64]) -> Vec<f64> {
        GaussianLocationScale::score(y[0], phi)
    }
}

/// Mean-field reverse KL to a correlated bivariate Gaussian
/// `p = N(0, [[1, rho], [rho, 1]])` with `q = N(mu1, 1) x N(mu2, 1)`; the
/// score-function term for `mu1` and its exact conditional mean given `x1`.
#[derive(Debug, Clone, Copy)]
pub struct MeanFieldFactor {
    pub rho: f64,
}

impl MeanFieldFactor {
    fn log_q(x: &[f64], phi: &[f64]) -> f64 {
        -0.5 * (x[0] - phi[0]).powi(2) - 0.5 * (x[1] - phi[1]).powi(2) - (2.0 * std::f64::consts::PI).ln()
    }

    fn log_p(&self, x: &[f64]) -> f64 {
        let r = self.rho;
        let q = (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1]) / (1.0 - r * r);
        -0.5 * q - (2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 - r * r).ln()
    }

    /// REINFORCE term for `mu1`: `(x1 - mu1) (1 + log q(x) - log p(x))`.
    pub fn raw(&self, x1: &[f64], x2: &[f64], phi: &[f64]) -> Vec<f64> {
        let x = [x1[0], x2[0]];
        vec![(x1[0] - phi[0]) * (1.0 + Self::log_q(&x, phi) - self.log_p(&x))]
    }

    /// Expectation of [`raw`](Self::raw) over `x2 ~ N(mu2, 1)`.
    pub fn conditional(&self, x1: &[f64], phi: &[f64]) -> Vec<f64> {
        let (a, m1, m2, r) = (x1[0], phi[0], phi[1], self.rho);
        let e_log_q = -0.5 * (a - m1).powi(2) - 0.5 - (2.0 * std::f64::consts::PI).ln();
        let e_quad = (a * a - 2.0 * r * a * m2 + 1.0 + m2 * m2) / (1.0 - r * r);
        let e_log_p = -0.5 * e_quad - (2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 - r * r).ln();
        vec![(a - m1) * (1.0 + e_log_q - e_log_p)]
    }

    pub fn exact_gradient(&self, phi: &[f64]) -> f64 {
        (phi[0] - self.rho * phi[1]) / (1.0 - self.rho * self.rho)
    }

    pub fn draws(&self, phi: &[f64], n: usize, rng: &mut RngStream) -> Vec<(StateVector, StateVector)> {
        (0..n)
            .map(|_| (StateVector(vec![phi[0] + rng.normal()]), StateVector(vec![phi[1] + rng.normal()])))
            .collect()
    }
}

/// `(g, c)` pairs with unit variances and correlation `rho`; `E[g] = g_mean`,
/// `E[c] = 0`.
pub fn correlated_pairs(rho: f64, g_mean: f64, n: usize, rng: &mut RngStream) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut g = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.normal();
        let b = rng.normal();
        c.push(vec![a]);
        g.push(vec![g_mean + rho * a + (1.0 - rho * rho).sqrt() * b]);
    }
    (g, c)
}

/// Outcome of replicating an estimator: the CSV row plus the standard error
/// of the replicate mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub row: BenchRow,
    pub se: f64,
}

impl BenchResult {
    pub fn unbiased(&self) -> bool {
        self.row.mean_err.abs() <= 3.0 * self.se
    }
}

fn replicate<F>(estimator: &str, problem: &str, t: usize, reps: usize, truth: f64, seed: u64, mut est: F) -> Result<BenchResult>
where
    F: FnMut(&mut RngStream) -> Result<GradientEstimate>,
{
    let master = RngStream::new(seed, 0xbe);
    let mut values = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = master.child(r as u64);
        values.push(est(&mut rng)?.value[0]);
    }
    Ok(BenchResult {
        row: BenchRow {
            estimator: estimator.into(),
            problem: problem.into(),
            t,
            mean_err: mean(&values) - truth,
            variance: variance(&values),
        },
        se: std_error(&values),
    })
}

/// Replicates every estimator `reps` times on its closed-form problem.
pub fn estimator_bench(reps: usize, t: usize, seed: u64) -> Result<Vec<BenchResult>> {
    let mut out = Vec::new();
    out.push(replicate("reparam", "shift", t, reps, 1.0, seed, |rng| reparam_gradient(&Shift, &[0.3], t, rng))?);
    out.push(replicate("reparam", "scaled_square", t, reps, 3.0, seed, |rng| {
        reparam_gradient(&ScaledSquare, &[1.5], t, rng)
    })?);
    let rkl = GaussianReverseKl { p_mean: 1.0, p_sd: 2.0 };
    let phi = [0.0, 0.0];
    let truth = rkl.exact_gradient(&phi);
    out.push(replicate("reparam", "reverse_kl_mu", t, reps, truth[0], seed, |rng| {
        reparam_gradient(&rkl, &phi, t, rng)
    })?);
    let linear = FnIntegrand { f: |x: &[f64], _: &[f64]| x[0], grad: |_: &[f64], _: &[f64]| vec![0.0] };
    out.push(replicate("reinforce", "linear_location", t, reps, 1.0, seed, |rng| {
        reinforce_gradient(&linear, &GaussianLocation, &[0.5], t, rng)
    })?);
    let constant = FnIntegrand { f: |_: &[f64], _: &[f64]| 4.0, grad: |_: &[f64], _: &[f64]| vec![0.0, 0.0] };
    out.push(replicate("reinforce", "constant", t, reps, 0.0, seed, |rng| {
        reinforce_gradient(&constant, &GaussianLocationScale, &[0.5, 0.1], t, rng)
    })?);
    out.push(replicate("control_variate", "correlated_pair", t, reps, 0.7, seed, |rng| {
        let (g, c) = correlated_pairs(0.9, 0.7, t.max(2), rng);
        control_variate(&g, &c, &[0.0])
    })?);
    let mf = MeanFieldFactor { rho: 0.6 };
    let mphi = [0.5, -0.3];
    out.push(replicate("rao_blackwell", "mean_field_factor", t, reps, mf.exact_gradient(&mphi), seed, |rng| {
        let draws = mf.draws(&mphi, t, rng);
        Ok(rao_blackwellize(|a, b, p| mf.raw(a, b, p), |a, p| mf.conditional(a, p), &draws, &mphi)?.rao_blackwell)
    })?);
    out.push(replicate("raw_score", "mean_field_factor", t, reps, mf.exact_gradient(&mphi), seed, |rng| {
        let draws = mf.draws(&mphi, t, rng);
        Ok(rao_blackwellize(|a, b, p| mf.raw(a, b, p), |a, p| mf.conditional(a, p), &draws, &mphi)?.raw)
    })?);
    let comps: Vec<Box<dyn Fn(&[f64]) -> Vec<f64>>> =
        (1..=3).map(|i| Box::new(move |_: &[f64]| vec![i as f64]) as Box<dyn Fn(&[f64]) -> Vec<f64>>).collect();
    out.push(replicate("minibatch", "linear_components", 1, reps, 6.0, seed, |rng| {
        minibatch_gradient(&comps, &[1.0], 1, rng)
    })?);
    Ok(out)
}

pub fn write_bench_csv<W: std::io::Write>(results: &[BenchResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(&r.row)?;
    }
    w.flush()?;
    Ok(())
}
