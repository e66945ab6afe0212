//! Stochastic gradient estimators: reparameterization, score function,
//! control variates, Rao-Blackwellization and mini-batching.
//!
//! Gradients are analytic; each test problem in [`problems`] carries its own
//! finite-difference self-check. Interchanging differentiation and
//! integration is assumed to be valid for the supplied objectives.

pub mod problems;

use serde::{Deserialize, Serialize};

use crate::mcmc::StateVector;
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMeta {
    pub samples_used: usize,
    pub estimator_name: String,
    /// Per-coordinate sample variance of the averaged terms.
    pub sample_variance: Vec<f64>,
    /// Control variates: estimated `1 - corr^2` per coordinate.
    pub variance_reduction: Option<Vec<f64>>,
    /// Set when a control variate had zero variance and was dropped.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub value: Vec<f64>,
    pub meta: GradientMeta,
}

impl AsRef<[f64]> for GradientEstimate {
    fn as_ref(&self) -> &[f64] {
        &self.value
    }
}

/// Mean and per-coordinate sample variance of a list of terms.
fn summarize(terms: &[Vec<f64>], name: &str) -> GradientEstimate {
    let n = terms.len();
    let m = terms[0].len();
    let mut mean = vec![0.0; m];
    for t in terms {
        for i in 0..m {
            mean[i] += t[i];
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut var = vec![0.0; m];
    if n > 1 {
        for t in terms {
            for i in 0..m {
                var[i] += (t[i] - mean[i]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    }
    GradientEstimate {
        value: mean,
        meta: GradientMeta {
            samples_used: n,
            estimator_name: name.to_string(),
            sample_variance: var,
            variance_reduction: None,
            degenerate: false,
        },
    }
}

fn check_finite(term: &[f64], t: usize, x: &[f64]) -> Result<()> {
    if term.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("gradient term at sample {t} (x = {x:?}) is {term:?}")))
    }
}

/// `E_{q_phi}[f(X, phi)]` written through a reparameterization `X = m_phi(X0)`
/// with `X0` from a fixed base distribution.
pub trait ReparamObjective: Send + Sync {
    fn param_dim(&self) -> usize;

    fn base_sample(&self, rng: &mut RngStream) -> StateVector;

    /// `m_phi(x)`.
    fn transform(&self, x: &[f64], phi: &[f64]) -> StateVector;

    /// `v^T d m_phi(x) / d phi`.
    fn transform_vjp(&self, x: &[f64], phi: &[f64], v: &[f64]) -> Vec<f64>;

    fn value(&self, y: &[f64], phi: &[f64]) -> f64;

    /// `d f / d y` at `(y, phi)`.
    fn grad_y(&self, y: &[f64], phi: &[f64]) -> Vec<f64>;

    /// Partial `d f / d phi` at fixed `y`.
    fn grad_phi(&self, y: &[f64], phi: &[f64]) -> Vec<f64>;

    /// `grad_phi f(m_phi(x), phi)`, the total derivative.
    fn pathwise_gradient(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        let y = self.transform(x, phi);
        let mut g = self.grad_phi(&y, phi);
        let through = self.transform_vjp(x, phi, &self.grad_y(&y, phi));
        g.iter_mut().zip(through).for_each(|(a, b)| *a += b);
        g
    }
}

/// Average of `grad_phi f(m_phi(X_t), phi)` over `T` base draws.
pub fn reparam_gradient(obj: &dyn ReparamObjective, phi: &[f64], t_samples: usize, rng: &mut RngStream) -> Result<GradientEstimate> {
    if t_samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let mut terms = Vec::with_capacity(t_samples);
    for t in 0..t_samples {
        let x = obj.base_sample(rng);
        let g = obj.pathwise_gradient(&x, phi);
        check_finite(&g, t, &x)?;
        terms.push(g);
    }
    Ok(summarize(&terms, "reparam"))
}

/// A parametric sampler with an analytic score `grad_phi log q_phi(x)`.
pub trait ScoreFamily: Send + Sync {
    fn param_dim(&self) -> usize;
    fn sample(&self, phi: &[f64], rng: &mut RngStream) -> StateVector;
    fn log_density(&self, x: &[f64], phi: &[f64]) -> f64;
    fn score(&self, x: &[f64], phi: &[f64]) -> Vec<f64>;
}

/// Integrand `f(x, phi)` with analytic partial gradient in `phi`.
pub trait Integrand: Send + Sync {
    fn value(&self, x: &[f64], phi: &[f64]) -> f64;
    fn grad_phi(&self, x: &[f64], phi: &[f64]) -> Vec<f64>;
}

/// Integrand from a pair of closures.
pub struct FnIntegrand<F, G> {
    pub f: F,
    pub grad: G,
}

impl<F, G> Integrand for FnIntegrand<F, G>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync,
{
    fn value(&self, x: &[f64], phi: &[f64]) -> f64 {
        (self.f)(x, phi)
    }

    fn grad_phi(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        (self.grad)(x, phi)
    }
}

/// Score-function (REINFORCE) estimator
/// `T^-1 sum_t grad_phi f(X_t, phi) + f(X_t, phi) grad_phi log q_phi(X_t)`.
pub fn reinforce_gradient(
    f: &dyn Integrand,
    family: &dyn ScoreFamily,
    phi: &[f64],
    t_samples: usize,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    if t_samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let mut terms = Vec::with_capacity(t_samples);
    for t in 0..t_samples {
        let x = family.sample(phi, rng);
        let fx = f.value(&x, phi);
        let mut g = f.grad_phi(&x, phi);
        for (gi, si) in g.iter_mut().zip(family.score(&x, phi)) {
            *gi += fx * si;
        }
        check_finite(&g, t, &x)?;
        terms.push(g);
    }
    Ok(summarize(&terms, "reinforce"))
}

/// Mean of `g + k* (c - c_mean)` with `k* = -cov(g, c) / var(c)` estimated
/// per coordinate on the same samples.
pub fn control_variate(g_hat: &[Vec<f64>], c_hat: &[Vec<f64>], c_mean: &[f64]) -> Result<GradientEstimate> {
    let n = g_hat.len();
    if n < 2 || c_hat.len() != n {
        return Err(Error::InvalidArgument(format!(
            "control variates need matching sample counts >= 2, got {n} and {}",
            c_hat.len()
        )));
    }
    let m = g_hat[0].len();
    if c_mean.len() != m || c_hat[0].len() != m || g_hat.iter().chain(c_hat).any(|v| v.len() != m) {
        return Err(Error::Dimension { expected: m, got: c_mean.len() });
    }
    let col = |v: &[Vec<f64>], i: usize| -> Vec<f64> { v.iter().map(|r| r[i]).collect() };
    let mut corrected = vec![vec![0.0; m]; n];
    let mut reduction = vec![1.0; m];
    let mut degenerate = false;
    for i in 0..m {
        let (g, c) = (col(g_hat, i), col(c_hat, i));
        let (mg, mc) = (crate::stats::mean(&g), crate::stats::mean(&c));
        let cov: f64 = g.iter().zip(&c).map(|(a, b)| (a - mg) * (b - mc)).sum::<f64>() / (n - 1) as f64;
        let var_c: f64 = c.iter().map(|b| (b - mc).powi(2)).sum::<f64>() / (n - 1) as f64;
        let var_g: f64 = g.iter().map(|a| (a - mg).powi(2)).sum::<f64>() / (n - 1) as f64;
        let k = if var_c > 0.0 {
            -cov / var_c
        } else {
            degenerate = true;
            0.0
        };
        if var_c > 0.0 && var_g > 0.0 {
            reduction[i] = 1.0 - cov * cov / (var_c * var_g);
        }
        for r in 0..n {
            corrected[r][i] = g[r] + k * (c[r] - c_mean[i]);
        }
    }
    let mut est = summarize(&corrected, "control_variate");
    est.meta.variance_reduction = Some(reduction);
    est.meta.degenerate = degenerate;
    Ok(est)
}

/// Raw and conditioned estimates computed on the same joint draws.
#[derive(Debug, Clone, PartialEq)]
pub struct RaoBlackwellReport {
    pub rao_blackwell: GradientEstimate,
    pub raw: GradientEstimate,
}

/// Replaces `g((x1, x2), phi)` by its exact conditional mean given `x1`.
pub fn rao_blackwellize<G, C>(g: G, conditional_mean: C, draws: &[(StateVector, StateVector)], phi: &[f64]) -> Result<RaoBlackwellReport>
where
    G: Fn(&[f64], &[f64], &[f64]) -> Vec<f64>,
    C: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no draws".into()));
    }
    let mut raw = Vec::with_capacity(draws.len());
    let mut rb = Vec::with_capacity(draws.len());
    for (t, (x1, x2)) in draws.iter().enumerate() {
        let a = g(x1, x2, phi);
        let b = conditional_mean(x1, phi);
        check_finite(&a, t, x1)?;
        check_finite(&b, t, x1)?;
        raw.push(a);
        rb.push(b);
    }
    Ok(RaoBlackwellReport { rao_blackwell: summarize(&rb, "rao_blackwell"), raw: summarize(&raw, "raw") })
}

/// `(N / B) sum_{i in I} grad f_i(phi)` with `I` drawn uniformly without
/// replacement.
pub fn minibatch_gradient<F>(components: &[F], phi: &[f64], batch_size: usize, rng: &mut RngStream) -> Result<GradientEstimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = components.len();
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidArgument(format!("batch size {batch_size} must lie in 1..={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for k in 0..batch_size {
        let j = k + rng.below((n - k) as u64) as usize;
        idx.swap(k, j);
    }
    let scale = n as f64 / batch_size as f64;
    let mut total = vec![0.0; phi.len()];
    for &i in &idx[..batch_size] {
        let g = components[i](phi);
        check_finite(&g, i, phi)?;
        total.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    total.iter_mut().for_each(|a| *a *= scale);
    let mut est = summarize(&[total], "minibatch");
    est.meta.samples_used = batch_size;
    Ok(est)
}

/// Exact mean and variance of the scalar mini-batch estimator over all
/// `C(N, B)` index sets.
pub fn minibatch_exact_moments(component_grads: &[f64], batch_size: usize) -> (f64, f64) {
    let n = component_grads.len();
    let scale = n as f64 / batch_size as f64;
    let mut values = Vec::new();
    let mut subset: Vec<usize> = (0..batch_size).collect();
    loop {
        values.push(scale * subset.iter().map(|&i| component_grads[i]).sum::<f64>());
        // Next combination in lexicographic order.
        let mut k = batch_size;
        loop {
            if k == 0 {
                let m = crate::stats::mean(&values);
                let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / values.len() as f64;
                return (m, v);
            }
            k -= 1;
            if subset[k] < n - batch_size + k {
                break;
            }
        }
        subset[k] += 1;
        for j in k + 1..batch_size {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

/// Row of the estimator benchmark CSV `estimator,problem,T,mean_err,variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub estimator: String,
    pub problem: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub mean_err: f64,
    pub variance: f64,
}

#[cfg(test)]
mod tests;
