//! Adaptive MCMC with transport maps: a particle ensemble moved by a fixed
//! kernel, interleaved with independence MH from a trained pushforward
//! `q_phi = q o f_phi^{-1}` of the standard normal.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mcmc::{
    check_dim, slice_kernel, ImhKernel, IndependentProposal, SharedKernel, SharedTarget, StateVector,
    DEFAULT_SLICE_WIDTH,
};
use crate::models::{discrete_transition_oracle, mat_mul, apply_left, DiscreteTarget, MAX_DISCRETE_STATES};
use crate::rng::RngStream;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diffeomorphism of `R^d` with parameters `phi`, pushing the standard
/// normal `q` forward to `q_phi`.
pub trait TransportMap: Send + Sync {
    fn dim(&self) -> usize;

    fn params(&self) -> &[f64];

    fn set_params(&mut self, phi: &[f64]) -> Result<()>;

    fn forward(&self, x: &[f64]) -> Vec<f64>;

    fn inverse(&self, y: &[f64]) -> Vec<f64>;

    /// `log |det J_{f^{-1}}|(y)`.
    fn log_det_jacobian_inverse(&self, y: &[f64]) -> f64;

    /// `grad_phi log q_phi(y)`.
    fn grad_log_density(&self, y: &[f64]) -> Vec<f64>;

    fn log_density(&self, y: &[f64]) -> f64 {
        let x = self.inverse(y);
        -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.dim() as f64 * LN_2PI
            + self.log_det_jacobian_inverse(y)
    }
}

/// `f(x) = mu + diag(s) x`, `phi = (mu, log s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMap {
    phi: Vec<f64>,
}

pub fn affine_map(dim: usize) -> Result<AffineMap> {
    if dim == 0 {
        return Err(Error::InvalidArgument("map dimension must be positive".into()));
    }
    Ok(AffineMap { phi: vec![0.0; 2 * dim] })
}

impl AffineMap {
    pub fn new(mu: &[f64], s: &[f64]) -> Result<Self> {
        if mu.is_empty() || mu.len() != s.len() {
            return Err(Error::InvalidArgument("mu and s must have the same positive length".into()));
        }
        if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("scales must be positive, got {s:?}")));
        }
        let mut phi = mu.to_vec();
        phi.extend(s.iter().map(|v| v.ln()));
        Ok(AffineMap { phi })
    }

    pub fn mu(&self) -> &[f64] {
        &self.phi[..self.phi.len() / 2]
    }

    pub fn log_s(&self) -> &[f64] {
        &self.phi[self.phi.len() / 2..]
    }

    pub fn s(&self) -> Vec<f64> {
        self.log_s().iter().map(|v| v.exp()).collect()
    }
}

impl TransportMap for AffineMap {
    fn dim(&self) -> usize {
        self.phi.len() / 2
    }

    fn params(&self) -> &[f64] {
        &self.phi
    }

    fn set_params(&mut self, phi: &[f64]) -> Result<()> {
        check_dim(self.phi.len(), phi.len())?;
        self.phi.copy_from_slice(phi);
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mu().iter().zip(self.log_s())).map(|(v, (m, ls))| m + ls.exp() * v).collect()
    }

    fn inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(self.mu().iter().zip(self.log_s())).map(|(v, (m, ls))| (v - m) * (-ls).exp()).collect()
    }

    fn log_det_jacobian_inverse(&self, _y: &[f64]) -> f64 {
        -self.log_s().iter().sum::<f64>()
    }

    fn grad_log_density(&self, y: &[f64]) -> Vec<f64> {
        let z = self.inverse(y);
        let mut g: Vec<f64> = z.iter().zip(self.log_s()).map(|(zi, ls)| zi * (-ls).exp()).collect();
        g.extend(z.iter().map(|zi| zi * zi - 1.0));
        g
    }
}

/// `q_phi` as an independence proposal: draw `x ~ q`, emit `f_phi(x)`.
pub struct TransportProposal {
    map: Arc<dyn TransportMap>,
}

impl TransportProposal {
    pub fn new(map: Arc<dyn TransportMap>) -> Self {
        TransportProposal { map }
    }
}

impl IndependentProposal for TransportProposal {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn sample(&self, rng: &mut RngStream) -> StateVector {
        StateVector(self.map.forward(&rng.normal_vec(self.map.dim())))
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.map.log_density(x)
    }
}

/// Independence MH with proposal `q_phi`.
pub fn transport_imh_kernel(map: Arc<dyn TransportMap>, target: SharedTarget) -> Result<ImhKernel> {
    ImhKernel::new(Arc::new(TransportProposal::new(map)), target)
}

/// `-(1/N) sum_n log q_phi(x_n)`.
pub fn transport_loss(map: &dyn TransportMap, particles: &[StateVector]) -> f64 {
    -particles.iter().map(|x| map.log_density(x)).sum::<f64>() / particles.len() as f64
}

pub fn transport_loss_gradient(map: &dyn TransportMap, particles: &[StateVector]) -> Vec<f64> {
    let mut g = vec![0.0; map.params().len()];
    for x in particles {
        for (gi, v) in g.iter_mut().zip(map.grad_log_density(x)) {
            *gi -= v;
        }
    }
    let n = particles.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSettings {
    pub k_max: usize,
    /// Iterations `k` with `k mod (a + 1) = 0` use the transport kernel.
    pub a: usize,
    pub eps: f64,
}

impl Default for TransportSettings {
    fn default() -> Self {
        TransportSettings { k_max: 500, a: 1, eps: 1e-2 }
    }
}

/// Largest parameter norm before the run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct TransportRun<M> {
    /// `particles[k]` is the ensemble after iteration `k`; `particles[0]` is
    /// the starting ensemble.
    pub particles: Vec<Vec<StateVector>>,
    /// Loss at the post-update particles of iteration `k`, before the
    /// gradient step.
    pub losses: Vec<f64>,
    pub params: Vec<Vec<f64>>,
    pub transport_accepts: u64,
    pub transport_steps: u64,
    pub map: M,
}

impl<M> TransportRun<M> {
    pub fn transport_acceptance(&self) -> f64 {
        self.transport_accepts as f64 / self.transport_steps as f64
    }
}

/// Adaptive MCMC with transport maps. `fixed` defaults to a slice sampler
/// on `target`.
pub fn adaptive_transport_run<M>(
    target: SharedTarget,
    map0: M,
    particles0: Vec<StateVector>,
    settings: TransportSettings,
    fixed: Option<SharedKernel>,
    rng: &RngStream,
) -> Result<TransportRun<M>>
where
    M: TransportMap + Clone + 'static,
{
    let TransportSettings { k_max, a, eps } = settings;
    if particles0.len() < 2 {
        return Err(Error::InvalidArgument("need at least two particles".into()));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be non-negative, got {eps}")));
    }
    for x in &particles0 {
        check_dim(map0.dim(), x.dim())?;
    }
    check_dim(target.dim(), map0.dim())?;
    let fixed: SharedKernel = match fixed {
        Some(k) => k,
        None => Arc::new(slice_kernel(target.clone(), DEFAULT_SLICE_WIDTH)?),
    };
    let mut map = map0;
    let mut particles = particles0;
    let mut history = vec![particles.clone()];
    let mut losses = Vec::with_capacity(k_max);
    let mut params = vec![map.params().to_vec()];
    let (mut accepts, mut steps) = (0u64, 0u64);
    for k in 0..k_max {
        let transport = k % (a + 1) == 0;
        let kernel: SharedKernel = if transport {
            Arc::new(transport_imh_kernel(Arc::new(map.clone()), target.clone())?)
        } else {
            fixed.clone()
        };
        let stream = rng.child(k as u64);
        particles = particles
            .par_iter()
            .enumerate()
            .map(|(n, x)| kernel.step(x, &mut stream.child(n as u64)).map_err(|e| e.context(format!("iteration {k}, particle {n}"))))
            .collect::<Result<Vec<_>>>()?;
        if transport {
            let s = kernel.acceptance().expect("IMH records acceptance");
            accepts += s.accept_count;
            steps += s.step_count;
        }
        let loss = transport_loss(&map, &particles);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("transport loss {loss} at iteration {k}")));
        }
        let grad = transport_loss_gradient(&map, &particles);
        let next: Vec<f64> = map.params().iter().zip(&grad).map(|(p, g)| p - eps * g).collect();
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { t: k + 1, norm, trajectory: params });
        }
        map.set_params(&next)?;
        losses.push(loss);
        params.push(next);
        history.push(particles.clone());
    }
    Ok(TransportRun { particles: history, losses, params, transport_accepts: accepts, transport_steps: steps, map })
}

/// Largest `|p K - p|` for `K` = (fixed MH kernel) then (IMH from the
/// discretized `q_phi`), on a grid discretization of `log_target` with at
/// most 16 points.
pub fn composite_invariance_error(grid: &[f64], log_target: impl Fn(f64) -> f64, map: &dyn TransportMap) -> Result<f64> {
    if grid.len() < 2 || grid.len() > MAX_DISCRETE_STATES || map.dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "need a one-dimensional map and 2..={MAX_DISCRETE_STATES} grid points"
        )));
    }
    let target = DiscreteTarget::from_weights(&grid.iter().map(|&x| log_target(x).exp()).collect::<Vec<_>>())?;
    let uniform = DiscreteTarget::from_weights(&vec![1.0; grid.len()])?;
    let q = DiscreteTarget::from_weights(&grid.iter().map(|&x| map.log_density(&[x]).exp()).collect::<Vec<_>>())?;
    let composite = mat_mul(&discrete_transition_oracle(&target, &uniform)?, &discrete_transition_oracle(&target, &q)?);
    let after = apply_left(target.probs(), &composite);
    Ok(target.probs().iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Particle trace CSV with header `k,n,x_1,...,x_d`.
pub fn write_particles_csv<W: Write>(particles: &[Vec<StateVector>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = particles.first().and_then(|p| p.first()).map_or(0, |x| x.dim());
    let mut header = vec!["k".to_string(), "n".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for (k, ens) in particles.iter().enumerate() {
        for (n, x) in ens.iter().enumerate() {
            let mut row = vec![k.to_string(), n.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loss CSV with header `k,loss`.
pub fn write_loss_csv<W: Write>(losses: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "loss"])?;
    for (k, l) in losses.iter().enumerate() {
        w.write_record([k.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
