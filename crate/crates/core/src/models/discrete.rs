use std::sync::Arc;

use crate::expfam::imh_acceptance;
use crate::mcmc::{IndependentProposal, MarkovKernel, SharedTarget, StateVector, TargetDensity};
use crate::rng::RngStream;
use crate::stats::sample_discrete;
use crate::{Error, Result};

pub const MAX_DISCRETE_STATES: usize = 16;

/// Normalized distribution over states `0..n`, encoded as the single
/// coordinate of a one-dimensional state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTarget {
    probs: Vec<f64>,
}

impl DiscreteTarget {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.len() > MAX_DISCRETE_STATES {
            return Err(Error::InvalidArgument(format!("discrete targets need 1..={MAX_DISCRETE_STATES} states")));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(DiscreteTarget { probs })
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let total: f64 = w.iter().sum();
        Self::new(w.iter().map(|x| x / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn index(&self, x: &[f64]) -> Option<usize> {
        let v = x[0];
        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < self.probs.len() {
            Some(v as usize)
        } else {
            None
        }
    }
}

impl TargetDensity for DiscreteTarget {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.index(x).map_or(f64::NEG_INFINITY, |i| self.probs[i].ln())
    }
}

impl IndependentProposal for DiscreteTarget {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut RngStream) -> StateVector {
        StateVector(vec![sample_discrete(&self.probs, rng) as f64])
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        TargetDensity::log_density(self, x)
    }
}

/// Distribution on two real values `values[0]`, `values[1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointTarget {
    pub values: [f64; 2],
    pub probs: [f64; 2],
}

impl TwoPointTarget {
    pub fn new(values: [f64; 2], probs: [f64; 2]) -> Result<Self> {
        if values[0] == values[1] || probs.iter().any(|p| !(*p > 0.0)) || (probs[0] + probs[1] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("invalid two-point target {values:?} {probs:?}")));
        }
        Ok(TwoPointTarget { values, probs })
    }

    pub fn index(&self, x: f64) -> Option<usize> {
        self.values.iter().position(|v| *v == x)
    }

    pub fn mean(&self) -> f64 {
        self.values[0] * self.probs[0] + self.values[1] * self.probs[1]
    }
}

impl TargetDensity for TwoPointTarget {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.index(x[0]).map_or(f64::NEG_INFINITY, |i| self.probs[i].ln())
    }
}

/// Moves from state `i` to the other state `j` with probability
/// `rate * probs[j]`; reversible for the two-point target with second
/// eigenvalue `1 - rate`.
pub struct TwoPointKernel {
    point: TwoPointTarget,
    rate: f64,
    target: SharedTarget,
}

impl TwoPointKernel {
    pub fn new(point: TwoPointTarget, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate * point.probs[0].max(point.probs[1]) <= 1.0) {
            return Err(Error::InvalidArgument(format!("rate {rate} does not give a transition matrix")));
        }
        Ok(TwoPointKernel { point, rate, target: Arc::new(point) })
    }

    pub fn second_eigenvalue(&self) -> f64 {
        1.0 - self.rate
    }

    pub fn transition_matrix(&self) -> Matrix {
        let p = self.point.probs;
        vec![vec![1.0 - self.rate * p[1], self.rate * p[1]], vec![self.rate * p[0], 1.0 - self.rate * p[0]]]
    }
}

impl MarkovKernel for TwoPointKernel {
    fn step(&self, x: &StateVector, rng: &mut RngStream) -> Result<StateVector> {
        let i = self
            .point
            .index(x[0])
            .ok_or_else(|| Error::InvalidArgument(format!("{} is not a state of the two-point chain", x[0])))?;
        let j = 1 - i;
        let u = rng.uniform();
        Ok(StateVector(vec![if u < self.rate * self.point.probs[j] { self.point.values[j] } else { x[0] }]))
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }
}

pub type Matrix = Vec<Vec<f64>>;

/// Exact IMH transition matrix on a finite space.
pub fn discrete_transition_oracle(target: &DiscreteTarget, proposal: &DiscreteTarget) -> Result<Matrix> {
    if target.len() != proposal.len() {
        return Err(Error::Dimension { expected: target.len(), got: proposal.len() });
    }
    let (pi, f) = (target.probs(), proposal.probs());
    let n = pi.len();
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                p[i][j] = f[j] * imh_acceptance(pi[i], f[i], pi[j], f[j]);
                off += p[i][j];
            }
        }
        p[i][i] = 1.0 - off;
    }
    Ok(p)
}

/// Stationary vector by power iteration on the lazy chain (P + I)/2, using
/// repeated squaring so slowly mixing instances converge in a few steps.
pub fn stationary_distribution(p: &Matrix) -> Vec<f64> {
    let n = p.len();
    let mut m: Matrix = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (p[i][j] + if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    for _ in 0..64 {
        m = mat_mul(&m, &m);
        for row in m.iter_mut() {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        let spread = (0..n)
            .map(|j| {
                let col = m.iter().map(|r| r[j]);
                col.clone().fold(f64::NEG_INFINITY, f64::max) - col.fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        if spread < 1e-15 {
            break;
        }
    }
    let mut v = vec![0.0; n];
    for row in &m {
        for j in 0..n {
            v[j] += row[j] / n as f64;
        }
    }
    v
}

/// Row vector times matrix.
pub fn apply_left(v: &[f64], p: &Matrix) -> Vec<f64> {
    let n = p[0].len();
    let mut out = vec![0.0; n];
    for (i, vi) in v.iter().enumerate() {
        for j in 0..n {
            out[j] += vi * p[i][j];
        }
    }
    out
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            for j in 0..m {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

/// Largest violation of `pi(i) P(i,j) = pi(j) P(j,i)`.
pub fn detailed_balance_error(pi: &[f64], p: &Matrix) -> f64 {
    let n = pi.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((pi[i] * p[i][j] - pi[j] * p[j][i]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn proposal_equals_target() {
        let t = DiscreteTarget::new(vec![0.2, 0.3, 0.5]).unwrap();
        let p = discrete_transition_oracle(&t, &t).unwrap();
        for row in &p {
            for (j, v) in row.iter().enumerate() {
                assert!((v - t.probs()[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_state_example() {
        let t = DiscreteTarget::new(vec![0.5, 0.5]).unwrap();
        let f = DiscreteTarget::new(vec![0.9, 0.1]).unwrap();
        let p = discrete_transition_oracle(&t, &f).unwrap();
        let s = stationary_distribution(&p);
        assert!((s[0] - 0.5).abs() < 1e-10 && (s[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn validation() {
        assert!(DiscreteTarget::new(vec![0.5, 0.4]).is_err());
        assert!(DiscreteTarget::new(vec![1.0 / 17.0; 17]).is_err());
        let t = DiscreteTarget::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(TargetDensity::log_density(&t, &[2.0]), f64::NEG_INFINITY);
        assert_eq!(TargetDensity::log_density(&t, &[0.5]), f64::NEG_INFINITY);
    }

    #[test]
    fn two_point_kernel_invariance_and_mixing() {
        let t = TwoPointTarget::new([-0.5, 0.5], [0.5, 0.5]).unwrap();
        let k = TwoPointKernel::new(t, 0.5).unwrap();
        let p = k.transition_matrix();
        assert_eq!(p[0][1], 0.25);
        let s = stationary_distribution(&p);
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert_eq!(k.second_eigenvalue(), 0.5);
        let skew = TwoPointTarget::new([0.0, 3.0], [0.2, 0.8]).unwrap();
        let k = TwoPointKernel::new(skew, 0.1).unwrap();
        let pi = apply_left(&[0.2, 0.8], &k.transition_matrix());
        assert!((pi[0] - 0.2).abs() < 1e-15 && (pi[1] - 0.8).abs() < 1e-15);
        let mut rng = RngStream::new(1, 0);
        let mut x = StateVector(vec![0.0]);
        let mut counts = [0u64; 2];
        for _ in 0..100_000 {
            x = k.step(&x, &mut rng).unwrap();
            counts[skew.index(x[0]).unwrap()] += 1;
        }
        assert!((counts[1] as f64 / 1e5 - 0.8).abs() < 0.02);
        assert!(k.step(&StateVector(vec![1.0]), &mut rng).is_err());
        assert!(TwoPointKernel::new(skew, 2.0).is_err());
    }

    fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, n)
    }

    proptest! {
        #[test]
        fn five_state_detailed_balance((a, b) in (weights(5), weights(5))) {
            let t = DiscreteTarget::from_weights(&a).unwrap();
            let f = DiscreteTarget::from_weights(&b).unwrap();
            let p = discrete_transition_oracle(&t, &f).unwrap();
            for row in &p {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            prop_assert!(detailed_balance_error(t.probs(), &p) < 1e-12);
            let s = stationary_distribution(&p);
            for (x, y) in s.iter().zip(t.probs()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
