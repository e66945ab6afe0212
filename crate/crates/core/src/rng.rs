//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`: the block
//! cipher Threefry-2x64 with 20 rounds encrypts the counter under a key built
//! from the seed and stream id. Child streams are derived by encrypting a
//! label, so per-chain streams never depend on how work is scheduled.

use rand_core::{impls, RngCore};
use rand_distr::{Distribution, StandardNormal};

const ROTATIONS: [u32; 8] = [16, 42, 12, 31, 16, 32, 24, 21];
const KS_PARITY: u64 = 0x1BD1_1BDA_A9FC_1A22;
const CHILD_TAG: u64 = 0x6368_696c_6420_7374;

/// Threefry-2x64-20 block function.
pub fn threefry2x64(key: [u64; 2], ctr: [u64; 2]) -> [u64; 2] {
    let ks = [key[0], key[1], KS_PARITY ^ key[0] ^ key[1]];
    let mut x0 = ctr[0].wrapping_add(ks[0]);
    let mut x1 = ctr[1].wrapping_add(ks[1]);
    for round in 0..20 {
        x0 = x0.wrapping_add(x1);
        x1 = x1.rotate_left(ROTATIONS[round % 8]) ^ x0;
        if round % 4 == 3 {
            let s = round / 4 + 1;
            x0 = x0.wrapping_add(ks[s % 3]);
            x1 = x1.wrapping_add(ks[(s + 1) % 3]).wrapping_add(s as u64);
        }
    }
    [x0, x1]
}

/// A single-owner random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    cached_block: u64,
    cache: [u64; 2],
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::at(seed, stream_id, 0)
    }

    /// Stream positioned at an arbitrary counter value.
    pub fn at(seed: u64, stream_id: u64, counter: u64) -> Self {
        let cache = threefry2x64([seed, stream_id], [0, 0]);
        RngStream { seed, stream_id, counter, cached_block: 0, cache }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Deterministic child stream; does not advance `self`.
    pub fn child(&self, label: u64) -> RngStream {
        let [a, b] = threefry2x64([self.seed, self.stream_id], [label, CHILD_TAG]);
        RngStream::new(a, b)
    }

    /// Child stream keyed by a label and the current counter, then advance.
    /// Successive calls give distinct children.
    pub fn split(&mut self) -> RngStream {
        let c = self.next_u64();
        self.child(c)
    }

    /// Uniform draw on [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on (0, 1), never exactly zero.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn normal_vec(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.normal()).collect()
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let block = self.counter >> 1;
        if block != self.cached_block {
            self.cache = threefry2x64([self.seed, self.stream_id], [block, 0]);
            self.cached_block = block;
        }
        let out = self.cache[(self.counter & 1) as usize];
        self.counter = self.counter.wrapping_add(1);
        out
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threefry_known_answer() {
        // Random123 known-answer vector for threefry2x64_20.
        assert_eq!(threefry2x64([0, 0], [0, 0]), [0xc2b6e3a8c2c69865, 0x6f81ed42f350084d]);
    }

    #[test]
    fn counter_determines_draw() {
        let mut a = RngStream::new(7, 3);
        let draws: Vec<u64> = (0..10).map(|_| a.next_u64()).collect();
        for (i, d) in draws.iter().enumerate() {
            let mut b = RngStream::at(7, 3, i as u64);
            assert_eq!(b.next_u64(), *d);
        }
    }

    #[test]
    fn children_are_stable_and_distinct() {
        let p = RngStream::new(1, 0);
        let mut c1 = p.child(5);
        let mut c2 = p.child(5);
        let mut c3 = p.child(6);
        let x = c1.next_u64();
        assert_eq!(x, c2.next_u64());
        assert_ne!(x, c3.next_u64());
        let mut q = p.clone();
        let s1 = q.split().next_u64();
        let s2 = q.split().next_u64();
        assert_ne!(s1, s2);
    }

    #[test]
    fn streams_uncorrelated() {
        let n = 100_000;
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.uniform() - 0.5;
            let y = b.uniform() - 0.5;
            sa += x;
            sb += y;
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let nf = n as f64;
        let cov = sab / nf - sa / nf * sb / nf;
        let corr = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
        // 4.5 standard errors of a null correlation.
        assert!(corr.abs() < 4.5 / nf.sqrt(), "corr {corr}");
        let lag_corr = {
            let mut c = RngStream::new(42, 2);
            let xs: Vec<f64> = (0..n).map(|_| c.uniform() - 0.5).collect();
            let num: f64 = xs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / nf;
            num / (1.0 / 12.0)
        };
        assert!(lag_corr.abs() < 4.5 / nf.sqrt());
    }

    #[test]
    fn uniform_bounds() {
        let mut r = RngStream::new(0, 0);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            let v = r.uniform_open();
            assert!(v > 0.0 && v < 1.0);
            assert!(r.below(3) < 3);
        }
    }
}
