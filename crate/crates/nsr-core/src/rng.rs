//! Counter-based deterministic random stream.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`, so replaying
//! a stream reproduces byte-identical sequences on any platform, and distinct
//! stream ids give independent sequences that can be consumed in parallel.
//!
//! The generator is a SplitMix64-style finalizer over a Weyl sequence:
//!
//! ```text
//! base    = mix(seed) + mix(stream_id ^ 0x5851F42D4C957F2D)
//! out(n)  = mix(base + n * 0x9E3779B97F4A7C15)        // n = draw counter
//! mix(z)  : z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!           z ^= z >> 27; z *= 0x94D049BB133111EB;
//!           z ^= z >> 31
//! ```
//!
//! All arithmetic is wrapping. `0x9E3779B97F4A7C15` is the 64-bit golden
//! ratio increment; the mixing constants are Stafford's "Mix13" used by
//! SplitMix64.

use crate::error::{NsrError, Result};
use crate::tensor::{Dtype, Tensor};

const GOLDEN: u64 = 0x9E3779B97F4A7C15;
const STREAM_SALT: u64 = 0x5851F42D4C957F2D;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RandStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
}

impl RandStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RandStream { seed, stream_id, counter: 0 }
    }

    /// Derive an independent child stream; the parent is not advanced.
    pub fn child(&self, id: u64) -> RandStream {
        RandStream::new(self.seed, mix(self.stream_id.wrapping_mul(GOLDEN) ^ id))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let base = mix(self.seed).wrapping_add(mix(self.stream_id ^ STREAM_SALT));
        let out = mix(base.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        out
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) {
            return Err(NsrError::Argument(format!(
                "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
            )));
        }
        Ok(lo + (hi - lo) * self.next_f64())
    }

    /// Standard Box-Muller; consumes exactly two uniform draws per value.
    pub fn normal(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) {
            return Err(NsrError::Argument(format!("normal sigma must be > 0, got {sigma}")));
        }
        let u1 = (self.next_f64()).max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        Ok(mu + sigma * r * (std::f64::consts::TAU * u2).cos())
    }

    /// -1.0 or +1.0 with equal probability.
    pub fn sign_bernoulli(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher-Yates shuffle of indices 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            idx.swap(i, j);
        }
        idx
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn uniform_tensor(&mut self, lo: f64, hi: f64, shape: &[usize], dtype: Dtype) -> Result<Tensor> {
        if !(lo < hi) {
            return Err(NsrError::Argument(format!(
                "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
            )));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * self.next_f64()).collect();
        Tensor::new(shape.to_vec(), data, dtype)
    }

    pub fn normal_tensor(&mut self, mu: f64, sigma: f64, shape: &[usize], dtype: Dtype) -> Result<Tensor> {
        if !(sigma > 0.0) {
            return Err(NsrError::Argument(format!("normal sigma must be > 0, got {sigma}")));
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.normal(mu, sigma)?);
        }
        Tensor::new(shape.to_vec(), data, dtype)
    }

    pub fn sign_tensor(&mut self, shape: &[usize], dtype: Dtype) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.sign_bernoulli()).collect();
        Tensor::new(shape.to_vec(), data, dtype)
    }
}
