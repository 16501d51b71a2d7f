//! Halton low-discrepancy points and the sample box for the checker.

use serde::{Deserialize, Serialize};

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in base `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut acc = 0.0;
    while index > 0 {
        acc += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    acc
}

/// Point `index` of the Halton sequence in `[0, 1)^dim`, skipping index 0.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "Halton dimension {dim} exceeds {}", PRIMES.len());
    (0..dim).map(|k| radical_inverse(index as u64 + 1, PRIMES[k])).collect()
}

/// Sampling ranges for `(x, p, m)`; `x` always covers the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    /// Each component of `p` is drawn from `[-p_max, p_max]`.
    pub p_max: f64,
    pub m_min: f64,
    pub m_max: f64,
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            p_max: 10.0,
            m_min: 0.05,
            m_max: 20.0,
        }
    }
}

impl SampleBox {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.p_max >= 0.0 && self.p_max.is_finite()) {
            return Err(format!("p_max must be non-negative, got {}", self.p_max));
        }
        if !(self.m_min > 0.0 && self.m_min < self.m_max && self.m_max.is_finite()) {
            return Err(format!(
                "need 0 < m_min < m_max, got [{}, {}]",
                self.m_min, self.m_max
            ));
        }
        Ok(())
    }

    /// `(x, p, m)` for Halton point `index`; `m` is log-uniform.
    pub fn point(&self, index: usize, dim: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let h = halton(index, 2 * dim + 1);
        let x = h[..dim].to_vec();
        let p = h[dim..2 * dim].iter().map(|u| (2.0 * u - 1.0) * self.p_max).collect();
        let (lo, hi) = (self.m_min.ln(), self.m_max.ln());
        let m = (lo + h[2 * dim] * (hi - lo)).exp();
        (x, p, m)
    }
}

/// Uniform periodic grid with `n` points per axis.
pub fn torus_grid(dim: usize, n: usize) -> Vec<Vec<f64>> {
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let i = k % n;
                    k /= n;
                    i as f64 / n as f64
                })
                .collect()
        })
        .collect()
}
