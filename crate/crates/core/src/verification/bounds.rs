//! Sampled evaluators of the bound functions `f0, f1, g0, g1, h` and `delta_K`.
//!
//! Extremes over `x` are taken on a uniform periodic grid, suprema over `p`
//! on `p = 0` plus a log-spaced radial grid along a fixed set of directions.
//! Inverses are computed by bisection in `log m`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::sampling::torus_grid;
use crate::models::Model;
use crate::reformulation::{invert_h, InversionError};

const LOG_M_MIN: f64 = -690.0;
const LOG_M_MAX: f64 = 690.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("{map} is not defined at {value}: argument outside the range of the map")]
    Range { map: String, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundConfig {
    /// Grid points per spatial axis for extremes over `x`.
    pub x_samples: usize,
    /// Number of log-spaced radii for the `p`-supremum.
    pub p_radii: usize,
    pub p_radius_min: f64,
    pub p_radius_max: f64,
}

impl BoundConfig {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            x_samples: if dim == 1 { 64 } else { 16 },
            p_radii: 64,
            p_radius_min: 1e-3,
            p_radius_max: 1e3,
        }
    }
}

/// `h(s)` together with a flag for the degenerate (empty-set) case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HValue {
    pub value: f64,
    pub degenerate: bool,
}

pub struct BoundFunctions<'a> {
    model: &'a dyn Model,
    xs: Vec<Vec<f64>>,
    ps: Vec<Vec<f64>>,
}

/// Evaluators with the default sampling for the model's dimension.
pub fn bound_functions(model: &dyn Model) -> BoundFunctions<'_> {
    BoundFunctions::new(model, &BoundConfig::for_dim(model.dim()))
}

fn directions(dim: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    (0..8)
        .map(|k| {
            let a = std::f64::consts::PI * k as f64 / 4.0;
            vec![a.cos(), a.sin()]
        })
        .collect()
}

/// Root of the increasing map `f` at level `y` by bisection in `log m`.
fn increasing_inverse(f: impl Fn(f64) -> f64, y: f64, name: &str) -> Result<f64, BoundError> {
    let range = || BoundError::Range {
        map: name.to_string(),
        value: y,
    };
    if !y.is_finite() {
        return Err(range());
    }
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    if f(1.0) < y {
        while f(hi.exp()) < y {
            lo = hi;
            hi = if hi < 1.0 { 1.0 } else { 2.0 * hi };
            if hi > LOG_M_MAX {
                return Err(range());
            }
        }
    } else {
        while f(lo.exp()) >= y {
            hi = lo;
            lo = if lo > -1.0 { -1.0 } else { 2.0 * lo };
            if lo < LOG_M_MIN {
                return Err(range());
            }
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo < 1e-15 {
            break;
        }
        if f(mid.exp()) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

impl<'a> BoundFunctions<'a> {
    pub fn new(model: &'a dyn Model, cfg: &BoundConfig) -> Self {
        let dim = model.dim();
        let xs = torus_grid(dim, cfg.x_samples.max(1));
        let mut ps = vec![vec![0.0; dim]];
        let n = cfg.p_radii.max(1);
        let ratio = (cfg.p_radius_max / cfg.p_radius_min).ln();
        for k in 0..n {
            let r = cfg.p_radius_min * (ratio * k as f64 / (n.max(2) - 1) as f64).exp();
            for dir in directions(dim) {
                ps.push(dir.iter().map(|c| r * c).collect());
            }
        }
        Self { model, xs, ps }
    }

    pub fn x_samples(&self) -> &[Vec<f64>] {
        &self.xs
    }

    fn over_x(&self, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        self.xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            let v = f(x);
            (lo.min(v), hi.max(v))
        })
    }

    /// `min_x -H(x, 0, m)`.
    pub fn f0(&self, m: f64) -> f64 {
        let zero = vec![0.0; self.model.dim()];
        self.over_x(|x| -self.model.hamiltonian(x, &zero, m)).0
    }

    /// `max_x -H(x, 0, m)`.
    pub fn f1(&self, m: f64) -> f64 {
        let zero = vec![0.0; self.model.dim()];
        self.over_x(|x| -self.model.hamiltonian(x, &zero, m)).1
    }

    pub fn g0(&self, m: f64) -> f64 {
        self.over_x(|x| self.model.g_stack(x, m).g).0
    }

    pub fn g1(&self, m: f64) -> f64 {
        self.over_x(|x| self.model.g_stack(x, m).g).1
    }

    pub fn f0_inv(&self, y: f64) -> Result<f64, BoundError> {
        increasing_inverse(|m| self.f0(m), y, "f0^-1")
    }

    pub fn f1_inv(&self, y: f64) -> Result<f64, BoundError> {
        increasing_inverse(|m| self.f1(m), y, "f1^-1")
    }

    pub fn g0_inv(&self, y: f64) -> Result<f64, BoundError> {
        increasing_inverse(|m| self.g0(m), y, "g0^-1")
    }

    pub fn g1_inv(&self, y: f64) -> Result<f64, BoundError> {
        increasing_inverse(|m| self.g1(m), y, "g1^-1")
    }

    /// `sup_{x,p} H(x,p,m) - C0 psi(m) |p|^gamma` over the samples.
    pub fn growth_sup(&self, m: f64) -> f64 {
        let c = self.model.constants();
        let weight = c.c0 * c.psi(m);
        self.xs
            .par_iter()
            .map(|x| {
                self.ps.iter().fold(f64::NEG_INFINITY, |acc, p| {
                    let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                    acc.max(self.model.hamiltonian(x, p, m) - weight * r.powf(c.gamma))
                })
            })
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }

    /// `h(s) = sup{m > 0 : growth_sup(m) >= -s}`.
    pub fn h(&self, s: f64) -> HValue {
        let holds = |log_m: f64| self.growth_sup(log_m.exp()) >= -s;
        let (mut lo, mut hi);
        if holds(0.0) {
            lo = 0.0;
            hi = 1.0;
            while holds(hi) {
                lo = hi;
                hi *= 2.0;
                if hi > LOG_M_MAX {
                    return HValue {
                        value: f64::INFINITY,
                        degenerate: true,
                    };
                }
            }
        } else {
            hi = 0.0;
            lo = -1.0;
            while !holds(lo) {
                hi = lo;
                lo *= 2.0;
                if lo < LOG_M_MIN {
                    return HValue {
                        value: 0.0,
                        degenerate: true,
                    };
                }
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo < 1e-15 {
                break;
            }
            if holds(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        HValue {
            value: (0.5 * (lo + hi)).exp(),
            degenerate: false,
        }
    }

    /// `inf_{x,p} H^{-1}(x, p, K)`. Points where the inverse overflows are
    /// skipped; an underflow yields `0`.
    pub fn delta_k(&self, k: f64) -> f64 {
        self.xs
            .par_iter()
            .map(|x| {
                self.ps.iter().fold(f64::INFINITY, |acc, p| match invert_h(self.model, x, p, k, None) {
                    Ok(m) => acc.min(m),
                    Err(InversionError::DensityUnderflow { .. }) => 0.0,
                    Err(_) => acc,
                })
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// Lower and upper `u` bounds at time `t` for the constant `c`:
    /// `g0(f1^-1(-c)) - c (e^{cT} - e^{ct})` and `g1(f0^-1(c)) + c (e^{cT} - e^{ct})`.
    pub fn u_bounds(&self, c: f64, horizon: f64, t: f64) -> Result<(f64, f64), BoundError> {
        let growth = c * ((c * horizon).exp() - (c * t).exp());
        let lower = self.g0(self.f1_inv(-c)?) - growth;
        let upper = self.g1(self.f0_inv(c)?) + growth;
        Ok((lower, upper))
    }

    /// `[g1^-1 g0 f1^-1(-c), g0^-1 g1 f0^-1(c)]`.
    pub fn terminal_density_bounds(&self, c: f64) -> Result<(f64, f64), BoundError> {
        let lower = self.g1_inv(self.g0(self.f1_inv(-c)?))?;
        let upper = self.g0_inv(self.g1(self.f0_inv(c)?))?;
        Ok((lower, upper))
    }
}
