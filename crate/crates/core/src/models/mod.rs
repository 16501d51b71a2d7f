//! Model interface: Hamiltonian `H`, flux `B`, terminal cost `g` and initial
//! density `m0`, each with the analytic derivative stack consumed by the
//! reformulated operator and its linearization.
//!
//! Every evaluator is a pure function of its arguments, so a model can be
//! shared between rayon workers behind an `Arc`.

mod builtin;
mod selfcheck;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use builtin::{CommonParams, Congestion, Monotone, Potential, SeparatedPower, Sql};
pub use selfcheck::{fd_self_check, SelfCheckReport};

/// Densities below this value are rejected instead of clamped.
pub const MIN_DENSITY: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid structural constants: {0}")]
    InvalidConstants(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("evaluator `{evaluator}` is not finite at x={x:?}, p={p:?}, m={m}")]
    NonFinite {
        evaluator: &'static str,
        x: Vec<f64>,
        p: Vec<f64>,
        m: f64,
    },
    #[error("density m={m} is below the admissible floor {MIN_DENSITY}")]
    DensityTooSmall { m: f64 },
}

/// Scalar function of the density, shared between threads.
pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Structural constants `C0, gamma, gamma1, gamma2` together with the
/// growth weight `psi` and the slack function `Cbar`.
#[derive(Clone)]
pub struct ModelConstants {
    pub c0: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    psi: DensityFn,
    cbar: DensityFn,
}

impl ModelConstants {
    pub fn new(
        c0: f64,
        gamma: f64,
        gamma1: f64,
        gamma2: f64,
        psi: DensityFn,
        cbar: DensityFn,
    ) -> Result<Self, ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConstants(msg));
        if !(c0 > 0.0 && c0.is_finite()) {
            return bad(format!("C0 must be positive, got {c0}"));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            return bad(format!("gamma must exceed 1, got {gamma}"));
        }
        if !(gamma1 >= 0.0) {
            return bad(format!("gamma1 must be non-negative, got {gamma1}"));
        }
        if !(gamma2 <= gamma1 && gamma1 <= gamma) {
            return bad(format!(
                "need gamma2 <= gamma1 <= gamma, got {gamma2}, {gamma1}, {gamma}"
            ));
        }
        if !(gamma2 < 2.0 * gamma1 - gamma + 2.0) {
            return bad(format!(
                "exponent condition gamma2 < 2 gamma1 - gamma + 2 fails: {gamma2} >= {}",
                2.0 * gamma1 - gamma + 2.0
            ));
        }
        let consts = Self {
            c0,
            gamma,
            gamma1,
            gamma2,
            psi,
            cbar,
        };
        // psi must be positive and non-increasing on a sampled log grid.
        let grid: Vec<f64> = (-40..=40).map(|k| 10f64.powf(k as f64 * 0.3)).collect();
        let mut prev = f64::INFINITY;
        for &m in &grid {
            let v = consts.psi(m);
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("psi({m}) = {v} is not a positive number"));
            }
            if v > prev * (1.0 + 1e-12) {
                return bad(format!("psi is increasing near m = {m}"));
            }
            prev = v;
            let cb = consts.cbar(m);
            if !(cb > 0.0 && cb.is_finite()) {
                return bad(format!("Cbar({m}) = {cb} is not a positive number"));
            }
        }
        if gamma1 < gamma && consts.psi_tail_infimum() <= 1e-8 {
            return bad("gamma1 < gamma requires lim psi(m) > 0 as m -> infinity".into());
        }
        Ok(consts)
    }

    pub fn psi(&self, m: f64) -> f64 {
        (self.psi)(m)
    }

    pub fn cbar(&self, m: f64) -> f64 {
        (self.cbar)(m)
    }

    /// Smallest sampled value of `psi` over large densities.
    pub fn psi_tail_infimum(&self) -> f64 {
        (0..=24)
            .map(|k| self.psi(10f64.powi(k / 2)))
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Debug for ModelConstants {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelConstants")
            .field("c0", &self.c0)
            .field("gamma", &self.gamma)
            .field("gamma1", &self.gamma1)
            .field("gamma2", &self.gamma2)
            .finish_non_exhaustive()
    }
}

/// Dense rank-3 array `t[i][j][k]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dim: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.dim + j) * self.dim + k] = v;
    }

    pub fn scale(mut self, factor: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// `a * self + b * other`.
    pub fn blend(&self, a: f64, other: &Tensor3, b: f64) -> Self {
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// Contract the last index with `v`: `(i, j) -> sum_k t[i][j][k] v[k]`.
    pub fn contract_last(&self, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            (0..self.dim).map(|k| self.get(i, j, k) * v[k]).sum()
        })
    }

    /// Matrix slice with the middle index fixed: `(i, k) -> t[i][j][k]`.
    pub fn slice_middle(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, k| self.get(i, j, k))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Hamiltonian and its derivatives at one `(x, p, m)`.
///
/// Mixed matrices follow the first-index-first convention:
/// `h_xp[(i, j)] = d^2 H / dx_i dp_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct HStack {
    pub h: f64,
    pub h_p: DVector<f64>,
    pub h_m: f64,
    pub h_pp: DMatrix<f64>,
    pub h_xp: DMatrix<f64>,
    pub h_x: DVector<f64>,
    pub h_mm: f64,
    pub h_pm: DVector<f64>,
    pub h_xm: DVector<f64>,
    pub h_xx: DMatrix<f64>,
}

/// Flux and its derivatives at one `(x, p, m)`.
///
/// `b_p[(i, j)] = dB_i/dp_j`, `b_x[(i, j)] = dB_i/dx_j`,
/// `b_xm[(i, j)] = d^2 B_i / dx_j dm`, and the rank-3 arrays are
/// `b_pp[i][j][k] = d^2 B_i / dp_j dp_k`, `b_xp[i][j][k] = d^2 B_i / dx_j dp_k`,
/// `b_xx[i][j][k] = d^2 B_i / dx_j dx_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BStack {
    pub b: DVector<f64>,
    pub b_m: DVector<f64>,
    pub b_p: DMatrix<f64>,
    pub b_pm: DMatrix<f64>,
    pub b_mm: DVector<f64>,
    pub b_x: DMatrix<f64>,
    pub div_x_b: f64,
    pub b_xm: DMatrix<f64>,
    pub b_pp: Tensor3,
    pub b_xp: Tensor3,
    pub b_xx: Tensor3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GStack {
    pub g: f64,
    pub g_m: f64,
    pub g_x: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct M0Stack {
    pub m0: f64,
    pub m0_x: DVector<f64>,
}

/// A model triple `(H, B, g)` together with the initial density `m0`.
pub trait Model: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Spatial dimension `d`.
    fn dim(&self) -> usize;

    fn constants(&self) -> &ModelConstants;

    /// `H(x, p, m)` alone; the hot path of the density inversion.
    fn hamiltonian(&self, x: &[f64], p: &[f64], m: f64) -> f64;

    /// `H_m(x, p, m)` alone.
    fn hamiltonian_m(&self, x: &[f64], p: &[f64], m: f64) -> f64;

    fn h_stack(&self, x: &[f64], p: &[f64], m: f64) -> HStack;

    fn b_stack(&self, x: &[f64], p: &[f64], m: f64) -> BStack;

    fn g_stack(&self, x: &[f64], m: f64) -> GStack;

    fn m0_stack(&self, x: &[f64]) -> M0Stack;

    /// Closed-form solution of `H(x, p, m) = s` for `m`, when one is known.
    fn closed_form_inverse(&self, _x: &[f64], _p: &[f64], _s: f64) -> Option<f64> {
        None
    }
}

/// Shared handle used throughout the solver.
pub type ModelRef = Arc<dyn Model>;

/// One evaluation of every `H` and `B` symbol at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointStack {
    pub h: HStack,
    pub b: BStack,
}

fn vec_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn mat_finite(v: &DMatrix<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Evaluate the full `H`/`B` derivative record, rejecting non-finite values.
pub fn eval_stack(model: &dyn Model, x: &[f64], p: &[f64], m: f64) -> Result<PointStack, ModelError> {
    if !(m >= MIN_DENSITY) {
        return Err(ModelError::DensityTooSmall { m });
    }
    let h = model.h_stack(x, p, m);
    let b = model.b_stack(x, p, m);
    let checks: [(&'static str, bool); 21] = [
        ("H", h.h.is_finite()),
        ("D_pH", vec_finite(&h.h_p)),
        ("H_m", h.h_m.is_finite()),
        ("D2_ppH", mat_finite(&h.h_pp)),
        ("D2_xpH", mat_finite(&h.h_xp)),
        ("D_xH", vec_finite(&h.h_x)),
        ("H_mm", h.h_mm.is_finite()),
        ("D_pH_m", vec_finite(&h.h_pm)),
        ("D_xH_m", vec_finite(&h.h_xm)),
        ("D2_xxH", mat_finite(&h.h_xx)),
        ("B", vec_finite(&b.b)),
        ("B_m", vec_finite(&b.b_m)),
        ("D_pB", mat_finite(&b.b_p)),
        ("D_pB_m", mat_finite(&b.b_pm)),
        ("B_mm", vec_finite(&b.b_mm)),
        ("D_xB", mat_finite(&b.b_x) && b.div_x_b.is_finite()),
        ("D_xB_m", mat_finite(&b.b_xm)),
        ("D2_ppB", b.b_pp.is_finite()),
        ("D2_xpB", b.b_xp.is_finite()),
        ("D2_xxB", b.b_xx.is_finite()),
        ("div_xB", b.div_x_b.is_finite()),
    ];
    if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
        return Err(ModelError::NonFinite {
            evaluator: name,
            x: x.to_vec(),
            p: p.to_vec(),
            m,
        });
    }
    Ok(PointStack { h, b })
}
