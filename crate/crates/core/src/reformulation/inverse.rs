//! Inversion of the Hamiltonian in the density variable.
//!
//! `m -> H(x, p, m)` is strictly decreasing, so a bracket always brackets a
//! unique root. The bracket is grown geometrically from a warm start, closed
//! by bisection and finished with a few Newton steps on `H_m`.

use thiserror::Error;

use crate::models::{Model, MIN_DENSITY};

const MAX_EXPANSIONS: usize = 200;
const BISECTION_REL_WIDTH: f64 = 1e-13;
const NEWTON_POLISH_STEPS: usize = 3;

/// Acceptance threshold `|H(x, p, m) - s| <= INVERSION_TOL (1 + |s|)`.
pub const INVERSION_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InversionError {
    /// The bracket could not be grown in the given direction; the model does
    /// not blow up (as m -> 0) or decay (as m -> infinity) fast enough here.
    #[error("no density solves H(x,p,m) = {s} at x={x:?}, p={p:?}: bracket expansion toward m {direction} failed")]
    Coercivity {
        x: Vec<f64>,
        p: Vec<f64>,
        s: f64,
        direction: &'static str,
    },
    #[error("inverted density m={m} at x={x:?}, p={p:?}, s={s} is below the admissible floor")]
    DensityUnderflow { x: Vec<f64>, p: Vec<f64>, s: f64, m: f64 },
    #[error("non-finite inversion input or output at x={x:?}, p={p:?}, s={s}")]
    NonFinite { x: Vec<f64>, p: Vec<f64>, s: f64 },
}

impl InversionError {
    fn coercivity(x: &[f64], p: &[f64], s: f64, direction: &'static str) -> Self {
        Self::Coercivity {
            x: x.to_vec(),
            p: p.to_vec(),
            s,
            direction,
        }
    }
}

/// `H^{-1}(x, p, s)`: the closed form when the model registers one, the
/// numeric path otherwise. `hint` seeds the numeric bracket.
pub fn invert_h(model: &dyn Model, x: &[f64], p: &[f64], s: f64, hint: Option<f64>) -> Result<f64, InversionError> {
    if let Some(m) = model.closed_form_inverse(x, p, s) {
        return check_density(x, p, s, m);
    }
    invert_h_numeric(model, x, p, s, hint)
}

fn check_density(x: &[f64], p: &[f64], s: f64, m: f64) -> Result<f64, InversionError> {
    if m.is_nan() || !s.is_finite() {
        return Err(InversionError::NonFinite {
            x: x.to_vec(),
            p: p.to_vec(),
            s,
        });
    }
    if m.is_infinite() {
        return Err(InversionError::coercivity(x, p, s, "infinity"));
    }
    if m < MIN_DENSITY {
        return Err(InversionError::DensityUnderflow {
            x: x.to_vec(),
            p: p.to_vec(),
            s,
            m,
        });
    }
    Ok(m)
}

/// Bracketing bisection with Newton polish; independent of any closed form.
pub fn invert_h_numeric(
    model: &dyn Model,
    x: &[f64],
    p: &[f64],
    s: f64,
    hint: Option<f64>,
) -> Result<f64, InversionError> {
    if !s.is_finite() || x.iter().chain(p).any(|v| !v.is_finite()) {
        return Err(InversionError::NonFinite {
            x: x.to_vec(),
            p: p.to_vec(),
            s,
        });
    }
    let f = |m: f64| model.hamiltonian(x, p, m) - s;
    let start = match hint {
        Some(h) if h.is_finite() && h > 0.0 => h,
        _ => 1.0,
    };
    let f_start = f(start);
    if f_start == 0.0 {
        return check_density(x, p, s, start);
    }
    // f is decreasing: f > 0 means the root lies at larger m.
    let (mut lo, mut hi) = if f_start > 0.0 {
        let mut lo = start;
        let mut hi = 2.0 * start;
        let mut found = false;
        for _ in 0..MAX_EXPANSIONS {
            let v = f(hi);
            if v.is_nan() {
                break;
            }
            if v <= 0.0 {
                found = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        if !found {
            return Err(InversionError::coercivity(x, p, s, "infinity"));
        }
        (lo, hi)
    } else {
        let mut hi = start;
        let mut lo = 0.5 * start;
        let mut found = false;
        for _ in 0..MAX_EXPANSIONS {
            let v = f(lo);
            if v.is_nan() {
                break;
            }
            if v >= 0.0 {
                found = true;
                break;
            }
            hi = lo;
            lo *= 0.5;
        }
        if !found {
            return Err(InversionError::coercivity(x, p, s, "zero"));
        }
        (lo, hi)
    };

    while hi - lo > BISECTION_REL_WIDTH * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            hi = mid;
        }
    }

    let mut m = 0.5 * (lo + hi);
    for _ in 0..NEWTON_POLISH_STEPS {
        let r = f(m);
        if r == 0.0 {
            break;
        }
        let slope = model.hamiltonian_m(x, p, m);
        if !(slope < 0.0) {
            break;
        }
        let next = m - r / slope;
        // Stay inside the certified bracket, widened by a few ulps.
        if !(next >= lo * (1.0 - 1e-12) && next <= hi * (1.0 + 1e-12)) {
            break;
        }
        if f(next).abs() > r.abs() {
            break;
        }
        m = next;
    }
    check_density(x, p, s, m)
}
