//! A-posteriori certificate for a computed pair `(u, m)`.

use rayon::prelude::*;
use serde::Serialize;

use super::bounds::{bound_functions, BoundFunctions, HValue};
use super::VerificationError;
use crate::discretization::{gradient_at, DiscreteField, SpaceTimeGrid};
use crate::models::Model;
use crate::reformulation::{boundary_n_gradient, ellipticity_gap, Face, GradientPoint, INVERSION_TOL};

/// Relative slack used when comparing a field against a bound.
const CONTAIN_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertifyOptions {
    /// Largest constant tried for the `u`/terminal-density bounds.
    pub search_cmax: f64,
    pub mass_tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            search_cmax: 10.0,
            mass_tol: 1e-2,
        }
    }
}

/// Bounds `g0 f1^-1(-C) - C(e^{CT} - e^{Ct}) <= u <= g1 f0^-1(C) + C(e^{CT} - e^{Ct})`
/// and the matching terminal density interval, at the smallest admissible `C`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UBoundsCheck {
    pub search_cmax: f64,
    /// Smallest `C` (rounded up to two decimals) for which both bounds hold.
    pub smallest_c: Option<f64>,
    pub u_min: f64,
    pub u_max: f64,
    /// Bound values at `t = 0` for `smallest_c`.
    pub u_lower_at_0: Option<f64>,
    pub u_upper_at_0: Option<f64>,
    pub terminal_m_min: f64,
    pub terminal_m_max: f64,
    pub terminal_m_lower: Option<f64>,
    pub terminal_m_upper: Option<f64>,
    pub holds: bool,
}

/// Global density interval `[delta_K, h(C1)]`, `K = ||Du||`,
/// `C1 = K + C0 psi(delta_K) ||D_x u||^gamma`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityIntervalCheck {
    pub k: f64,
    pub dx_u_norm: f64,
    pub c1: f64,
    pub delta_k: f64,
    pub h_c1: HValue,
    pub m_min: f64,
    pub m_max: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassCheck {
    pub drift: f64,
    pub tol: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositivityCheck {
    pub min_m: f64,
    pub holds: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MfgResidual {
    /// `max |-u_t + H(x, D_x u, m)|`.
    pub hjb_norm: f64,
    /// `max |m_t - div B(x, D_x u, m)|` over interior nodes, centered differences.
    pub continuity_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualCheck {
    #[serde(flatten)]
    pub norms: MfgResidual,
    pub hjb_limit: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EllipticityCheck {
    pub min_gap: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObliquenessCheck {
    /// Largest `dN/ds` on `t = 0`; must be negative.
    pub initial_max_ds: f64,
    /// Smallest `dN/ds` on `t = T`; must be positive.
    pub terminal_min_ds: f64,
    pub holds: bool,
}

/// Range of `u_t` in the interior against the boundary layers. Informational.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeDerivativeDiagnostic {
    pub interior_min: f64,
    pub interior_max: f64,
    pub boundary_min: f64,
    pub boundary_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateReport {
    pub model: String,
    pub u_bounds: UBoundsCheck,
    pub density_interval: DensityIntervalCheck,
    pub mass: MassCheck,
    pub positivity: PositivityCheck,
    pub residuals: ResidualCheck,
    pub ellipticity: EllipticityCheck,
    pub obliqueness: ObliquenessCheck,
    pub time_derivative: TimeDerivativeDiagnostic,
    pub all_pass: bool,
}

struct NodeData {
    p: Vec<f64>,
    s: f64,
}

fn node_data(grid: &SpaceTimeGrid, u: &DiscreteField) -> Vec<NodeData> {
    (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let (p, s) = gradient_at(grid, u, n);
            NodeData { p, s }
        })
        .collect()
}

fn check_len(grid: &SpaceTimeGrid, f: &DiscreteField, what: &str) -> Result<(), VerificationError> {
    if f.len() != grid.len() {
        return Err(VerificationError::Input(format!(
            "{what} has {} values, grid has {} nodes",
            f.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// HJB and continuity residuals of `(u, m)` in the original system.
pub fn mfg_residual(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    u: &DiscreteField,
    m: &DiscreteField,
) -> Result<MfgResidual, VerificationError> {
    check_len(grid, u, "u")?;
    check_len(grid, m, "m")?;
    let data = node_data(grid, u);
    let hjb_norm = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let x = grid.position(n);
            (-data[n].s + model.hamiltonian(&x, &data[n].p, m[n])).abs()
        })
        .reduce(|| 0.0, f64::max);
    let flux: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let x = grid.position(n);
            model.b_stack(&x, &data[n].p, m[n]).b.iter().copied().collect()
        })
        .collect();
    let (hx, ht) = (grid.hx(), grid.ht());
    let continuity_norm = (0..grid.len())
        .into_par_iter()
        .filter(|&n| grid.is_interior(n))
        .map(|n| {
            let m_t = (m[grid.shift_time(n, 1)] - m[grid.shift_time(n, -1)]) / (2.0 * ht);
            let div: f64 = (0..grid.dim())
                .map(|i| (flux[grid.shift_space(n, i, 1)][i] - flux[grid.shift_space(n, i, -1)][i]) / (2.0 * hx))
                .sum();
            (m_t - div).abs()
        })
        .reduce(|| 0.0, f64::max);
    Ok(MfgResidual {
        hjb_norm,
        continuity_norm,
    })
}

/// Whether the `u` bounds and the terminal density interval hold at `c`.
fn u_bounds_hold(
    bf: &BoundFunctions<'_>,
    grid: &SpaceTimeGrid,
    u: &DiscreteField,
    m: &DiscreteField,
    c: f64,
) -> Option<(f64, f64, f64, f64)> {
    let lower0 = bf.g0(bf.f1_inv(-c).ok()?);
    let upper0 = bf.g1(bf.f0_inv(c).ok()?);
    let horizon = grid.horizon();
    for k in 0..=grid.nt() {
        let t = k as f64 * grid.ht();
        let growth = c * ((c * horizon).exp() - (c * t).exp());
        let (lo, hi) = (lower0 - growth, upper0 + growth);
        let slack = CONTAIN_SLACK * (1.0 + lo.abs().max(hi.abs()));
        if grid.layer_nodes(k).any(|n| u[n] < lo - slack || u[n] > hi + slack) {
            return None;
        }
    }
    let (m_lo, m_hi) = bf.terminal_density_bounds(c).ok()?;
    if grid
        .layer_nodes(grid.nt())
        .any(|n| m[n] < m_lo * (1.0 - CONTAIN_SLACK) || m[n] > m_hi * (1.0 + CONTAIN_SLACK))
    {
        return None;
    }
    Some((lower0 - c * ((c * horizon).exp() - 1.0), upper0 + c * ((c * horizon).exp() - 1.0), m_lo, m_hi))
}

fn u_bounds_check(
    bf: &BoundFunctions<'_>,
    grid: &SpaceTimeGrid,
    u: &DiscreteField,
    m: &DiscreteField,
    cmax: f64,
) -> UBoundsCheck {
    let terminal = grid.layer_nodes(grid.nt());
    let (terminal_m_min, terminal_m_max) = terminal
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), n| (a.min(m[n]), b.max(m[n])));
    let (u_min, u_max) = u
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut check = UBoundsCheck {
        search_cmax: cmax,
        smallest_c: None,
        u_min,
        u_max,
        u_lower_at_0: None,
        u_upper_at_0: None,
        terminal_m_min,
        terminal_m_max,
        terminal_m_lower: None,
        terminal_m_upper: None,
        holds: false,
    };
    if u_bounds_hold(bf, grid, u, m, cmax).is_none() {
        return check;
    }
    let (mut lo, mut hi) = (0.0, cmax);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if u_bounds_hold(bf, grid, u, m, mid).is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut c = ((hi * 100.0).ceil() / 100.0).min(cmax);
    let values = match u_bounds_hold(bf, grid, u, m, c) {
        Some(v) => v,
        None => {
            c = cmax;
            u_bounds_hold(bf, grid, u, m, c).expect("holds at cmax")
        }
    };
    check.smallest_c = Some(c);
    check.u_lower_at_0 = Some(values.0);
    check.u_upper_at_0 = Some(values.1);
    check.terminal_m_lower = Some(values.2);
    check.terminal_m_upper = Some(values.3);
    check.holds = true;
    check
}

/// Check a computed `(u, m)` against the a-priori structure.
pub fn certify(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    u: &DiscreteField,
    m: &DiscreteField,
    opts: &CertifyOptions,
) -> Result<CertificateReport, VerificationError> {
    check_len(grid, u, "u")?;
    check_len(grid, m, "m")?;
    if model.dim() != grid.dim() {
        return Err(VerificationError::Input(format!(
            "model dimension {} does not match grid dimension {}",
            model.dim(),
            grid.dim()
        )));
    }
    let bf = bound_functions(model);
    let data = node_data(grid, u);
    let consts = model.constants();

    let u_bounds = u_bounds_check(&bf, grid, u, m, opts.search_cmax);

    let (m_min, m_max) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let k = data
        .iter()
        .map(|d| (d.p.iter().map(|v| v * v).sum::<f64>() + d.s * d.s).sqrt())
        .fold(0.0, f64::max);
    let dx_u_norm = data
        .iter()
        .map(|d| d.p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let delta_k = bf.delta_k(k);
    let c1 = k + consts.c0 * consts.psi(delta_k) * dx_u_norm.powf(consts.gamma);
    let h_c1 = bf.h(c1);
    let density_interval = DensityIntervalCheck {
        k,
        dx_u_norm,
        c1,
        delta_k,
        h_c1,
        m_min,
        m_max,
        holds: m_min >= delta_k * (1.0 - CONTAIN_SLACK) && m_max <= h_c1.value * (1.0 + CONTAIN_SLACK),
    };

    let drift = (0..=grid.nt())
        .map(|layer| {
            let nodes = grid.layer_nodes(layer);
            let count = nodes.len() as f64;
            (nodes.map(|n| m[n]).sum::<f64>() / count - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let mass = MassCheck {
        drift,
        tol: opts.mass_tol,
        holds: drift <= opts.mass_tol,
    };
    let positivity = PositivityCheck {
        min_m: m_min,
        holds: m_min > 0.0,
    };

    let norms = mfg_residual(model, grid, u, m)?;
    let s_max = data.iter().fold(0.0f64, |a, d| a.max(d.s.abs()));
    let hjb_limit = 10.0 * INVERSION_TOL * (1.0 + s_max);
    let residuals = ResidualCheck {
        norms,
        hjb_limit,
        holds: norms.hjb_norm <= hjb_limit,
    };

    let min_gap = (0..grid.len())
        .into_par_iter()
        .map(|n| ellipticity_gap(model, &grid.position(n), &data[n].p, m[n]).unwrap_or(f64::NAN))
        .reduce(|| f64::INFINITY, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.min(b) });
    let ellipticity = EllipticityCheck {
        min_gap,
        holds: min_gap > 0.0,
    };

    let oblique = |face: Face, layer: usize| -> Vec<f64> {
        grid.layer_nodes(layer)
            .into_par_iter()
            .map(|n| {
                let gp = GradientPoint::new(&grid.position(n), &data[n].p, data[n].s, u[n]);
                boundary_n_gradient(model, face, &gp, Some(m[n])).map_or(f64::NAN, |g| g.ds)
            })
            .collect()
    };
    let initial = oblique(Face::Initial, 0);
    let terminal = oblique(Face::Terminal, grid.nt());
    let initial_max_ds = initial.iter().fold(f64::NEG_INFINITY, |a, &v| if v.is_nan() { v } else { a.max(v) });
    let terminal_min_ds = terminal.iter().fold(f64::INFINITY, |a, &v| if v.is_nan() { v } else { a.min(v) });
    let obliqueness = ObliquenessCheck {
        initial_max_ds,
        terminal_min_ds,
        holds: initial_max_ds < 0.0 && terminal_min_ds > 0.0,
    };

    let mut td = TimeDerivativeDiagnostic {
        interior_min: f64::INFINITY,
        interior_max: f64::NEG_INFINITY,
        boundary_min: f64::INFINITY,
        boundary_max: f64::NEG_INFINITY,
    };
    for (n, d) in data.iter().enumerate() {
        if grid.is_interior(n) {
            td.interior_min = td.interior_min.min(d.s);
            td.interior_max = td.interior_max.max(d.s);
        } else {
            td.boundary_min = td.boundary_min.min(d.s);
            td.boundary_max = td.boundary_max.max(d.s);
        }
    }

    let all_pass = u_bounds.holds
        && density_interval.holds
        && mass.holds
        && positivity.holds
        && residuals.holds
        && ellipticity.holds
        && obliqueness.holds;
    Ok(CertificateReport {
        model: model.name().to_string(),
        u_bounds,
        density_interval,
        mass,
        positivity,
        residuals,
        ellipticity,
        obliqueness,
        time_derivative: td,
        all_pass,
    })
}
