//! Observed order of accuracy from solves on nested grids.

use serde::{Serialize, Serializer};

use super::certificate::mfg_residual;
use super::VerificationError;
use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::models::ModelRef;
use crate::solver::{continuation_solve, ContinuationConfig};

/// Differences below this on both pairs mean the scheme is exact.
pub const EXACT_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Order {
    Value(f64),
    Exact,
}

impl Order {
    fn from_pair(coarse: f64, fine: f64) -> Self {
        if coarse < EXACT_THRESHOLD && fine < EXACT_THRESHOLD {
            Order::Exact
        } else {
            Order::Value((coarse / fine).log2())
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Order::Value(v) => Some(v),
            Order::Exact => None,
        }
    }

    /// Exact, or within `[lo, hi]`.
    pub fn within(self, lo: f64, hi: f64) -> bool {
        match self {
            Order::Exact => true,
            Order::Value(v) => v >= lo && v <= hi,
        }
    }
}

impl Serialize for Order {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Order::Value(v) => s.serialize_f64(*v),
            Order::Exact => s.serialize_str("exact"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSummary {
    pub nx: usize,
    pub nt: usize,
    pub continuity_norm: f64,
    pub hjb_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub model: String,
    pub grids: Vec<GridSummary>,
    /// `max |u_h - u_{h/2}|` over the coarsest-grid nodes, one per consecutive pair.
    pub u_differences: Vec<f64>,
    pub m_differences: Vec<f64>,
    pub u_orders: Vec<Order>,
    pub m_orders: Vec<Order>,
    /// Ratio of consecutive continuity residuals.
    pub continuity_factors: Vec<f64>,
}

impl ConvergenceReport {
    /// Order from the finest pair of differences.
    pub fn order_u(&self) -> Order {
        *self.u_orders.last().expect("at least three grids")
    }

    pub fn order_m(&self) -> Order {
        *self.m_orders.last().expect("at least three grids")
    }
}

fn diff_on_coarsest(coarsest: &SpaceTimeGrid, a: (&SpaceTimeGrid, &DiscreteField), b: (&SpaceTimeGrid, &DiscreteField)) -> f64 {
    (0..coarsest.len())
        .map(|n| {
            let ia = coarsest.embed_in(n, a.0).expect("nested grids");
            let ib = coarsest.embed_in(n, b.0).expect("nested grids");
            (a.1[ia] - b.1[ib]).abs()
        })
        .fold(0.0, f64::max)
}

/// Continuation solves on each grid and order estimates from consecutive differences.
pub fn self_convergence(
    model: &ModelRef,
    grids: &[SpaceTimeGrid],
    cfg: &ContinuationConfig,
) -> Result<ConvergenceReport, VerificationError> {
    if grids.len() < 3 {
        return Err(VerificationError::Input(format!("need at least three grids, got {}", grids.len())));
    }
    for w in grids.windows(2) {
        if w[0].refined() != w[1] {
            return Err(VerificationError::Input(format!(
                "grids must double both resolutions: {}x{} then {}x{}",
                w[0].nx(),
                w[0].nt(),
                w[1].nx(),
                w[1].nt()
            )));
        }
    }
    let mut solutions = Vec::with_capacity(grids.len());
    let mut summaries = Vec::with_capacity(grids.len());
    for grid in grids {
        let res = continuation_solve(model, grid, cfg)?;
        let r = mfg_residual(model.as_ref(), grid, &res.u, &res.density)?;
        log::info!(
            "grid {}x{}: continuity residual {:e}",
            grid.nx(),
            grid.nt(),
            r.continuity_norm
        );
        summaries.push(GridSummary {
            nx: grid.nx(),
            nt: grid.nt(),
            continuity_norm: r.continuity_norm,
            hjb_norm: r.hjb_norm,
        });
        solutions.push((res.u, res.density));
    }
    let coarsest = &grids[0];
    let mut u_differences = vec![];
    let mut m_differences = vec![];
    for i in 0..grids.len() - 1 {
        let (ua, ma) = &solutions[i];
        let (ub, mb) = &solutions[i + 1];
        u_differences.push(diff_on_coarsest(coarsest, (&grids[i], ua), (&grids[i + 1], ub)));
        m_differences.push(diff_on_coarsest(coarsest, (&grids[i], ma), (&grids[i + 1], mb)));
    }
    let orders = |d: &[f64]| d.windows(2).map(|w| Order::from_pair(w[0], w[1])).collect::<Vec<_>>();
    let continuity_factors = summaries
        .windows(2)
        .map(|w| w[0].continuity_norm / w[1].continuity_norm)
        .collect();
    Ok(ConvergenceReport {
        model: model.name().to_string(),
        grids: summaries,
        u_orders: orders(&u_differences),
        m_orders: orders(&m_differences),
        u_differences,
        m_differences,
        continuity_factors,
    })
}
