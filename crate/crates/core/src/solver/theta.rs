//! The continuation family connecting a model to its x-frozen version.

use std::sync::Arc;

use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::models::{BStack, GStack, HStack, M0Stack, Model, ModelConstants, ModelRef};

/// `H^θ = θ H(x,p,m) + (1-θ) H(0,p,m)`, likewise `B`;
/// `g^θ = θ g + (1-θ) m`; `m0^θ = θ m0 + 1 - θ`.
#[derive(Debug)]
pub struct ThetaModel {
    inner: ModelRef,
    theta: f64,
    origin: Vec<f64>,
    name: String,
}

impl ThetaModel {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn inner(&self) -> &ModelRef {
        &self.inner
    }

    fn blend(&self, a: f64, b: f64) -> f64 {
        self.theta * a + (1.0 - self.theta) * b
    }
}

/// Member `θ` of the family. `θ = 1` hands back `model` itself.
pub fn theta_model(model: &ModelRef, theta: f64) -> ModelRef {
    assert!((0.0..=1.0).contains(&theta), "theta must lie in [0, 1], got {theta}");
    if theta == 1.0 {
        return Arc::clone(model);
    }
    Arc::new(ThetaModel {
        inner: Arc::clone(model),
        theta,
        origin: vec![0.0; model.dim()],
        name: format!("{}@theta={theta}", model.name()),
    })
}

impl Model for ThetaModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn constants(&self) -> &ModelConstants {
        self.inner.constants()
    }

    fn hamiltonian(&self, x: &[f64], p: &[f64], m: f64) -> f64 {
        self.blend(self.inner.hamiltonian(x, p, m), self.inner.hamiltonian(&self.origin, p, m))
    }

    fn hamiltonian_m(&self, x: &[f64], p: &[f64], m: f64) -> f64 {
        self.blend(
            self.inner.hamiltonian_m(x, p, m),
            self.inner.hamiltonian_m(&self.origin, p, m),
        )
    }

    fn h_stack(&self, x: &[f64], p: &[f64], m: f64) -> HStack {
        let (t, s) = (self.theta, 1.0 - self.theta);
        let a = self.inner.h_stack(x, p, m);
        let o = self.inner.h_stack(&self.origin, p, m);
        HStack {
            h: t * a.h + s * o.h,
            h_p: a.h_p * t + o.h_p * s,
            h_m: t * a.h_m + s * o.h_m,
            h_pp: a.h_pp * t + o.h_pp * s,
            h_xp: a.h_xp * t,
            h_x: a.h_x * t,
            h_mm: t * a.h_mm + s * o.h_mm,
            h_pm: a.h_pm * t + o.h_pm * s,
            h_xm: a.h_xm * t,
            h_xx: a.h_xx * t,
        }
    }

    fn b_stack(&self, x: &[f64], p: &[f64], m: f64) -> BStack {
        let (t, s) = (self.theta, 1.0 - self.theta);
        let a = self.inner.b_stack(x, p, m);
        let o = self.inner.b_stack(&self.origin, p, m);
        BStack {
            b: a.b * t + o.b * s,
            b_m: a.b_m * t + o.b_m * s,
            b_p: a.b_p * t + o.b_p * s,
            b_pm: a.b_pm * t + o.b_pm * s,
            b_mm: a.b_mm * t + o.b_mm * s,
            b_x: a.b_x * t,
            div_x_b: t * a.div_x_b,
            b_xm: a.b_xm * t,
            b_pp: a.b_pp.blend(t, &o.b_pp, s),
            b_xp: a.b_xp.scale(t),
            b_xx: a.b_xx.scale(t),
        }
    }

    fn g_stack(&self, x: &[f64], m: f64) -> GStack {
        let a = self.inner.g_stack(x, m);
        GStack {
            g: self.blend(a.g, m),
            g_m: self.blend(a.g_m, 1.0),
            g_x: a.g_x * self.theta,
        }
    }

    fn m0_stack(&self, x: &[f64]) -> M0Stack {
        let a = self.inner.m0_stack(x);
        M0Stack {
            m0: self.blend(a.m0, 1.0),
            m0_x: a.m0_x * self.theta,
        }
    }
}

/// `u = (t - T) H(0, 0, 1) + 1`, the exact solution of the `θ = 0` member.
pub fn base_solution(model: &dyn Model, grid: &SpaceTimeGrid) -> DiscreteField {
    let origin = vec![0.0; model.dim()];
    let h0 = model.hamiltonian(&origin, &origin, 1.0);
    let horizon = grid.horizon();
    DiscreteField::from_fn(grid, |t, _| (t - horizon) * h0 + 1.0)
}

