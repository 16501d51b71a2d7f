//! Built-in models: separated quadratic-log, congestion, separated power.
//!
//! All three share a cosine potential `V(x) = kappa_v cos(2 pi x_1)`, an
//! initial density `m0(x) = 1 + a cos(2 pi x_1)` and a terminal cost
//! `g(x, m) = G(m) + kappa_g cos(2 pi x_1)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{BStack, GStack, HStack, M0Stack, Model, ModelConstants, ModelError, Tensor3};

const TWO_PI: f64 = 2.0 * PI;

/// Strictly increasing scalar function of the density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Monotone {
    Log,
    /// `m^q` with `q > 0`.
    Power(f64),
}

impl Monotone {
    pub fn value(self, m: f64) -> f64 {
        match self {
            Monotone::Log => m.ln(),
            Monotone::Power(q) => m.powf(q),
        }
    }

    pub fn d1(self, m: f64) -> f64 {
        match self {
            Monotone::Log => 1.0 / m,
            Monotone::Power(q) => q * m.powf(q - 1.0),
        }
    }

    pub fn d2(self, m: f64) -> f64 {
        match self {
            Monotone::Log => -1.0 / (m * m),
            Monotone::Power(q) => q * (q - 1.0) * m.powf(q - 2.0),
        }
    }

    fn validate(self, what: &str) -> Result<(), ModelError> {
        match self {
            Monotone::Power(q) if !(q > 0.0 && q.is_finite()) => Err(ModelError::InvalidParameter(
                format!("{what} exponent must be positive, got {q}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Cosine profile `kappa cos(2 pi x_1)` and its derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Potential {
    pub kappa: f64,
}

impl Potential {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.kappa * (TWO_PI * x[0]).cos()
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[0] = -TWO_PI * self.kappa * (TWO_PI * x[0]).sin();
        g
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(x.len(), x.len());
        h[(0, 0)] = -TWO_PI * TWO_PI * self.kappa * (TWO_PI * x[0]).cos();
        h
    }

    pub fn sup_norm(&self) -> f64 {
        self.kappa.abs()
    }
}

/// Data shared by every built-in model.
#[derive(Clone, Debug, PartialEq)]
pub struct CommonParams {
    pub dim: usize,
    /// Potential amplitude `kappa_v`.
    pub kappa_v: f64,
    /// Initial density amplitude `a`, `|a| < 1`.
    pub amplitude: f64,
    /// Density coupling `f`.
    pub coupling: Monotone,
    /// Density part `G` of the terminal cost.
    pub terminal: Monotone,
    /// Amplitude `kappa_g` of the x-dependent terminal shift.
    pub terminal_shift: f64,
}

impl Default for CommonParams {
    fn default() -> Self {
        Self {
            dim: 1,
            kappa_v: 0.1,
            amplitude: 0.2,
            coupling: Monotone::Log,
            terminal: Monotone::Log,
            terminal_shift: 0.0,
        }
    }
}

impl CommonParams {
    fn validate(&self) -> Result<(), ModelError> {
        if !(1..=2).contains(&self.dim) {
            return Err(ModelError::InvalidParameter(format!(
                "spatial dimension must be 1 or 2, got {}",
                self.dim
            )));
        }
        if !(self.amplitude.abs() < 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "initial density amplitude must satisfy |a| < 1, got {}",
                self.amplitude
            )));
        }
        if !self.kappa_v.is_finite() || !self.terminal_shift.is_finite() {
            return Err(ModelError::InvalidParameter("non-finite amplitude".into()));
        }
        self.coupling.validate("coupling")?;
        self.terminal.validate("terminal cost")?;
        Ok(())
    }

    fn potential(&self) -> Potential {
        Potential { kappa: self.kappa_v }
    }

    fn g_stack(&self, x: &[f64], m: f64) -> GStack {
        let shift = Potential {
            kappa: self.terminal_shift,
        };
        GStack {
            g: self.terminal.value(m) + shift.value(x),
            g_m: self.terminal.d1(m),
            g_x: shift.gradient(x),
        }
    }

    fn m0_stack(&self, x: &[f64]) -> M0Stack {
        let profile = Potential {
            kappa: self.amplitude,
        };
        M0Stack {
            m0: 1.0 + profile.value(x),
            m0_x: profile.gradient(x),
        }
    }

    /// `Cbar(m) = 2 + 2 sup|V| + 2 |f(m)|`.
    fn cbar(&self) -> super::DensityFn {
        let coupling = self.coupling;
        let v = self.kappa_v.abs();
        Arc::new(move |m: f64| 2.0 + 2.0 * v + 2.0 * coupling.value(m).abs())
    }
}

fn norm_sq(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum()
}

fn zero_flux_x(d: usize) -> (DMatrix<f64>, DMatrix<f64>, Tensor3, Tensor3) {
    (
        DMatrix::zeros(d, d),
        DMatrix::zeros(d, d),
        Tensor3::zeros(d),
        Tensor3::zeros(d),
    )
}

/// Separated quadratic-log model:
/// `H = |p|^2/2 + V(x) - f(m)`, `B = m p`.
#[derive(Clone, Debug)]
pub struct Sql {
    params: CommonParams,
    constants: ModelConstants,
}

impl Sql {
    pub fn new(params: CommonParams) -> Result<Self, ModelError> {
        params.validate()?;
        let constants = ModelConstants::new(2.0, 2.0, 0.0, -1.0, Arc::new(|_| 1.0), params.cbar())?;
        Ok(Self { params, constants })
    }

    /// Replace `C0` and `gamma2`; the remaining constants are fixed by the model.
    pub fn with_structure(mut self, c0: f64, gamma2: f64) -> Result<Self, ModelError> {
        self.constants =
            ModelConstants::new(c0, 2.0, 0.0, gamma2, Arc::new(|_| 1.0), self.params.cbar())?;
        Ok(self)
    }

    pub fn params(&self) -> &CommonParams {
        &self.params
    }
}

impl Model for Sql {
    fn name(&self) -> &str {
        "sql"
    }

    fn dim(&self) -> usize {
        self.params.dim
    }

    fn constants(&self) -> &ModelConstants {
        &self.constants
    }

    fn hamiltonian(&self, x: &[f64], p: &[f64], m: f64) -> f64 {
        0.5 * norm_sq(p) + self.params.potential().value(x) - self.params.coupling.value(m)
    }

    fn hamiltonian_m(&self, _x: &[f64], _p: &[f64], m: f64) -> f64 {
        -self.params.coupling.d1(m)
    }

    fn h_stack(&self, x: &[f64], p: &[f64], m: f64) -> HStack {
        let d = self.params.dim;
        let v = self.params.potential();
        HStack {
            h: self.hamiltonian(x, p, m),
            h_p: DVector::from_column_slice(p),
            h_m: -self.params.coupling.d1(m),
            h_pp: DMatrix::identity(d, d),
            h_xp: DMatrix::zeros(d, d),
            h_x: v.gradient(x),
            h_mm: -self.params.coupling.d2(m),
            h_pm: DVector::zeros(d),
            h_xm: DVector::zeros(d),
            h_xx: v.hessian(x),
        }
    }

    fn b_stack(&self, _x: &[f64], p: &[f64], m: f64) -> BStack {
        let d = self.params.dim;
        let pv = DVector::from_column_slice(p);
        let (b_x, b_xm, b_xp, b_xx) = zero_flux_x(d);
        BStack {
            b: &pv * m,
            b_m: pv,
            b_p: DMatrix::identity(d, d) * m,
            b_pm: DMatrix::identity(d, d),
            b_mm: DVector::zeros(d),
            b_x,
            div_x_b: 0.0,
            b_xm,
            b_pp: Tensor3::zeros(d),
            b_xp,
            b_xx,
        }
    }

    fn g_stack(&self, x: &[f64], m: f64) -> GStack {
        self.params.g_stack(x, m)
    }

    fn m0_stack(&self, x: &[f64]) -> M0Stack {
        self.params.m0_stack(x)
    }

    fn closed_form_inverse(&self, x: &[f64], p: &[f64], s: f64) -> Option<f64> {
        match self.params.coupling {
            Monotone::Log => Some((0.5 * norm_sq(p) + self.params.potential().value(x) - s).exp()),
            Monotone::Power(_) => None,
        }
    }
}

/// Congestion model:
/// `H = |p|^2 / (2 (m + c0)^alpha) - V(x) - f(m)`, `B = m p / (m + c0)^alpha`.
#[derive(Clone, Debug)]
pub struct Congestion {
    params: CommonParams,
    alpha: f64,
    offset: f64,
    constants: ModelConstants,
}

impl Congestion {
    /// `alpha > 0`, `offset = c0 >= 0`. Values `alpha >= 2` are accepted so
    /// that the loss of ellipticity can be observed; they violate (E3).
    pub fn new(params: CommonParams, alpha: f64, offset: f64) -> Result<Self, ModelError> {
        params.validate()?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "congestion exponent alpha must be positive, got {alpha}"
            )));
        }
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "congestion offset c0 must be non-negative, got {offset}"
            )));
        }
        let mut c0 = 2.0f64.max(2.0 / alpha);
        if alpha < 2.0 {
            c0 = c0.max(2.0 * alpha / (2.0 - alpha));
        }
        let psi = move |m: f64| (m + offset).powf(-alpha);
        let constants = ModelConstants::new(c0, 2.0, 2.0, 0.0, Arc::new(psi), params.cbar())?;
        Ok(Self {
            params,
            alpha,
            offset,
            constants,
        })
    }

    pub fn with_structure(mut self, c0: f64, gamma2: f64) -> Result<Self, ModelError> {
        let (alpha, offset) = (self.alpha, self.offset);
        let psi = move |m: f64| (m + offset).powf(-alpha);
        self.constants = ModelConstants::new(c0, 2.0, 2.0, gamma2, Arc::new(psi), self.params.cbar())?;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn params(&self) -> &CommonParams {
        &self.params
    }

    /// `phi(m) = (m + c0)^-alpha` and its first two derivatives.
    fn weight(&self, m: f64) -> (f64, f64, f64) {
        let base = m + self.offset;
        let a = self.alpha;
        let phi = base.powf(-a);
        (phi, -a * phi / base, a * (a + 1.0) * phi / (base * base))
    }
}

impl Model for Congestion {
    fn name(&self) -> &str {
        "congestion"
    }

    fn dim(&self) -> usize {
        self.params.dim
    }

    fn constants(&self) -> &ModelConstants {
        &self.constants
    }

    fn hamiltonian(&self, x: &[f64], p: &[f64], m: f64) -> f64 {
        let (phi, _, _) = self.weight(m);
        0.5 * phi * norm_sq(p) - self.params.potential().value(x) - self.params.coupling.value(m)
    }

    fn hamiltonian_m(&self, _x: &[f64], p: &[f64], m: f64) -> f64 {
        let (_, dphi, _) = self.weight(m);
        0.5 * dphi * norm_sq(p) - self.params.coupling.d1(m)
    }

    fn h_stack(&self, x: &[f64], p: &[f64], m: f64) -> HStack {
        let d = self.params.dim;
        let (phi, dphi, ddphi) = self.weight(m);
        let pv = DVector::from_column_slice(p);
        let v = self.params.potential();
        let f = self.params.coupling;
        let q = norm_sq(p);
        HStack {
            h: 0.5 * phi * q - v.value(x) - f.value(m),
            h_p: &pv * phi,
            h_m: 0.5 * dphi * q - f.d1(m),
            h_pp: DMatrix::identity(d, d) * phi,
            h_xp: DMatrix::zeros(d, d),
            h_x: -v.gradient(x),
            h_mm: 0.5 * ddphi * q - f.d2(m),
            h_pm: &pv * dphi,
            h_xm: DVector::zeros(d),
            h_xx: -v.hessian(x),
        }
    }

    fn b_stack(&self, _x: &[f64], p: &[f64], m: f64) -> BStack {
        let d = self.params.dim;
        let (phi, dphi, ddphi) = self.weight(m);
        // rho = m phi(m)
        let rho = m * phi;
        let drho = phi + m * dphi;
        let ddrho = 2.0 * dphi + m * ddphi;
        let pv = DVector::from_column_slice(p);
        let (b_x, b_xm, b_xp, b_xx) = zero_flux_x(d);
        BStack {
            b: &pv * rho,
            b_m: &pv * drho,
            b_p: DMatrix::identity(d, d) * rho,
            b_pm: DMatrix::identity(d, d) * drho,
            b_mm: &pv * ddrho,
            b_x,
            div_x_b: 0.0,
            b_xm,
            b_pp: Tensor3::zeros(d),
            b_xp,
            b_xx,
        }
    }

    fn g_stack(&self, x: &[f64], m: f64) -> GStack {
        self.params.g_stack(x, m)
    }

    fn m0_stack(&self, x: &[f64]) -> M0Stack {
        self.params.m0_stack(x)
    }
}

/// Separated power model:
/// `H = (1 + |p|^2)^(gamma/2) / gamma + V(x) - f(m)`, `B = m D_pH`.
#[derive(Clone, Debug)]
pub struct SeparatedPower {
    params: CommonParams,
    gamma: f64,
    constants: ModelConstants,
}

impl SeparatedPower {
    pub fn new(params: CommonParams, gamma: f64) -> Result<Self, ModelError> {
        params.validate()?;
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "growth exponent gamma must exceed 1, got {gamma}"
            )));
        }
        let c0 = 4.0 * gamma.max(1.0 / (gamma - 1.0));
        // Strictly below the exponent threshold 2 - gamma.
        let gamma2 = (1.0 - gamma).min(-1.0);
        let constants = ModelConstants::new(c0, gamma, 0.0, gamma2, Arc::new(|_| 1.0), params.cbar())?;
        Ok(Self {
            params,
            gamma,
            constants,
        })
    }

    pub fn with_structure(mut self, c0: f64, gamma2: f64) -> Result<Self, ModelError> {
        self.constants =
            ModelConstants::new(c0, self.gamma, 0.0, gamma2, Arc::new(|_| 1.0), self.params.cbar())?;
        Ok(self)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn params(&self) -> &CommonParams {
        &self.params
    }

    /// `D_pH`, `D2_ppH` and `D3_pppH` of the kinetic part.
    fn kinetic(&self, p: &[f64]) -> (DVector<f64>, DMatrix<f64>, Tensor3) {
        let d = p.len();
        let w = 1.0 + norm_sq(p);
        let a = 0.5 * self.gamma - 1.0;
        let wa = w.powf(a);
        let wa1 = wa / w;
        let wa2 = wa1 / w;
        let grad = DVector::from_iterator(d, p.iter().map(|pi| wa * pi));
        let hess = DMatrix::from_fn(d, d, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            wa * delta + 2.0 * a * wa1 * p[i] * p[j]
        });
        let mut third = Tensor3::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let dl = |u: usize, v: usize| if u == v { 1.0 } else { 0.0 };
                    let val = 2.0 * a * wa1 * (dl(i, j) * p[k] + dl(i, k) * p[j] + dl(j, k) * p[i])
                        + 4.0 * a * (a - 1.0) * wa2 * p[i] * p[j] * p[k];
                    third.set(i, j, k, val);
                }
            }
        }
        (grad, hess, third)
    }
}

impl Model for SeparatedPower {
    fn name(&self) -> &str {
        "separated-power"
    }

    fn dim(&self) -> usize {
        self.params.dim
    }

    fn constants(&self) -> &ModelConstants {
        &self.constants
    }

    fn hamiltonian(&self, x: &[f64], p: &[f64], m: f64) -> f64 {
        (1.0 + norm_sq(p)).powf(0.5 * self.gamma) / self.gamma + self.params.potential().value(x)
            - self.params.coupling.value(m)
    }

    fn hamiltonian_m(&self, _x: &[f64], _p: &[f64], m: f64) -> f64 {
        -self.params.coupling.d1(m)
    }

    fn h_stack(&self, x: &[f64], p: &[f64], m: f64) -> HStack {
        let d = self.params.dim;
        let (grad, hess, _) = self.kinetic(p);
        let v = self.params.potential();
        HStack {
            h: self.hamiltonian(x, p, m),
            h_p: grad,
            h_m: -self.params.coupling.d1(m),
            h_pp: hess,
            h_xp: DMatrix::zeros(d, d),
            h_x: v.gradient(x),
            h_mm: -self.params.coupling.d2(m),
            h_pm: DVector::zeros(d),
            h_xm: DVector::zeros(d),
            h_xx: v.hessian(x),
        }
    }

    fn b_stack(&self, _x: &[f64], p: &[f64], m: f64) -> BStack {
        let d = self.params.dim;
        let (grad, hess, third) = self.kinetic(p);
        let (b_x, b_xm, b_xp, b_xx) = zero_flux_x(d);
        BStack {
            b: &grad * m,
            b_m: grad,
            b_p: &hess * m,
            b_pm: hess,
            b_mm: DVector::zeros(d),
            b_x,
            div_x_b: 0.0,
            b_xm,
            b_pp: third.scale(m),
            b_xp,
            b_xx,
        }
    }

    fn g_stack(&self, x: &[f64], m: f64) -> GStack {
        self.params.g_stack(x, m)
    }

    fn m0_stack(&self, x: &[f64]) -> M0Stack {
        self.params.m0_stack(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sql_values_at_unit_point() {
        let model = Sql::new(CommonParams {
            kappa_v: 0.0,
            ..CommonParams::default()
        })
        .unwrap();
        let h = model.h_stack(&[0.0], &[1.0], 1.0);
        let b = model.b_stack(&[0.0], &[1.0], 1.0);
        assert_eq!(h.h_p[0], 1.0);
        assert_eq!(h.h_m, -1.0);
        assert_eq!(b.b_p[(0, 0)], 1.0);
        assert_eq!(b.b_m[0], 1.0);

        let h0 = model.h_stack(&[0.3], &[0.0], 2.0);
        let b0 = model.b_stack(&[0.3], &[0.0], 2.0);
        assert_eq!(h0.h_p[0], 0.0);
        assert_eq!(b0.b[0], 0.0);
    }

    #[test]
    fn congestion_values_at_unit_point() {
        let model = Congestion::new(
            CommonParams {
                kappa_v: 0.0,
                ..CommonParams::default()
            },
            1.0,
            1.0,
        )
        .unwrap();
        let h = model.h_stack(&[0.0], &[1.0], 1.0);
        assert!((h.h_p[0] - 0.5).abs() < 1e-15);
        assert!((h.h_m + 1.125).abs() < 1e-15);
    }

    #[test]
    fn flux_vanishes_at_zero_density() {
        let p = [0.7, -1.3];
        let x = [0.2, 0.9];
        let params = CommonParams {
            dim: 2,
            ..CommonParams::default()
        };
        let models: Vec<Box<dyn Model>> = vec![
            Box::new(Sql::new(params.clone()).unwrap()),
            Box::new(Congestion::new(params.clone(), 1.0, 1.0).unwrap()),
            Box::new(SeparatedPower::new(params, 1.5).unwrap()),
        ];
        for model in &models {
            let b = model.b_stack(&x, &p, 0.0);
            assert!(b.b.iter().all(|v| *v == 0.0), "{}", model.name());
        }
    }

    #[test]
    fn flux_is_density_times_momentum_for_separated_models() {
        let params = CommonParams {
            dim: 2,
            ..CommonParams::default()
        };
        let models: Vec<Box<dyn Model>> = vec![
            Box::new(Sql::new(params.clone()).unwrap()),
            Box::new(SeparatedPower::new(params, 3.0).unwrap()),
        ];
        for model in &models {
            for (x, p, m) in [([0.1, 0.4], [0.3, -2.0], 0.5), ([0.7, 0.2], [4.0, 1.0], 3.0)] {
                let h = model.h_stack(&x, &p, m);
                let b = model.b_stack(&x, &p, m);
                assert!((&b.b_m - &h.h_p).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn congestion_flux_jacobian_is_positive_definite() {
        let params = CommonParams {
            dim: 2,
            ..CommonParams::default()
        };
        let model = Congestion::new(params, 1.0, 0.0).unwrap();
        for (p, m) in [([1.0, 0.0], 0.1), ([-3.0, 2.0], 5.0), ([0.01, 0.02], 1.0)] {
            let b = model.b_stack(&[0.3, 0.3], &p, m);
            assert!((&b.b_p - b.b_p.transpose()).norm() == 0.0);
            let eig = b.b_p.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn monotonicity_along_density_sequences() {
        let params = CommonParams::default();
        let models: Vec<Box<dyn Model>> = vec![
            Box::new(Sql::new(params.clone()).unwrap()),
            Box::new(Congestion::new(params.clone(), 1.0, 0.0).unwrap()),
            Box::new(SeparatedPower::new(params, 1.5).unwrap()),
        ];
        let ms: Vec<f64> = (0..40).map(|k| 0.01 * 1.25f64.powi(k)).collect();
        for model in &models {
            for p in [0.0, 0.5, -3.0] {
                let hs: Vec<f64> = ms.iter().map(|&m| model.hamiltonian(&[0.37], &[p], m)).collect();
                assert!(hs.windows(2).all(|w| w[1] < w[0]), "{}", model.name());
            }
            let gs: Vec<f64> = ms.iter().map(|&m| model.g_stack(&[0.37], m).g).collect();
            assert!(gs.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(Sql::new(CommonParams {
            amplitude: 1.0,
            ..CommonParams::default()
        })
        .is_err());
        assert!(Sql::new(CommonParams {
            dim: 3,
            ..CommonParams::default()
        })
        .is_err());
        assert!(Congestion::new(CommonParams::default(), -1.0, 0.0).is_err());
        assert!(SeparatedPower::new(CommonParams::default(), 1.0).is_err());
        // gamma2 = 0 breaks gamma2 < 2 gamma1 - gamma + 2 for gamma1 = 0, gamma = 2.
        assert!(Sql::new(CommonParams::default())
            .unwrap()
            .with_structure(2.0, 0.0)
            .is_err());
    }
}
