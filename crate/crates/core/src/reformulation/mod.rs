//! Pointwise data of the quasilinear reformulation.
//!
//! Eliminating the density through `m = H^{-1}(x, D_xu, u_t)` turns the
//! system into `-tr(A(x, Du) D^2u) + b(x, Du) = 0` on the space-time
//! cylinder, with the boundary operator `N` on the two time faces. This
//! module evaluates `A`, `b`, `N`, the ellipticity gap and the first
//! derivatives of the interior operator at a single point.

mod inverse;
mod linearization;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use inverse::{invert_h, invert_h_numeric, InversionError, INVERSION_TOL};
pub use linearization::{linearization_coefficients, pointwise_operator, Linearization};

use crate::models::{eval_stack, BStack, HStack, Model, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReformError {
    #[error(transparent)]
    Inversion(#[from] InversionError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Values of `x`, `D_xu`, `u_t` and `u` at one space-time point.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub s: f64,
    pub z: f64,
}

impl GradientPoint {
    pub fn new(x: &[f64], p: &[f64], s: f64, z: f64) -> Self {
        Self {
            x: x.to_vec(),
            p: p.to_vec(),
            s,
            z,
        }
    }
}

/// Everything the residual and the Jacobian need at one interior point.
#[derive(Clone, Debug)]
pub struct ReformAssembly {
    /// Symmetrized `(d+1) x (d+1)` coefficient matrix.
    pub a: DMatrix<f64>,
    pub b: f64,
    /// Inverted density `H^{-1}(x, p, s)`.
    pub m: f64,
    /// `B_m + D_pH`.
    pub y_plus: DVector<f64>,
    /// `B_m - D_pH`.
    pub y_minus: DVector<f64>,
    pub h: HStack,
    pub flux: BStack,
}

impl ReformAssembly {
    /// `zeta(p_hat, s_hat) = -s_hat + D_pH . p_hat`.
    pub fn zeta(&self, q: &[f64]) -> f64 {
        let d = self.h.h_p.len();
        -q[d] + (0..d).map(|i| self.h.h_p[i] * q[i]).sum::<f64>()
    }
}

/// Unsymmetrized matrix of the reformulated operator.
fn raw_matrix(h: &HStack, flux: &BStack) -> DMatrix<f64> {
    let d = h.h_p.len();
    let y_plus = &flux.b_m + &h.h_p;
    let y_minus = &flux.b_m - &h.h_p;
    let mut v = DVector::zeros(d + 1);
    v.rows_mut(0, d).copy_from(&(&y_plus * 0.5));
    v[d] = -1.0;
    let mut a = &v * v.transpose();
    let spatial = (&y_minus * y_minus.transpose()) * 0.25 + &flux.b_p * h.h_m;
    let mut block = a.view_mut((0, 0), (d, d));
    block -= spatial;
    a
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Invert the density and evaluate `A`, `b` and the derivative stacks.
pub fn assemble(model: &dyn Model, gp: &GradientPoint, hint: Option<f64>) -> Result<ReformAssembly, ReformError> {
    let m = invert_h(model, &gp.x, &gp.p, gp.s, hint)?;
    assemble_at_density(model, &gp.x, &gp.p, m)
}

/// Same as [`assemble`] with the density already known.
pub fn assemble_at_density(model: &dyn Model, x: &[f64], p: &[f64], m: f64) -> Result<ReformAssembly, ReformError> {
    let stack = eval_stack(model, x, p, m)?;
    let (h, flux) = (stack.h, stack.b);
    let a = symmetrize(&raw_matrix(&h, &flux));
    let b = -h.h_x.dot(&flux.b_m) + h.h_m * flux.div_x_b;
    Ok(ReformAssembly {
        a,
        b,
        m,
        y_plus: &flux.b_m + &h.h_p,
        y_minus: &flux.b_m - &h.h_p,
        h,
        flux,
    })
}

/// Symmetrized `A(x, p, s)`.
pub fn assemble_a(model: &dyn Model, gp: &GradientPoint) -> Result<DMatrix<f64>, ReformError> {
    Ok(assemble(model, gp, None)?.a)
}

/// `A(x, p, s)` before symmetrization; differs from [`assemble_a`] only when
/// `D_pB` is not symmetric.
pub fn assemble_a_raw(model: &dyn Model, gp: &GradientPoint) -> Result<DMatrix<f64>, ReformError> {
    let m = invert_h(model, &gp.x, &gp.p, gp.s, None)?;
    let stack = eval_stack(model, &gp.x, &gp.p, m)?;
    Ok(raw_matrix(&stack.h, &stack.b))
}

/// `b(x, p, s) = -D_xH . B_m + H_m div_xB`, all at `m = H^{-1}(x, p, s)`.
pub fn assemble_b(model: &dyn Model, gp: &GradientPoint) -> Result<f64, ReformError> {
    Ok(assemble(model, gp, None)?.b)
}

/// Time face carrying a boundary equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    /// `t = 0`: `N = -s + H(x, p, m0(x))`.
    Initial,
    /// `t = T`: `N = -g(x, H^{-1}(x, p, s)) + z`.
    Terminal,
}

/// Partial derivatives of `N` in `(z, p, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryGradient {
    pub dz: f64,
    pub dp: DVector<f64>,
    pub ds: f64,
}

/// Value of the boundary operator.
pub fn boundary_n(model: &dyn Model, face: Face, gp: &GradientPoint, hint: Option<f64>) -> Result<f64, ReformError> {
    Ok(boundary_n_with_gradient(model, face, gp, hint)?.0)
}

/// Gradient of the boundary operator in `(z, p, s)`.
pub fn boundary_n_gradient(
    model: &dyn Model,
    face: Face,
    gp: &GradientPoint,
    hint: Option<f64>,
) -> Result<BoundaryGradient, ReformError> {
    Ok(boundary_n_with_gradient(model, face, gp, hint)?.1)
}

/// Value and gradient of `N` in one pass.
pub fn boundary_n_with_gradient(
    model: &dyn Model,
    face: Face,
    gp: &GradientPoint,
    hint: Option<f64>,
) -> Result<(f64, BoundaryGradient), ReformError> {
    match face {
        Face::Initial => {
            let m0 = model.m0_stack(&gp.x).m0;
            let h = eval_stack(model, &gp.x, &gp.p, m0)?.h;
            let value = -gp.s + h.h;
            Ok((
                value,
                BoundaryGradient {
                    dz: 0.0,
                    dp: h.h_p,
                    ds: -1.0,
                },
            ))
        }
        Face::Terminal => {
            let m = invert_h(model, &gp.x, &gp.p, gp.s, hint)?;
            let h = eval_stack(model, &gp.x, &gp.p, m)?.h;
            let g = model.g_stack(&gp.x, m);
            let value = -g.g + gp.z;
            // dm/dp = -D_pH / H_m, dm/ds = 1 / H_m.
            Ok((
                value,
                BoundaryGradient {
                    dz: 1.0,
                    dp: &h.h_p * (g.g_m / h.h_m),
                    ds: -g.g_m / h.h_m,
                },
            ))
        }
    }
}

/// Smallest eigenvalue of `-4 H_m D_pB - (1 + 1/C0) (B_m - D_pH) (x) (B_m - D_pH)`,
/// symmetrized. Positive values certify strict ellipticity at the point.
pub fn ellipticity_gap(model: &dyn Model, x: &[f64], p: &[f64], m: f64) -> Result<f64, ModelError> {
    let stack = eval_stack(model, x, p, m)?;
    Ok(ellipticity_gap_from(&stack.h, &stack.b, model.constants().c0))
}

pub(crate) fn ellipticity_gap_from(h: &HStack, flux: &BStack, c0: f64) -> f64 {
    let y_minus = &flux.b_m - &h.h_p;
    let mat = &flux.b_p * (-4.0 * h.h_m) - (&y_minus * y_minus.transpose()) * (1.0 + 1.0 / c0);
    symmetrize(&mat).symmetric_eigen().eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CommonParams, Congestion, SeparatedPower, Sql};
    use std::f64::consts::PI;

    fn sql(kappa_v: f64) -> Sql {
        Sql::new(CommonParams {
            kappa_v,
            ..CommonParams::default()
        })
        .unwrap()
    }

    #[test]
    fn sql_matrix_at_zero_gradient_is_identity() {
        let model = sql(0.1);
        for s in [-1.0, 0.0, 0.7] {
            let a = assemble_a(&model, &GradientPoint::new(&[0.2], &[0.0], s, 0.0)).unwrap();
            assert!((a - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
        }
    }

    #[test]
    fn sql_matrix_at_unit_gradient() {
        let model = sql(0.0);
        let a = assemble_a(&model, &GradientPoint::new(&[0.2], &[1.0], 0.3, 0.0)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]);
        assert!((a - expected).norm() < 1e-14);
    }

    #[test]
    fn time_entries_of_a() {
        let model = Congestion::new(
            CommonParams {
                dim: 2,
                ..CommonParams::default()
            },
            1.0,
            1.0,
        )
        .unwrap();
        let gp = GradientPoint::new(&[0.1, 0.8], &[0.4, -1.1], 0.2, 0.0);
        let asm = assemble(&model, &gp, None).unwrap();
        assert_eq!(asm.a[(2, 2)], 1.0);
        for i in 0..2 {
            assert!((asm.a[(i, 2)] + 0.5 * asm.y_plus[i]).abs() < 1e-15);
            assert_eq!(asm.a[(i, 2)], asm.a[(2, i)]);
        }
    }

    #[test]
    fn b_vanishes_without_potential_and_matches_hand_value() {
        let flat = sql(0.0);
        for (x, p) in [(0.1, 0.5), (0.6, -2.0)] {
            let b = assemble_b(&flat, &GradientPoint::new(&[x], &[p], 0.0, 0.0)).unwrap();
            assert_eq!(b, 0.0);
        }
        let model = sql(0.1);
        let b = assemble_b(&model, &GradientPoint::new(&[0.25], &[1.0], 0.0, 0.0)).unwrap();
        assert!((b - 0.2 * PI).abs() < 1e-14);
        assert!((b - 0.628319).abs() < 1e-6);
    }

    #[test]
    fn boundary_operator_values() {
        let model = Sql::new(CommonParams {
            kappa_v: 0.0,
            amplitude: 0.0,
            ..CommonParams::default()
        })
        .unwrap();
        let n0 = boundary_n(&model, Face::Initial, &GradientPoint::new(&[0.4], &[0.0], 0.0, 5.0), None).unwrap();
        assert_eq!(n0, 0.0);
        let (nt, grad) =
            boundary_n_with_gradient(&model, Face::Terminal, &GradientPoint::new(&[0.4], &[0.0], 1.0, 1.0), None)
                .unwrap();
        assert!((nt - 2.0).abs() < 1e-14);
        assert!((grad.ds - 1.0).abs() < 1e-14);
        let g0 = boundary_n_gradient(&model, Face::Initial, &GradientPoint::new(&[0.4], &[0.3], 0.0, 0.0), None)
            .unwrap();
        assert_eq!(g0.ds, -1.0);
        assert_eq!(g0.dz, 0.0);
    }

    #[test]
    fn terminal_gradient_matches_finite_differences() {
        let model = Congestion::new(CommonParams::default(), 1.0, 1.0).unwrap();
        let gp = GradientPoint::new(&[0.3], &[0.7], 0.4, 0.2);
        let (_, grad) = boundary_n_with_gradient(&model, Face::Terminal, &gp, None).unwrap();
        let eps = 1e-6;
        let eval = |gp: &GradientPoint| boundary_n(&model, Face::Terminal, gp, None).unwrap();
        let mut up = gp.clone();
        let mut dn = gp.clone();
        up.s += eps;
        dn.s -= eps;
        assert!(((eval(&up) - eval(&dn)) / (2.0 * eps) - grad.ds).abs() < 1e-7);
        let mut up = gp.clone();
        let mut dn = gp.clone();
        up.p[0] += eps;
        dn.p[0] -= eps;
        assert!(((eval(&up) - eval(&dn)) / (2.0 * eps) - grad.dp[0]).abs() < 1e-7);
        assert!(grad.ds > 0.0);
    }

    #[test]
    fn ellipticity_gap_values() {
        let model = sql(0.1);
        for (p, m) in [(0.0, 1.0), (3.0, 0.2), (-7.0, 9.0)] {
            let gap = ellipticity_gap(&model, &[0.3], &[p], m).unwrap();
            assert!((gap - 4.0).abs() < 1e-12);
        }
        let power = SeparatedPower::new(CommonParams::default(), 1.5).unwrap();
        let (p, m) = (2.0, 0.5);
        let h = power.h_stack(&[0.0], &[p], m);
        let expected = -4.0 * h.h_m * m * h.h_pp[(0, 0)];
        let gap = ellipticity_gap(&power, &[0.0], &[p], m).unwrap();
        assert!((gap - expected).abs() < 1e-12 * expected.abs());
        assert!(gap > 0.0);

        let congestion = Congestion::new(CommonParams::default(), 1.0, 0.0).unwrap();
        for i in 0..=40 {
            let p = -5.0 + 0.25 * i as f64;
            for j in 0..=20 {
                let m = 0.1 * 100f64.powf(j as f64 / 20.0);
                assert!(ellipticity_gap(&congestion, &[0.2], &[p], m).unwrap() > 0.0);
            }
        }
    }
}
