//! Directional derivatives of `tr(A(x, Du) D^2u)` and `b(x, Du)`.
//!
//! Every term is expressed through `Y+ = B_m + D_pH`, `Y- = B_m - D_pH`
//! and `zeta(q) = -s_hat + D_pH . p_hat`, the density responding to a
//! change `q = (p_hat, s_hat)` of the gradient as `dm = -zeta / H_m`.
//! The linearized interior operator acting on `v` is
//! `L(v) = -tr(A D^2v) - D_q tr(A D^2u) . Dv + D_q b . Dv`.

use nalgebra::{DMatrix, DVector};

use super::{assemble, GradientPoint, ReformAssembly, ReformError};
use crate::models::Model;

/// Linearization data at one point for a fixed Hessian `D^2u`.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub assembly: ReformAssembly,
    hess: DMatrix<f64>,
    /// `-D_x u_t + (1/2) D^2_xx u Y+`
    w_plus: DVector<f64>,
    /// `D^2_xx u Y-`
    hy_minus: DVector<f64>,
    /// `tr(D_pB D^2_xx u)`
    tr_bp: f64,
    /// `tr(D_pB_m D^2_xx u)`
    tr_bpm: f64,
}

/// `tr(M H)` for a `d x d` matrix `M` and the spatial block of `hess`.
fn trace_with(m: &DMatrix<f64>, hess: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += m[(i, j)] * hess[(j, i)];
        }
    }
    acc
}

pub fn linearization_coefficients(
    model: &dyn Model,
    gp: &GradientPoint,
    hess: &DMatrix<f64>,
    hint: Option<f64>,
) -> Result<Linearization, ReformError> {
    let assembly = assemble(model, gp, hint)?;
    Ok(Linearization::new(assembly, hess.clone()))
}

/// `Q = -tr(A(x, p, s) hess) + b(x, p, s)`.
pub fn pointwise_operator(model: &dyn Model, gp: &GradientPoint, hess: &DMatrix<f64>) -> Result<f64, ReformError> {
    let asm = assemble(model, gp, None)?;
    Ok(-asm.a.component_mul(hess).sum() + asm.b)
}

impl Linearization {
    pub fn new(assembly: ReformAssembly, hess: DMatrix<f64>) -> Self {
        let d = assembly.y_plus.len();
        let dxx = hess.view((0, 0), (d, d)).into_owned();
        let dxt = hess.view((0, d), (d, 1)).column(0).into_owned();
        let w_plus = -dxt + (&dxx * &assembly.y_plus) * 0.5;
        let hy_minus = &dxx * &assembly.y_minus;
        let tr_bp = trace_with(&assembly.flux.b_p, &hess);
        let tr_bpm = trace_with(&assembly.flux.b_pm, &hess);
        Self {
            assembly,
            hess,
            w_plus,
            hy_minus,
            tr_bp,
            tr_bpm,
        }
    }

    fn dim(&self) -> usize {
        self.assembly.y_plus.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hess
    }

    /// `D_q tr(A D^2u) . q`.
    pub fn dq_trace(&self, q: &[f64]) -> f64 {
        let d = self.dim();
        let asm = &self.assembly;
        let (h, f) = (&asm.h, &asm.flux);
        let p_hat = DVector::from_column_slice(&q[..d]);
        let dm = -asm.zeta(q) / h.h_m;

        let d_y_plus = (&f.b_pm + &h.h_pp) * &p_hat + (&f.b_mm + &h.h_pm) * dm;
        let d_y_minus = (&f.b_pm - &h.h_pp) * &p_hat + (&f.b_mm - &h.h_pm) * dm;
        let d_h_m = h.h_pm.dot(&p_hat) + h.h_mm * dm;
        let d_tr_bp = trace_with(&f.b_pp.contract_last(&q[..d]), &self.hess) + self.tr_bpm * dm;

        self.w_plus.dot(&d_y_plus) - 0.5 * self.hy_minus.dot(&d_y_minus)
            - d_h_m * self.tr_bp
            - h.h_m * d_tr_bp
    }

    /// `D_q b . q`.
    pub fn dq_b(&self, q: &[f64]) -> f64 {
        let d = self.dim();
        let asm = &self.assembly;
        let (h, f) = (&asm.h, &asm.flux);
        let p_hat = DVector::from_column_slice(&q[..d]);
        let dm = -asm.zeta(q) / h.h_m;

        let d_h_x = &h.h_xp * &p_hat + &h.h_xm * dm;
        let d_b_m = &f.b_pm * &p_hat + &f.b_mm * dm;
        let d_h_m = h.h_pm.dot(&p_hat) + h.h_mm * dm;
        let d_div: f64 = (0..d)
            .map(|i| (0..d).map(|k| f.b_xp.get(i, i, k) * q[k]).sum::<f64>())
            .sum::<f64>()
            + f.b_xm.trace() * dm;

        -f.b_m.dot(&d_h_x) - h.h_x.dot(&d_b_m) + h.h_m * d_div + f.div_x_b * d_h_m
    }

    /// `tr(A_{x_i} D^2u)`, the total derivative in `x_i` with `(p, s)` frozen.
    pub fn trace_ax(&self, i: usize) -> f64 {
        let asm = &self.assembly;
        let (h, f) = (&asm.h, &asm.flux);
        let dm = -h.h_x[i] / h.h_m;
        let h_xp_row = h.h_xp.row(i).transpose();
        let b_xm_col = f.b_xm.column(i).into_owned();

        let d_y_plus = &b_xm_col + &h_xp_row + (&f.b_mm + &h.h_pm) * dm;
        let d_y_minus = &b_xm_col - &h_xp_row + (&f.b_mm - &h.h_pm) * dm;
        let d_h_m = h.h_xm[i] + h.h_mm * dm;
        let d_tr_bp = trace_with(&f.b_xp.slice_middle(i), &self.hess) + self.tr_bpm * dm;

        self.w_plus.dot(&d_y_plus) - 0.5 * self.hy_minus.dot(&d_y_minus)
            - d_h_m * self.tr_bp
            - h.h_m * d_tr_bp
    }

    /// `D_x b . e` along a spatial direction `e`, `(p, s)` frozen.
    pub fn dx_b_dot(&self, e: &[f64]) -> f64 {
        let d = self.dim();
        let asm = &self.assembly;
        let (h, f) = (&asm.h, &asm.flux);
        let ev = DVector::from_column_slice(e);
        let dm = -h.h_x.dot(&ev) / h.h_m;

        let d_h_x = &h.h_xx * &ev + &h.h_xm * dm;
        let d_b_m = &f.b_xm * &ev + &f.b_mm * dm;
        let d_h_m = h.h_xm.dot(&ev) + h.h_mm * dm;
        let d_div: f64 = (0..d)
            .map(|i| (0..d).map(|k| f.b_xx.get(i, i, k) * e[k]).sum::<f64>())
            .sum::<f64>()
            + f.b_xm.trace() * dm;

        -f.b_m.dot(&d_h_x) - h.h_x.dot(&d_b_m) + h.h_m * d_div + f.div_x_b * d_h_m
    }

    /// Coefficients `c` with `L(v) = -tr(A D^2v) + c . Dv`.
    pub fn first_order_coefficients(&self) -> DVector<f64> {
        let n = self.dim() + 1;
        DVector::from_fn(n, |k, _| {
            let mut q = vec![0.0; n];
            q[k] = 1.0;
            -self.dq_trace(&q) + self.dq_b(&q)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CommonParams, Congestion, SeparatedPower, Sql};
    use crate::reformulation::assemble_a;

    fn sym(d: usize, vals: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_row_slice(d + 1, d + 1, vals);
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn flat_sql_has_no_trace_variation_for_zero_hessian() {
        let model = Sql::new(CommonParams {
            kappa_v: 0.0,
            ..CommonParams::default()
        })
        .unwrap();
        let gp = GradientPoint::new(&[0.3], &[0.8], -0.2, 0.0);
        let lin = linearization_coefficients(&model, &gp, &DMatrix::zeros(2, 2), None).unwrap();
        for q in [[1.0, 0.0], [0.0, 1.0], [-0.3, 2.0]] {
            assert_eq!(lin.dq_trace(&q), 0.0);
            assert_eq!(lin.dq_b(&q), 0.0);
        }
    }

    #[test]
    fn flat_sql_b_derivative_vanishes_term_by_term() {
        let model = Sql::new(CommonParams {
            kappa_v: 0.0,
            ..CommonParams::default()
        })
        .unwrap();
        let hess = sym(1, &[1.0, 0.4, 0.4, -2.0]);
        let gp = GradientPoint::new(&[0.7], &[-1.5], 0.5, 0.0);
        let lin = linearization_coefficients(&model, &gp, &hess, None).unwrap();
        let f = &lin.assembly.flux;
        let h = &lin.assembly.h;
        // Every factor of the b-derivative is an x-derivative or vanishes.
        assert_eq!(h.h_x.norm(), 0.0);
        assert_eq!(h.h_xp.norm(), 0.0);
        assert_eq!(h.h_xm.norm(), 0.0);
        assert_eq!(f.div_x_b, 0.0);
        assert_eq!(f.b_xm.norm(), 0.0);
        assert_eq!(f.b_xp.max_abs(), 0.0);
        for q in [[1.0, 0.0], [0.0, 1.0], [2.0, -0.5]] {
            assert_eq!(lin.dq_b(&q), 0.0);
        }
    }

    #[test]
    fn sql_trace_derivative_matches_hand_formula() {
        // For SQL, tr(A D^2u) = u_tt - 2 p u_xt + (1 + p^2) u_xx at m-independent A.
        let model = Sql::new(CommonParams::default()).unwrap();
        let hess = sym(1, &[0.7, -0.3, -0.3, 1.9]);
        let p = 0.6;
        let gp = GradientPoint::new(&[0.1], &[p], 0.2, 0.0);
        let lin = linearization_coefficients(&model, &gp, &hess, None).unwrap();
        let expected = -2.0 * hess[(0, 1)] + 2.0 * p * hess[(0, 0)];
        assert!((lin.dq_trace(&[1.0, 0.0]) - expected).abs() < 1e-13);
        assert!(lin.dq_trace(&[0.0, 1.0]).abs() < 1e-13);
    }

    fn models() -> Vec<Box<dyn Model>> {
        let p1 = CommonParams::default();
        let p2 = CommonParams {
            dim: 2,
            terminal_shift: 0.05,
            ..CommonParams::default()
        };
        vec![
            Box::new(Sql::new(p1.clone()).unwrap()),
            Box::new(Congestion::new(p1.clone(), 1.0, 1.0).unwrap()),
            Box::new(Congestion::new(p2.clone(), 0.5, 0.0).unwrap()),
            Box::new(SeparatedPower::new(p1, 1.5).unwrap()),
            Box::new(SeparatedPower::new(p2, 3.0).unwrap()),
        ]
    }

    #[test]
    fn directional_derivatives_match_operator_differences() {
        for model in models() {
            let d = model.dim();
            let x: Vec<f64> = (0..d).map(|i| 0.17 + 0.31 * i as f64).collect();
            let p: Vec<f64> = (0..d).map(|i| 0.4 - 0.9 * i as f64).collect();
            let gp = GradientPoint::new(&x, &p, 0.1, 0.0);
            let n = d + 1;
            let hess = DMatrix::from_fn(n, n, |i, j| 0.3 + 0.2 * (i + j) as f64 - 0.5 * (i * j) as f64);
            let lin = linearization_coefficients(model.as_ref(), &gp, &hess, None).unwrap();
            let dir: Vec<f64> = (0..n).map(|k| 0.7 - 0.45 * k as f64).collect();
            let eps = 1e-6;
            let shifted = |sign: f64| {
                let mut g = gp.clone();
                for i in 0..d {
                    g.p[i] += sign * eps * dir[i];
                }
                g.s += sign * eps * dir[d];
                g
            };
            let trace = |g: &GradientPoint| assemble_a(model.as_ref(), g).unwrap().component_mul(&hess).sum();
            let fd_trace = (trace(&shifted(1.0)) - trace(&shifted(-1.0))) / (2.0 * eps);
            let analytic = lin.dq_trace(&dir);
            assert!(
                (fd_trace - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()),
                "{}: trace {fd_trace} vs {analytic}",
                model.name()
            );
            let q_op = |g: &GradientPoint| pointwise_operator(model.as_ref(), g, &hess).unwrap();
            let fd_q = (q_op(&shifted(1.0)) - q_op(&shifted(-1.0))) / (2.0 * eps);
            let lin_q = -lin.dq_trace(&dir) + lin.dq_b(&dir);
            assert!(
                (fd_q - lin_q).abs() <= 1e-5 * (1.0 + lin_q.abs()),
                "{}: {fd_q} vs {lin_q}",
                model.name()
            );
        }
    }

    #[test]
    fn spatial_derivatives_match_differences_in_x() {
        for model in models() {
            let d = model.dim();
            let x: Vec<f64> = (0..d).map(|i| 0.13 + 0.27 * i as f64).collect();
            let p: Vec<f64> = (0..d).map(|i| -0.8 + 0.5 * i as f64).collect();
            let gp = GradientPoint::new(&x, &p, -0.3, 0.0);
            let n = d + 1;
            let hess = DMatrix::from_fn(n, n, |i, j| 1.0 - 0.3 * (i + j) as f64);
            let lin = linearization_coefficients(model.as_ref(), &gp, &hess, None).unwrap();
            let eps = 1e-6;
            for i in 0..d {
                let at = |sign: f64| {
                    let mut g = gp.clone();
                    g.x[i] += sign * eps;
                    assemble(model.as_ref(), &g, None).unwrap()
                };
                let (up, dn) = (at(1.0), at(-1.0));
                let fd_tr = (up.a.component_mul(&hess).sum() - dn.a.component_mul(&hess).sum()) / (2.0 * eps);
                assert!(
                    (fd_tr - lin.trace_ax(i)).abs() < 1e-6 * (1.0 + fd_tr.abs()),
                    "{} tr(A_x{i}): {fd_tr} vs {}",
                    model.name(),
                    lin.trace_ax(i)
                );
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                let fd_b = (up.b - dn.b) / (2.0 * eps);
                assert!(
                    (fd_b - lin.dx_b_dot(&e)).abs() < 1e-6 * (1.0 + fd_b.abs()),
                    "{} D_x b: {fd_b} vs {}",
                    model.name(),
                    lin.dx_b_dot(&e)
                );
            }
        }
    }
}
