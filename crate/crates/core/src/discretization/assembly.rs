//! Discrete residual `F(u)` and its analytic Jacobian.
//!
//! Interior rows carry `Q(u) = -tr(A D^2u) + b`, the layer `t = 0` carries
//! `N_0` and the layer `t = T` carries `N_T`. An optional forcing is
//! subtracted row by row.

use rayon::prelude::*;
use thiserror::Error;

use super::stencil::{gradient_stencils, hessian_stencils};
use super::{DiscreteField, GridError, SparseMatrix, SpaceTimeGrid};
use crate::models::Model;
use crate::reformulation::{
    assemble, boundary_n_with_gradient, invert_h, Face, GradientPoint, InversionError, Linearization, ReformError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("node {node} (t={t}, x={x:?}, p={p:?}, s={s}): {source}")]
    Node {
        node: usize,
        t: f64,
        x: Vec<f64>,
        p: Vec<f64>,
        s: f64,
        source: ReformError,
    },
}

impl AssemblyError {
    /// The inversion failure behind this error, if any.
    pub fn inversion(&self) -> Option<&InversionError> {
        match self {
            AssemblyError::Node {
                source: ReformError::Inversion(e),
                ..
            } => Some(e),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AssemblyOptions<'a> {
    /// Subtracted from every row.
    pub forcing: Option<&'a [f64]>,
    /// Warm start for the density inversion, one value per node.
    pub density_hint: Option<&'a [f64]>,
    pub with_jacobian: bool,
}

#[derive(Clone, Debug)]
pub struct SystemEval {
    pub residual: Vec<f64>,
    /// `H^{-1}(x, D_x u, u_t)` at every node.
    pub density: Vec<f64>,
    pub jacobian: Option<SparseMatrix>,
}

struct NodeEval {
    residual: f64,
    density: f64,
    row: Vec<(usize, f64)>,
}

fn eval_node(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    u: &[f64],
    node: usize,
    hint: Option<f64>,
    with_row: bool,
) -> Result<NodeEval, AssemblyError> {
    let d = grid.dim();
    let grads = gradient_stencils(grid, node);
    let p: Vec<f64> = grads[..d].iter().map(|s| s.apply(u)).collect();
    let s = grads[d].apply(u);
    let x = grid.position(node);
    let gp = GradientPoint::new(&x, &p, s, u[node]);
    let wrap = |source: ReformError| AssemblyError::Node {
        node,
        t: grid.time(node),
        x: x.clone(),
        p: p.clone(),
        s,
        source,
    };
    let mut row = Vec::new();
    let k = grid.layer(node);
    if k == 0 || k == grid.nt() {
        let face = if k == 0 { Face::Initial } else { Face::Terminal };
        let (value, grad) = boundary_n_with_gradient(model, face, &gp, hint).map_err(wrap)?;
        let density = invert_h(model, &x, &p, s, hint).map_err(|e| wrap(e.into()))?;
        if with_row {
            row.push((node, grad.dz));
            for (axis, st) in grads.iter().enumerate() {
                let c = if axis == d { grad.ds } else { grad.dp[axis] };
                row.extend(st.entries.iter().map(|&(n, w)| (n, c * w)));
            }
        }
        return Ok(NodeEval {
            residual: value,
            density,
            row,
        });
    }

    let hs = hessian_stencils(grid, node)?;
    let n = d + 1;
    let hess = nalgebra::DMatrix::from_fn(n, n, |i, j| hs[i * n + j].apply(u));
    let asm = assemble(model, &gp, hint).map_err(wrap)?;
    let residual = -asm.a.component_mul(&hess).sum() + asm.b;
    let density = asm.m;
    if with_row {
        let a = asm.a.clone();
        let lin = Linearization::new(asm, hess);
        let c = lin.first_order_coefficients();
        for i in 0..n {
            for j in 0..n {
                let aij = a[(i, j)];
                if aij != 0.0 {
                    row.extend(hs[i * n + j].entries.iter().map(|&(m, w)| (m, -aij * w)));
                }
            }
        }
        for (axis, st) in grads.iter().enumerate() {
            row.extend(st.entries.iter().map(|&(m, w)| (m, c[axis] * w)));
        }
    }
    Ok(NodeEval {
        residual,
        density,
        row,
    })
}

/// Residual, recovered density and (optionally) the Jacobian in one pass.
pub fn evaluate(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    u: &DiscreteField,
    opts: &AssemblyOptions<'_>,
) -> Result<SystemEval, AssemblyError> {
    if u.len() != grid.len() {
        return Err(GridError::FieldLength {
            got: u.len(),
            expected: grid.len(),
        }
        .into());
    }
    for extra in [opts.forcing, opts.density_hint].into_iter().flatten() {
        if extra.len() != grid.len() {
            return Err(GridError::FieldLength {
                got: extra.len(),
                expected: grid.len(),
            }
            .into());
        }
    }
    let values = u.as_slice();
    let evals: Vec<NodeEval> = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let hint = opts.density_hint.map(|h| h[node]);
            eval_node(model, grid, values, node, hint, opts.with_jacobian)
        })
        .collect::<Result<_, _>>()?;
    let mut residual = Vec::with_capacity(grid.len());
    let mut density = Vec::with_capacity(grid.len());
    let mut rows = Vec::with_capacity(if opts.with_jacobian { grid.len() } else { 0 });
    for (node, e) in evals.into_iter().enumerate() {
        let f = opts.forcing.map_or(0.0, |f| f[node]);
        residual.push(e.residual - f);
        density.push(e.density);
        if opts.with_jacobian {
            rows.push(e.row);
        }
    }
    let jacobian = opts.with_jacobian.then(|| SparseMatrix::from_rows(grid.len(), rows));
    Ok(SystemEval {
        residual,
        density,
        jacobian,
    })
}

pub fn residual(model: &dyn Model, grid: &SpaceTimeGrid, u: &DiscreteField) -> Result<DiscreteField, AssemblyError> {
    residual_with_forcing(model, grid, u, None)
}

pub fn residual_with_forcing(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    u: &DiscreteField,
    forcing: Option<&[f64]>,
) -> Result<DiscreteField, AssemblyError> {
    let opts = AssemblyOptions {
        forcing,
        ..Default::default()
    };
    let eval = evaluate(model, grid, u, &opts)?;
    Ok(DiscreteField::new(grid, eval.residual)?)
}

pub fn jacobian(model: &dyn Model, grid: &SpaceTimeGrid, u: &DiscreteField) -> Result<SparseMatrix, AssemblyError> {
    let opts = AssemblyOptions {
        with_jacobian: true,
        ..Default::default()
    };
    Ok(evaluate(model, grid, u, &opts)?.jacobian.expect("requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CommonParams, Congestion, SeparatedPower, Sql};
    use std::f64::consts::PI;

    fn sql_flat() -> Sql {
        Sql::new(CommonParams {
            kappa_v: 0.0,
            amplitude: 0.0,
            ..CommonParams::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_field_gives_laplacian_rows_for_flat_sql() {
        let model = sql_flat();
        let grid = SpaceTimeGrid::new(1, 16, 16, 1.0).unwrap();
        let u = DiscreteField::zeros(&grid);
        let jac = jacobian(&model, &grid, &u).unwrap();
        // A = I at p = 0, s = 0, so interior rows are minus the discrete
        // space-time Laplacian.
        let node = grid.node(5, &[3]);
        let (hx, ht) = (grid.hx(), grid.ht());
        assert!((jac.get(node, node) - (2.0 / (hx * hx) + 2.0 / (ht * ht))).abs() < 1e-9);
        assert!((jac.get(node, grid.shift_space(node, 0, 1)) + 1.0 / (hx * hx)).abs() < 1e-9);
        assert!((jac.get(node, grid.shift_time(node, -1)) + 1.0 / (ht * ht)).abs() < 1e-9);
        // Initial row: N_0 = -s + H, dN/ds = -1 on the one-sided stencil.
        let b0 = grid.node(0, &[3]);
        let w = [-1.5 / ht, 2.0 / ht, -0.5 / ht];
        for (lag, wk) in w.iter().enumerate() {
            let got = jac.get(b0, grid.shift_time(b0, lag as isize));
            assert!((got + wk).abs() < 1e-9, "lag {lag}: {got}");
        }
    }

    fn fd_check(model: &dyn Model, grid: &SpaceTimeGrid, u: &DiscreteField, dirs: usize) {
        let jac = jacobian(model, grid, u).unwrap();
        for k in 0..dirs {
            let v: Vec<f64> = (0..grid.len())
                .map(|i| ((i * (k + 3)) as f64 * 0.37 + k as f64).sin())
                .collect();
            let jv = jac.matvec(&v);
            let eps = 1e-6;
            let rp = residual(model, grid, &u.axpy(eps, &v)).unwrap();
            let rm = residual(model, grid, &u.axpy(-eps, &v)).unwrap();
            let scale = jv.iter().fold(1.0f64, |a, x| a.max(x.abs()));
            for i in 0..grid.len() {
                let fd = (rp[i] - rm[i]) / (2.0 * eps);
                assert!((fd - jv[i]).abs() < 1e-6 * scale, "node {i}: fd {fd} vs {}", jv[i]);
            }
        }
    }

    fn smooth_iterate(grid: &SpaceTimeGrid) -> DiscreteField {
        DiscreteField::from_fn(grid, |t, x| {
            0.3 * (2.0 * PI * x[0]).sin() * (1.0 + t) - 0.2 * t + 0.1 * (2.0 * PI * x.iter().sum::<f64>()).cos()
        })
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let grid = SpaceTimeGrid::new(1, 8, 8, 1.0).unwrap();
        let u = smooth_iterate(&grid);
        let common = CommonParams::default();
        fd_check(&Sql::new(common.clone()).unwrap(), &grid, &u, 3);
        fd_check(&Congestion::new(common.clone(), 1.0, 1.0).unwrap(), &grid, &u, 3);
        fd_check(&SeparatedPower::new(common, 1.5).unwrap(), &grid, &u, 3);
        let grid2 = SpaceTimeGrid::new(2, 8, 8, 1.0).unwrap();
        let u2 = smooth_iterate(&grid2);
        fd_check(
            &Congestion::new(CommonParams { dim: 2, ..CommonParams::default() }, 1.0, 1.0).unwrap(),
            &grid2,
            &u2,
            2,
        );
    }

    #[test]
    fn forcing_shifts_the_residual() {
        let model = sql_flat();
        let grid = SpaceTimeGrid::new(1, 8, 8, 1.0).unwrap();
        let u = smooth_iterate(&grid);
        let f: Vec<f64> = (0..grid.len()).map(|i| i as f64).collect();
        let r0 = residual(&model, &grid, &u).unwrap();
        let r1 = residual_with_forcing(&model, &grid, &u, Some(&f)).unwrap();
        for i in 0..grid.len() {
            assert!((r0[i] - f[i] - r1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn inversion_failure_reports_the_node() {
        let model = sql_flat();
        let grid = SpaceTimeGrid::new(1, 8, 8, 1.0).unwrap();
        let u = DiscreteField::from_fn(&grid, |t, _| 100.0 * t);
        let err = residual(&model, &grid, &u).unwrap_err();
        assert!(err.inversion().is_some(), "{err}");
    }
}
