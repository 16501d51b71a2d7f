//! Second-order finite-difference stencils.
//!
//! Spatial derivatives are centered with periodic wrap. The time derivative
//! is centered in the interior and one-sided three-point on the two
//! boundary layers. Second derivatives use three-point differences on the
//! diagonal and four-point crosses for mixed entries (interior only).

use nalgebra::DMatrix;

use super::{DiscreteField, GridError, SpaceTimeGrid};

/// Weighted node list `sum_j w_j u[n_j]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stencil {
    pub entries: Vec<(usize, f64)>,
}

impl Stencil {
    pub fn apply(&self, u: &[f64]) -> f64 {
        self.entries.iter().map(|&(n, w)| w * u[n]).sum()
    }
}

fn spatial_first(grid: &SpaceTimeGrid, node: usize, axis: usize) -> Stencil {
    let w = 0.5 / grid.hx();
    Stencil {
        entries: vec![
            (grid.shift_space(node, axis, 1), w),
            (grid.shift_space(node, axis, -1), -w),
        ],
    }
}

fn time_first(grid: &SpaceTimeGrid, node: usize) -> Stencil {
    let k = grid.layer(node);
    let w = 0.5 / grid.ht();
    let entries = if k == 0 {
        vec![
            (node, -3.0 * w),
            (grid.shift_time(node, 1), 4.0 * w),
            (grid.shift_time(node, 2), -w),
        ]
    } else if k == grid.nt() {
        vec![
            (node, 3.0 * w),
            (grid.shift_time(node, -1), -4.0 * w),
            (grid.shift_time(node, -2), w),
        ]
    } else {
        vec![(grid.shift_time(node, 1), w), (grid.shift_time(node, -1), -w)]
    };
    Stencil { entries }
}

/// Stencils of `(D_x u, u_t)` at `node`: `d` spatial entries then time.
pub fn gradient_stencils(grid: &SpaceTimeGrid, node: usize) -> Vec<Stencil> {
    let mut out: Vec<Stencil> = (0..grid.dim()).map(|a| spatial_first(grid, node, a)).collect();
    out.push(time_first(grid, node));
    out
}

/// `(p, s) = (D_x u, u_t)` at `node`.
pub fn gradient_at(grid: &SpaceTimeGrid, u: &DiscreteField, node: usize) -> (Vec<f64>, f64) {
    let stencils = gradient_stencils(grid, node);
    let d = grid.dim();
    let p = stencils[..d].iter().map(|s| s.apply(u.as_slice())).collect();
    (p, stencils[d].apply(u.as_slice()))
}

/// Row-major `(d+1) x (d+1)` stencils of `D^2u`; index `d` is time.
pub fn hessian_stencils(grid: &SpaceTimeGrid, node: usize) -> Result<Vec<Stencil>, GridError> {
    if !grid.is_interior(node) {
        return Err(GridError::NotInterior { node });
    }
    let d = grid.dim();
    let n = d + 1;
    let (hx, ht) = (grid.hx(), grid.ht());
    // Unit shift of `node` along coordinate `c` (spatial axis or time).
    let step = |from: usize, c: usize, delta: isize| {
        if c == d {
            grid.shift_time(from, delta)
        } else {
            grid.shift_space(from, c, delta)
        }
    };
    let h_of = |c: usize| if c == d { ht } else { hx };
    let mut out = vec![Stencil::default(); n * n];
    for i in 0..n {
        let hi = h_of(i);
        let w = 1.0 / (hi * hi);
        out[i * n + i] = Stencil {
            entries: vec![(step(node, i, 1), w), (node, -2.0 * w), (step(node, i, -1), w)],
        };
        for j in (i + 1)..n {
            let w = 0.25 / (hi * h_of(j));
            let cross = Stencil {
                entries: vec![
                    (step(step(node, i, 1), j, 1), w),
                    (step(step(node, i, 1), j, -1), -w),
                    (step(step(node, i, -1), j, 1), -w),
                    (step(step(node, i, -1), j, -1), w),
                ],
            };
            out[j * n + i] = cross.clone();
            out[i * n + j] = cross;
        }
    }
    Ok(out)
}

/// Space-time Hessian at an interior node.
pub fn hessian_at(grid: &SpaceTimeGrid, u: &DiscreteField, node: usize) -> Result<DMatrix<f64>, GridError> {
    let n = grid.dim() + 1;
    let st = hessian_stencils(grid, node)?;
    Ok(DMatrix::from_fn(n, n, |i, j| st[i * n + j].apply(u.as_slice())))
}
