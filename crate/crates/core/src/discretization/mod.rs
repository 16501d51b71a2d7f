//! Periodic space-time grid, finite-difference stencils and the assembled
//! discrete oblique problem.
//!
//! Nodes are numbered time-major: `index = k * Nx^d + spatial`, with the
//! spatial multi-index flattened lexicographically (axis 0 fastest). The
//! spatial directions wrap periodically; the time layers `k = 0` and
//! `k = Nt` carry the boundary equations.

mod assembly;
mod io;
mod sparse;
mod stencil;

use std::ops::{Index, IndexMut};

use thiserror::Error;

pub use assembly::{evaluate, jacobian, residual, residual_with_forcing, AssemblyError, AssemblyOptions, SystemEval};
pub use io::{read_field, write_field, FieldIoError};
pub use sparse::SparseMatrix;
pub use stencil::{gradient_at, gradient_stencils, hessian_at, hessian_stencils, Stencil};

pub const MIN_NODES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("node {node} lies on a boundary layer; the Hessian stencil needs 0 < t < T")]
    NotInterior { node: usize },
    #[error("field has {got} values but the grid has {expected} nodes")]
    FieldLength { got: usize, expected: usize },
}

/// `T^d x [0, T]` sampled with `Nx` nodes per spatial axis and `Nt` time intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpaceTimeGrid {
    dim: usize,
    nx: usize,
    nt: usize,
    horizon_bits: u64,
}

impl SpaceTimeGrid {
    pub fn new(dim: usize, nx: usize, nt: usize, horizon: f64) -> Result<Self, GridError> {
        if !(1..=2).contains(&dim) {
            return Err(GridError::Invalid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if nx < MIN_NODES || nt < MIN_NODES {
            return Err(GridError::Invalid(format!(
                "need Nx >= {MIN_NODES} and Nt >= {MIN_NODES}, got Nx = {nx}, Nt = {nt}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(GridError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            dim,
            nx,
            nt,
            horizon_bits: horizon.to_bits(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> f64 {
        f64::from_bits(self.horizon_bits)
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn ht(&self) -> f64 {
        self.horizon() / self.nt as f64
    }

    /// Nodes per time layer, `Nx^d`.
    pub fn layer_size(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    /// Total node count, `Nx^d (Nt + 1)`.
    pub fn len(&self) -> usize {
        self.layer_size() * (self.nt + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn layer(&self, node: usize) -> usize {
        node / self.layer_size()
    }

    pub fn spatial_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node % self.layer_size();
        (0..self.dim)
            .map(|_| {
                let i = rest % self.nx;
                rest /= self.nx;
                i
            })
            .collect()
    }

    pub fn node(&self, layer: usize, spatial: &[usize]) -> usize {
        let mut flat = 0;
        for &i in spatial.iter().rev() {
            flat = flat * self.nx + i;
        }
        layer * self.layer_size() + flat
    }

    pub fn time(&self, node: usize) -> f64 {
        self.layer(node) as f64 * self.ht()
    }

    pub fn position(&self, node: usize) -> Vec<f64> {
        let hx = self.hx();
        self.spatial_index(node).iter().map(|&i| i as f64 * hx).collect()
    }

    pub fn is_interior(&self, node: usize) -> bool {
        let k = self.layer(node);
        k > 0 && k < self.nt
    }

    /// Neighbour along spatial `axis`, wrapping periodically.
    pub fn shift_space(&self, node: usize, axis: usize, delta: isize) -> usize {
        let stride = self.nx.pow(axis as u32);
        let i = (node / stride) % self.nx;
        let wrapped = (i as isize + delta).rem_euclid(self.nx as isize) as usize;
        node + wrapped * stride - i * stride
    }

    /// Neighbour along time; the caller keeps the layer in range.
    pub fn shift_time(&self, node: usize, delta: isize) -> usize {
        (node as isize + delta * self.layer_size() as isize) as usize
    }

    /// Grid with both resolutions doubled and the same horizon.
    pub fn refined(&self) -> Self {
        Self {
            nx: 2 * self.nx,
            nt: 2 * self.nt,
            ..*self
        }
    }

    /// Index of the node of `fine` that coincides with `node` of `self`.
    pub fn embed_in(&self, node: usize, fine: &SpaceTimeGrid) -> Option<usize> {
        if fine.dim != self.dim || fine.nx % self.nx != 0 || fine.nt % self.nt != 0 {
            return None;
        }
        let (rx, rt) = (fine.nx / self.nx, fine.nt / self.nt);
        let spatial: Vec<usize> = self.spatial_index(node).iter().map(|i| i * rx).collect();
        Some(fine.node(self.layer(node) * rt, &spatial))
    }

    /// Nodes of the layer `k`.
    pub fn layer_nodes(&self, k: usize) -> std::ops::Range<usize> {
        let l = self.layer_size();
        k * l..(k + 1) * l
    }
}

/// Nodal values over a [`SpaceTimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteField {
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(grid: &SpaceTimeGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::FieldLength {
                got: values.len(),
                expected: grid.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
        }
    }

    /// Sample `f(t, x)` at every node.
    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        Self {
            values: (0..grid.len()).map(|n| f(grid.time(n), &grid.position(n))).collect(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `max |self - other|`.
    pub fn max_abs_diff(&self, other: &DiscreteField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &[f64]) -> Self {
        Self {
            values: self.values.iter().zip(other).map(|(a, b)| a + scale * b).collect(),
        }
    }
}

impl Index<usize> for DiscreteField {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl IndexMut<usize> for DiscreteField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}
