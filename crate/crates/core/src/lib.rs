//! Solver for local first-order extended mean field games on the torus
//! through their quasilinear elliptic reformulation in space-time.

pub mod discretization;
pub mod models;
pub mod reformulation;
pub mod solver;
pub mod verification;
