//! Plain-text field format.
//!
//! One header line starting with `#`, then one whitespace-separated row per
//! node in index order: `t x_1 [x_2] value`. Values are written with 17
//! significant digits, so a write/read cycle is bit exact.

use std::io::{BufRead, Write};

use thiserror::Error;

use super::{DiscreteField, SpaceTimeGrid};

const COORD_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FieldIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("field file does not match the grid: {0}")]
    GridMismatch(String),
}

pub fn write_field<W: Write>(grid: &SpaceTimeGrid, field: &DiscreteField, mut out: W) -> Result<(), FieldIoError> {
    if field.len() != grid.len() {
        return Err(FieldIoError::GridMismatch(format!(
            "field has {} values, grid has {} nodes",
            field.len(),
            grid.len()
        )));
    }
    let axes: Vec<String> = (1..=grid.dim()).map(|i| format!("x{i}")).collect();
    writeln!(
        out,
        "# d={} nx={} nt={} horizon={:.16e} columns: t {} value",
        grid.dim(),
        grid.nx(),
        grid.nt(),
        grid.horizon(),
        axes.join(" ")
    )?;
    for node in 0..grid.len() {
        let mut line = format!("{:.16e}", grid.time(node));
        for x in grid.position(node) {
            line.push_str(&format!(" {x:.16e}"));
        }
        line.push_str(&format!(" {:.16e}", field[node]));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Read a field and check every row against the node coordinates of `grid`.
pub fn read_field<R: BufRead>(grid: &SpaceTimeGrid, input: R) -> Result<DiscreteField, FieldIoError> {
    let cols = grid.dim() + 2;
    let mut values = Vec::with_capacity(grid.len());
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let nums = trimmed
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| FieldIoError::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if nums.len() != cols {
            return Err(FieldIoError::Parse {
                line: lineno + 1,
                msg: format!("expected {cols} columns, found {}", nums.len()),
            });
        }
        let node = values.len();
        if node >= grid.len() {
            return Err(FieldIoError::GridMismatch(format!("more than {} rows", grid.len())));
        }
        let mut expected = vec![grid.time(node)];
        expected.extend(grid.position(node));
        if expected.iter().zip(&nums).any(|(e, g)| (e - g).abs() > COORD_TOL) {
            return Err(FieldIoError::GridMismatch(format!(
                "row {} has coordinates {:?}, node {node} sits at {expected:?}",
                lineno + 1,
                &nums[..cols - 1]
            )));
        }
        values.push(nums[cols - 1]);
    }
    DiscreteField::new(grid, values).map_err(|e| FieldIoError::GridMismatch(e.to_string()))
}
