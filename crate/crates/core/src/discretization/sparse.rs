//! Compressed sparse row matrix with a sparse LU backend.

use faer::linalg::solvers::Solve;
use faer::sparse::{linalg::solvers::Lu, SparseColMat, Triplet};
use faer::Mat;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("linear solve produced non-finite values")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Square matrix from per-row entry lists; duplicate columns are summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), n, "row count");
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n, "column {c} out of range");
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// Largest `|entry|` per row.
    pub fn row_max_abs(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).fold(0.0, |acc: f64, (_, v)| acc.max(v.abs())))
            .collect()
    }

    pub fn lu(&self) -> Result<SparseLu, LinearSolveError> {
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))?;
        Ok(SparseLu { lu, n: self.n })
    }

    /// LU solve followed by iterative refinement against this matrix.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinearSolveError> {
        let lu = self.lu()?;
        let mut x = lu.solve(rhs)?;
        let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for _ in 0..3 {
            let ax = self.matvec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rn = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if rn <= 1e-12 * scale {
                break;
            }
            let dx = lu.solve(&r)?;
            x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
        }
        Ok(x)
    }
}

pub struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinearSolveError> {
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LinearSolveError::NonFinite);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_matvec_matches() {
        let a = SparseMatrix::from_rows(
            3,
            vec![
                vec![(0, 2.0), (2, 1.0), (0, 1.0)],
                vec![(1, -1.0)],
                vec![(0, 0.5), (2, 4.0)],
            ],
        );
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.matvec(&[1.0, 2.0, 3.0]), vec![6.0, -2.0, 12.5]);
    }

    #[test]
    fn solves_a_tridiagonal_system() {
        let n = 50;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -2.0));
                }
                r
            })
            .collect();
        let a = SparseMatrix::from_rows(n, rows);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&x_true);
        let x = a.solve(&b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
