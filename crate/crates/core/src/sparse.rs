//! Row-compressed sparse matrices and the direct solver wrapper.

use std::io::Write;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::SolveError;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Collects the sparsity pattern from dense element blocks.
#[derive(Debug, Clone)]
pub struct PatternBuilder {
    ncols: usize,
    rows: Vec<Vec<u32>>,
}

impl PatternBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { ncols, rows: vec![Vec::new(); nrows] }
    }

    /// Couples every pair in `dofs`.
    pub fn add_block(&mut self, dofs: &[usize]) {
        for &i in dofs {
            self.rows[i].extend(dofs.iter().map(|&j| j as u32));
        }
    }

    pub fn add_entry(&mut self, i: usize, j: usize) {
        self.rows[i].push(j as u32);
    }

    pub fn build(self) -> CsrMatrix {
        let nrows = self.rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for mut row in self.rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend(row.into_iter().map(|j| j as usize));
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix { nrows, ncols: self.ncols, row_ptr, col_idx, values: vec![0.0; nnz] }
    }
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut builder = PatternBuilder::new(nrows, ncols);
        for &(i, j, _) in triplets {
            builder.add_entry(i, j);
        }
        let mut m = builder.build();
        for &(i, j, v) in triplets {
            m.add_to(i, j, v);
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, &(0..n).map(|i| (i, i, 1.0)).collect::<Vec<_>>())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| range.start + k)
    }

    /// Adds `v` at `(i, j)`, which must be part of the pattern.
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// `a * self + b * other` over the union of both patterns.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(col_idx.capacity());
        for i in 0..self.nrows {
            let mut x = self.row(i).peekable();
            let mut y = other.row(i).peekable();
            loop {
                match (x.peek().copied(), y.peek().copied()) {
                    (Some((jx, vx)), Some((jy, vy))) if jx == jy => {
                        col_idx.push(jx);
                        values.push(a * vx + b * vy);
                        x.next();
                        y.next();
                    }
                    (Some((jx, vx)), Some((jy, _))) if jx < jy => {
                        col_idx.push(jx);
                        values.push(a * vx);
                        x.next();
                    }
                    (Some((jx, vx)), None) => {
                        col_idx.push(jx);
                        values.push(a * vx);
                        x.next();
                    }
                    (_, Some((jy, vy))) => {
                        col_idx.push(jy);
                        values.push(b * vy);
                        y.next();
                    }
                    (None, None) => break,
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }

    /// `max |a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// MatrixMarket coordinate format, 1-based indices.
    pub fn write_matrix_market(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual accepted after a direct solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-11;

/// Sparse LU factorization (partial pivoting, fill-reducing column order).
pub struct LuSolver {
    matrix: CsrMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for LuSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuSolver").field("n", &self.matrix.nrows).finish()
    }
}

impl LuSolver {
    pub fn factor(matrix: CsrMatrix) -> Result<Self, SolveError> {
        assert_eq!(matrix.nrows, matrix.ncols, "LU needs a square matrix");
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..matrix.nrows)
            .flat_map(|i| matrix.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(matrix.nrows, matrix.ncols, &triplets)
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { .. } => {
                SolveError::Singular { condition: f64::INFINITY }
            }
            other => SolveError::Factorization(format!("{other:?}")),
        })?;
        Ok(Self { matrix, lu })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Col::<f64>::from_fn(b.len(), |i| b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| x[i]).collect()
    }

    /// Solves with one step of iterative refinement and checks
    /// `||Ax - b|| <= RESIDUAL_TOLERANCE * ||b||`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        let n = self.matrix.nrows;
        if b.len() != n {
            return Err(SolveError::Dimension { matrix: n, vector: b.len() });
        }
        let b_norm = norm2(b);
        if b_norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut x = self.raw_solve(b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::Singular { condition: f64::INFINITY });
        }
        let residual = |x: &[f64]| -> Vec<f64> {
            self.matrix.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect()
        };
        let mut r = residual(&x);
        for _ in 0..2 {
            if norm2(&r) <= 1e-3 * RESIDUAL_TOLERANCE * b_norm {
                break;
            }
            let dx = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            r = residual(&x);
        }
        let rel = norm2(&r) / b_norm;
        if !rel.is_finite() {
            return Err(SolveError::Singular { condition: f64::INFINITY });
        }
        if rel > RESIDUAL_TOLERANCE {
            let x_norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let b_max = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let condition = self.matrix.max_abs() * x_norm / b_max;
            if condition > 1e14 {
                return Err(SolveError::Singular { condition });
            }
            return Err(SolveError::Residual { residual: rel, tolerance: RESIDUAL_TOLERANCE });
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.max_asymmetry(), 1.0);
    }

    #[test]
    fn linear_combination_merges_patterns() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 1, 3.0)]);
        let c = a.linear_combination(2.0, &b, -1.0);
        assert_eq!(c.get(0, 0), 2.0);
        assert_eq!(c.get(0, 1), -2.0);
        assert_eq!(c.get(1, 1), -1.0);
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let solver = LuSolver::factor(CsrMatrix::identity(4)).unwrap();
        let b = vec![1.0, -2.0, 3.5, 0.25];
        assert_eq!(solver.solve(&b).unwrap(), b);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let res = LuSolver::factor(m).and_then(|s| s.solve(&[1.0, 2.0]));
        assert!(matches!(res, Err(SolveError::Singular { .. }) | Err(SolveError::Residual { .. })), "{res:?}");
    }

    #[test]
    fn matrix_market_header() {
        let m = CsrMatrix::identity(2);
        let mut out = Vec::new();
        m.write_matrix_market(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 "));
    }
}
