//! Compressed-column sparse matrices with a fixed pattern and direct LU solves.
//!
//! The factorization itself is delegated to `faer`; the symbolic analysis is
//! cached on the pattern so Newton iterations only pay for the numeric phase.

use std::sync::{Arc, OnceLock};

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearSolveError {
    #[error("matrix is singular ({0})")]
    Singular(String),
    #[error("dimension mismatch: matrix is {n}x{n}, right-hand side has {rhs}")]
    Dimension { n: usize, rhs: usize },
    #[error("solve is inaccurate: backward error {backward_error:e}")]
    Inaccurate { backward_error: f64 },
}

/// Backward-error bound accepted by [`linear_solve`].
pub const BACKWARD_ERROR_TOL: f64 = 1e-10;

/// Sorted compressed-column structure of a square matrix.
pub struct SparsityPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    symbolic_lu: OnceLock<Result<SymbolicLu<usize>, String>>,
}

impl std::fmt::Debug for SparsityPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparsityPattern")
            .field("n", &self.n)
            .field("nnz", &self.row_idx.len())
            .finish()
    }
}

impl SparsityPattern {
    /// Builds the pattern from the row indices present in each column.
    pub fn from_columns(n: usize, columns: Vec<Vec<usize>>) -> Self {
        assert_eq!(columns.len(), n);
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut rows in columns {
            rows.sort_unstable();
            rows.dedup();
            assert!(rows.last().is_none_or(|&r| r < n), "row index out of range");
            row_idx.extend(rows);
            col_ptr.push(row_idx.len());
        }
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
        Self {
            n,
            col_ptr,
            row_idx,
            symbolic,
            symbolic_lu: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn column(&self, col: usize) -> &[usize] {
        &self.row_idx[self.col_ptr[col]..self.col_ptr[col + 1]]
    }

    /// Storage position of entry `(row, col)`, if structurally present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.col_ptr[col];
        self.column(col).binary_search(&row).ok().map(|k| start + k)
    }

    fn symbolic_lu(&self) -> Result<SymbolicLu<usize>, LinearSolveError> {
        self.symbolic_lu
            .get_or_init(|| SymbolicLu::try_new(self.symbolic.as_ref()).map_err(|e| format!("{e:?}")))
            .clone()
            .map_err(LinearSolveError::Singular)
    }
}

/// Square sparse matrix over a shared pattern.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut columns = vec![Vec::new(); n];
        for &(r, c, _) in triplets {
            columns[c].push(r);
        }
        let mut m = Self::zeros(Arc::new(SparsityPattern::from_columns(n, columns)));
        for &(r, c, v) in triplets {
            m.add(r, c, v);
        }
        m
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `value` to entry `(row, col)`. Panics if the entry is not in the pattern.
    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        let k = self
            .pattern
            .position(row, col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) not in sparsity pattern"));
        self.values[k] += value;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.position(row, col).map_or(0.0, |k| self.values[k])
    }

    /// Replaces row `row` by the unit row `e_row`. The pattern must be
    /// structurally symmetric and contain the diagonal.
    pub fn set_unit_row(&mut self, row: usize) {
        for k in self.pattern.col_ptr[row]..self.pattern.col_ptr[row + 1] {
            let col = self.pattern.row_idx[k];
            if let Some(pos) = self.pattern.position(row, col) {
                self.values[pos] = 0.0;
            }
        }
        let diag = self.pattern.position(row, row).expect("diagonal entry in pattern");
        self.values[diag] = 1.0;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for (col, &xc) in x.iter().enumerate() {
            for k in self.pattern.col_ptr[col]..self.pattern.col_ptr[col + 1] {
                y[self.pattern.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.n()];
        for (k, &r) in self.pattern.row_idx.iter().enumerate() {
            rows[r] += self.values[k].abs();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// Dense column `col`.
    pub fn column_dense(&self, col: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for k in self.pattern.col_ptr[col]..self.pattern.col_ptr[col + 1] {
            out[self.pattern.row_idx[k]] = self.values[k];
        }
        out
    }

    fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.pattern.symbolic.as_ref(), &self.values)
    }
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `J x = rhs` by sparse LU with partial pivoting.
///
/// The solution is accepted when its normwise backward error
/// `|J x - rhs| / (|J| |x| + |rhs|)` is below [`BACKWARD_ERROR_TOL`]; one step
/// of iterative refinement is applied before the check.
pub fn linear_solve(j: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinearSolveError> {
    let n = j.n();
    if rhs.len() != n {
        return Err(LinearSolveError::Dimension { n, rhs: rhs.len() });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let symbolic = j.pattern.symbolic_lu()?;
    let lu =
        Lu::try_new_with_symbolic(symbolic, j.as_faer()).map_err(|e| LinearSolveError::Singular(format!("{e:?}")))?;
    let solve = |b: &[f64]| -> Vec<f64> {
        let col = Col::<f64>::from_fn(n, |i| b[i]);
        let x = lu.solve(&col);
        (0..n).map(|i| x[i]).collect()
    };
    let mut x = solve(rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinearSolveError::Singular("non-finite solution".into()));
    }
    let residual = |x: &[f64]| -> Vec<f64> { j.mul_vec(x).iter().zip(rhs).map(|(a, b)| a - b).collect() };
    let r = residual(&x);
    if norm_inf(&r) > 0.0 {
        let dx = solve(&r);
        if dx.iter().all(|v| v.is_finite()) {
            let refined: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a - b).collect();
            if norm_inf(&residual(&refined)) <= norm_inf(&r) {
                x = refined;
            }
        }
    }
    let scale = j.norm_inf() * norm_inf(&x) + norm_inf(rhs);
    let backward_error = if scale > 0.0 {
        norm_inf(&residual(&x)) / scale
    } else {
        0.0
    };
    if !(backward_error <= BACKWARD_ERROR_TOL) {
        return Err(LinearSolveError::Inaccurate { backward_error });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_returns_rhs() {
        let n = 5;
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        let m = SparseMatrix::from_triplets(n, &triplets);
        let rhs = vec![1.0, -2.0, 3.5, 0.0, 7.25];
        assert_eq!(linear_solve(&m, &rhs).unwrap(), rhs);
    }

    #[test]
    fn poisson_tridiagonal_closed_form() {
        // -u'' = 1 on (0,1), u(0) = u(1) = 0, four cells: nodal values x(1-x)/2
        let n = 5;
        let h = 0.25;
        let mut t = vec![(0, 0, 1.0), (n - 1, n - 1, 1.0)];
        let mut rhs = vec![h; n];
        rhs[0] = 0.0;
        rhs[n - 1] = 0.0;
        for i in 1..n - 1 {
            t.extend([(i, i - 1, -1.0 / h), (i, i, 2.0 / h), (i, i + 1, -1.0 / h)]);
        }
        let m = SparseMatrix::from_triplets(n, &t);
        let u = linear_solve(&m, &rhs).unwrap();
        let expected = [0.0, 0.09375, 0.125, 0.09375, 0.0];
        for (a, b) in u.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_matrix_is_singular() {
        let m = SparseMatrix::from_triplets(3, &[(0, 0, 0.0), (1, 1, 0.0), (2, 2, 0.0)]);
        assert!(linear_solve(&m, &[1.0, 1.0, 1.0]).is_err());
        let empty = SparseMatrix::from_triplets(2, &[]);
        assert!(linear_solve(&empty, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn rank_deficient_numeric_is_rejected() {
        let m = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(linear_solve(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn needs_pivoting() {
        let m = SparseMatrix::from_triplets(2, &[(0, 1, 2.0), (1, 0, 3.0), (1, 1, 1.0)]);
        let x = linear_solve(&m, &[4.0, 5.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(x[1], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn unit_row_replacement() {
        let mut m = SparseMatrix::from_triplets(
            3,
            &[
                (0, 0, 2.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 2.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (2, 2, 2.0),
            ],
        );
        m.set_unit_row(1);
        assert_eq!((m.get(1, 0), m.get(1, 1), m.get(1, 2)), (0.0, 1.0, 0.0));
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![4.0, 2.0, 8.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(
            linear_solve(&m, &[1.0]),
            Err(LinearSolveError::Dimension { .. })
        ));
    }
}
