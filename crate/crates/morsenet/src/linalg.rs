//! Dense real matrix utilities backing the rank arguments of the theory:
//! SVD-based numerical rank, left null rows, minimum-norm solves, and the
//! explicit full-rank solution of the underdetermined system A·B = C.
//!
//! SVD is the single rank oracle throughout the crate; every "full rank"
//! hypothesis is tested as `σ_i > rel_tol · σ_max` with a caller-supplied
//! relative tolerance (default [`DEFAULT_RANK_TOL`]).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative tolerance for rank decisions: a singular value counts as
/// nonzero when it exceeds `DEFAULT_RANK_TOL · σ_max`.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Errors produced by the linear-algebra layer.
#[derive(Debug, Error)]
pub enum LinalgError {
    /// The entry buffer does not match the declared shape.
    #[error("entry buffer of length {len} does not match a {rows}x{cols} matrix")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    /// A NaN or infinite entry was found.
    #[error("non-finite entry at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },
    /// An operation was called on a matrix with zero rows or columns.
    #[error("matrix must be non-empty")]
    EmptyMatrix,
    /// Incompatible shapes in a product or a chained product.
    #[error("dimension mismatch: cannot combine {left_rows}x{left_cols} with {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    /// A tolerance argument was zero or negative.
    #[error("tolerance must be strictly positive, got {0}")]
    NonPositiveTolerance(f64),
    /// A documented precondition of an operation was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// `minimum_norm_solve` was given an inconsistent system.
    #[error("inconsistent linear system: rank(A) = {rank_a} but rank([A|d]) = {rank_augmented}")]
    InconsistentSystem { rank_a: usize, rank_augmented: usize },
    /// A structural rank guarantee failed numerically (should not happen for
    /// well-conditioned inputs; surfaced instead of silently returning).
    #[error("rank assertion failed: measured rank {measured}, expected {expected}")]
    RankAssertion { measured: usize, expected: usize },
}

/// Dense real matrix with row-major storage and finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch { rows, cols, len: entries.len() });
        }
        for (k, e) in entries.iter().enumerate() {
            if !e.is_finite() {
                return Err(LinalgError::NonFiniteEntry { row: k / cols.max(1), col: k % cols.max(1) });
            }
        }
        Ok(Self { rows, cols, entries })
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::ShapeMismatch { rows: r, cols: c, len: row.len() });
            }
            entries.extend_from_slice(row);
        }
        Self::new(r, c, entries)
    }

    /// Builds a 1×n row matrix.
    pub fn row_vector(values: &[f64]) -> Result<Self, LinalgError> {
        Self::new(1, values.len(), values.to_vec())
    }

    /// Builds an n×1 column matrix.
    pub fn column_vector(values: &[f64]) -> Result<Self, LinalgError> {
        Self::new(values.len(), 1, values.to_vec())
    }

    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![0.0; rows * cols] }
    }

    /// Identity matrix of order n.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major entry buffer.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Entry at (row, col); panics on out-of-range indices.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "index ({row}, {col}) out of range");
        self.entries[row * self.cols + col]
    }

    /// Sets the entry at (row, col); panics on out-of-range indices or
    /// non-finite values.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(row < self.rows && col < self.cols, "index ({row}, {col}) out of range");
        assert!(value.is_finite(), "matrix entries must be finite");
        self.entries[row * self.cols + col] = value;
    }

    /// Copy of row `i` as a vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        assert!(i < self.rows, "row {i} out of range");
        self.entries[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    /// Copy of column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        assert!(j < self.cols, "column {j} out of range");
        (0..self.rows).map(|i| self.entries[i * self.cols + j]).collect()
    }

    /// Transpose.
    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.entries[j * self.rows + i] = self.entries[i * self.cols + j];
            }
        }
        out
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        Ok(Self::from_na(&(self.to_na() * rhs.to_na())))
    }

    /// Matrix-vector product `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if self.cols != v.len() {
            return Err(LinalgError::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: v.len(),
                right_cols: 1,
            });
        }
        Ok((0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.entries[i * self.cols + j] * v[j]).sum())
            .collect())
    }

    /// Entry-wise sum `self + rhs`.
    pub fn add(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(LinalgError::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let entries = self.entries.iter().zip(&rhs.entries).map(|(a, b)| a + b).collect();
        Matrix::new(self.rows, self.cols, entries)
    }

    /// Entry-wise difference `self − rhs`.
    pub fn sub(&self, rhs: &Self) -> Result<Self, LinalgError> {
        self.add(&rhs.scale(-1.0))
    }

    /// Scalar multiple.
    pub fn scale(&self, factor: f64) -> Self {
        let entries = self.entries.iter().map(|e| e * factor).collect();
        Self { rows: self.rows, cols: self.cols, entries }
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc.max(e.abs()))
    }

    /// Conversion to an nalgebra matrix (column-major internally).
    pub fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }

    /// Conversion from an nalgebra matrix.
    pub fn from_na(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), entries }
    }

    fn check_non_empty(&self) -> Result<(), LinalgError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        Ok(())
    }
}

/// Product of a compatible chain of matrices, left to right.
pub fn product_chain(factors: &[Matrix]) -> Result<Matrix, LinalgError> {
    let mut iter = factors.iter();
    let first = iter.next().ok_or(LinalgError::EmptyMatrix)?;
    let mut acc = first.clone();
    for f in iter {
        acc = acc.matmul(f)?;
    }
    Ok(acc)
}

/// Outcome of a numerical rank computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    /// Number of singular values strictly above `tolerance_used`.
    pub rank: usize,
    /// All singular values, sorted descending.
    pub singular_values: Vec<f64>,
    /// Absolute threshold actually applied (`rel_tol · σ_max`).
    pub tolerance_used: f64,
}

/// Numerical rank via SVD: the count of singular values exceeding
/// `rel_tol · σ_max`. A zero matrix has rank 0.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> Result<RankResult, LinalgError> {
    m.check_non_empty()?;
    if !(rel_tol > 0.0) {
        return Err(LinalgError::NonPositiveTolerance(rel_tol));
    }
    let svd = m.to_na().svd(false, false);
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tolerance_used = rel_tol * sigma_max;
    let rank = if sigma_max == 0.0 {
        0
    } else {
        singular_values.iter().filter(|s| **s > tolerance_used).count()
    };
    Ok(RankResult { rank, singular_values, tolerance_used })
}

/// Convenience wrapper: numerical rank at the default tolerance.
pub fn rank_of(m: &Matrix) -> Result<usize, LinalgError> {
    Ok(numerical_rank(m, DEFAULT_RANK_TOL)?.rank)
}

/// Returns true when the matrix has full rank `min(rows, cols)` at the
/// default tolerance.
pub fn is_full_rank(m: &Matrix) -> Result<bool, LinalgError> {
    Ok(rank_of(m)? == m.rows().min(m.cols()))
}

/// Unit-norm row `v` with `v·M ≈ 0`, or `None` when M has full row rank.
///
/// The witness is the left-singular direction of the smallest singular
/// value, computed as the eigenvector of `M·Mᵀ` for its smallest eigenvalue
/// (this yields the full left basis even when rows > cols, which truncated
/// SVD does not). The sign is fixed so the largest-magnitude component is
/// positive, making the result deterministic.
pub fn left_null_row(m: &Matrix, rel_tol: f64) -> Result<Option<Matrix>, LinalgError> {
    m.check_non_empty()?;
    if !(rel_tol > 0.0) {
        return Err(LinalgError::NonPositiveTolerance(rel_tol));
    }
    let rank = numerical_rank(m, rel_tol)?.rank;
    if rank >= m.rows() {
        return Ok(None);
    }
    let a = m.to_na();
    let gram = &a * a.transpose();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut min_idx = 0;
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda < eig.eigenvalues[min_idx] {
            min_idx = k;
        }
    }
    let mut v: DVector<f64> = eig.eigenvectors.column(min_idx).into();
    v /= v.norm();
    // Fix the sign deterministically.
    let lead = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if lead < 0.0 {
        v = -v;
    }
    Matrix::row_vector(v.as_slice()).map(Some)
}

/// Indices of entries of a row matrix that are numerically nonzero relative
/// to its largest entry.
fn nonzero_indices(row: &Matrix, rel_tol: f64) -> Vec<usize> {
    let scale = row.max_abs();
    (0..row.cols()).filter(|&j| row.get(0, j).abs() > rel_tol * scale).collect()
}

/// Explicit full-rank solution B (n×m) of A·B = C for nonzero rows
/// A ∈ ℝ^{1×n}, C ∈ ℝ^{1×m} with n ≤ m.
///
/// Writing `{i_1 < … < i_n̄}` for the nonzero entries of A and
/// `{j_1 < … < j_m̄}` for those of C, the construction places:
///
/// * if m̄ ≥ n̄: `B[i_k, j_k] = C[j_k]/A[i_k]` for k ≤ n̄ and the surplus
///   columns `B[i_n̄, j_k] = C[j_k]/A[i_n̄]` for k > n̄;
/// * if m̄ < n̄: `B[i_k, j_k] = C[j_k]/A[i_k]` for k ≤ m̄, and for each
///   remaining k a fresh column j_k carries the cancelling pair
///   `B[i_k, j_k] = A[i_1]`, `B[i_1, j_k] = −A[i_k]`, which contributes
///   nothing to A·B while keeping the rows independent.
///
/// Rows i with A[i] = 0 do not influence A·B; they are completed with an
/// orthonormal basis of the null space of the constructed rows, so
/// rank(B) = n holds structurally.
pub fn full_rank_solution(a: &Matrix, c: &Matrix) -> Result<Matrix, LinalgError> {
    a.check_non_empty()?;
    c.check_non_empty()?;
    if a.rows() != 1 || c.rows() != 1 {
        return Err(LinalgError::Precondition("A and C must be row matrices".into()));
    }
    let n = a.cols();
    let m = c.cols();
    if n > m {
        return Err(LinalgError::Precondition(format!(
            "A has {n} columns but C has only {m}; need n <= m"
        )));
    }
    let i_set = nonzero_indices(a, DEFAULT_RANK_TOL);
    let j_set = nonzero_indices(c, DEFAULT_RANK_TOL);
    if i_set.is_empty() {
        return Err(LinalgError::Precondition("A must be nonzero".into()));
    }
    if j_set.is_empty() {
        return Err(LinalgError::Precondition("C must be nonzero".into()));
    }
    let n_bar = i_set.len();
    let m_bar = j_set.len();

    let mut b = Matrix::zeros(n, m);
    let mut used_cols = vec![false; m];
    if m_bar >= n_bar {
        for k in 0..n_bar {
            b.set(i_set[k], j_set[k], c.get(0, j_set[k]) / a.get(0, i_set[k]));
            used_cols[j_set[k]] = true;
        }
        let last = i_set[n_bar - 1];
        for &j in j_set.iter().skip(n_bar) {
            b.set(last, j, c.get(0, j) / a.get(0, last));
            used_cols[j] = true;
        }
    } else {
        for k in 0..m_bar {
            b.set(i_set[k], j_set[k], c.get(0, j_set[k]) / a.get(0, i_set[k]));
            used_cols[j_set[k]] = true;
        }
        // Remaining nonzero rows of A get a cancelling pair in a fresh column.
        let fresh: Vec<usize> = (0..m).filter(|&j| !used_cols[j]).collect();
        let mut fresh = fresh.into_iter();
        for &i in i_set.iter().skip(m_bar) {
            let j = fresh.next().ok_or_else(|| {
                LinalgError::Precondition("not enough columns for the cancelling pairs".into())
            })?;
            b.set(i, j, a.get(0, i_set[0]));
            b.set(i_set[0], j, -a.get(0, i));
            used_cols[j] = true;
        }
    }

    // Rows i with A[i] = 0 are free: complete them with an orthonormal basis
    // of the null space of the rows constructed so far.
    let free_rows: Vec<usize> = (0..n).filter(|i| !i_set.contains(i)).collect();
    if !free_rows.is_empty() {
        let constructed: Vec<Vec<f64>> = i_set.iter().map(|&i| b.row(i)).collect();
        let basis = null_space_basis(&Matrix::from_rows(&constructed)?)?;
        if basis.len() < free_rows.len() {
            return Err(LinalgError::RankAssertion {
                measured: n_bar + basis.len(),
                expected: n,
            });
        }
        for (slot, row) in free_rows.iter().zip(basis) {
            for (j, value) in row.iter().enumerate() {
                b.set(*slot, j, *value);
            }
        }
    }

    // Structural guarantees, verified numerically before returning.
    let residual = a.matmul(&b)?.sub(c)?.frobenius_norm();
    if residual > 1e-12 * c.frobenius_norm().max(1e-300) {
        return Err(LinalgError::Precondition(format!(
            "constructed solution has residual {residual:.3e}"
        )));
    }
    let measured = rank_of(&b)?;
    if measured != n {
        return Err(LinalgError::RankAssertion { measured, expected: n });
    }
    Ok(b)
}

/// Orthonormal basis of the null space of M: vectors v with M·v = 0,
/// returned in a deterministic order (ascending eigenvalue of MᵀM).
pub fn null_space_basis(m: &Matrix) -> Result<Vec<Vec<f64>>, LinalgError> {
    let rank = numerical_rank(m, DEFAULT_RANK_TOL)?;
    let a = m.to_na();
    // Eigenvectors of MᵀM for the smallest eigenvalues span the null space.
    let gram = a.transpose() * &a;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&p, &q| {
        eig.eigenvalues[p].partial_cmp(&eig.eigenvalues[q]).expect("finite eigenvalues")
    });
    let dim = m.cols() - rank.rank;
    let mut basis = Vec::with_capacity(dim);
    for &k in order.iter().take(dim) {
        let mut v: DVector<f64> = eig.eigenvectors.column(k).into();
        v /= v.norm();
        let lead = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v = -v;
        }
        basis.push(v.iter().copied().collect());
    }
    Ok(basis)
}

/// Minimum-norm solution of A·c = d via the pseudoinverse.
///
/// The system must be consistent: rank(A) is compared with rank([A | d]) at
/// the default tolerance, and an inconsistent system is reported with both
/// ranks rather than silently least-squares-fitted.
pub fn minimum_norm_solve(a: &Matrix, d: &[f64]) -> Result<Vec<f64>, LinalgError> {
    a.check_non_empty()?;
    if d.len() != a.rows() {
        return Err(LinalgError::DimensionMismatch {
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: d.len(),
            right_cols: 1,
        });
    }
    let rank_a = rank_of(a)?;
    let mut augmented_rows = Vec::with_capacity(a.rows());
    for i in 0..a.rows() {
        let mut row = a.row(i);
        row.push(d[i]);
        augmented_rows.push(row);
    }
    let rank_augmented = rank_of(&Matrix::from_rows(&augmented_rows)?)?;
    if rank_augmented > rank_a {
        return Err(LinalgError::InconsistentSystem { rank_a, rank_augmented });
    }
    let c = least_squares_minimum_norm(a, d)?;
    let residual: f64 = a
        .matvec(&c)?
        .iter()
        .zip(d)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let d_norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if residual > 1e-10 * d_norm.max(1.0) {
        return Err(LinalgError::InconsistentSystem { rank_a, rank_augmented });
    }
    Ok(c)
}

/// Minimum-norm least-squares solution of A·c ≈ d via the pseudoinverse.
/// Unlike [`minimum_norm_solve`] this never rejects inconsistent systems;
/// it returns the minimizer of ‖A·c − d‖ of smallest norm.
pub fn least_squares_minimum_norm(a: &Matrix, d: &[f64]) -> Result<Vec<f64>, LinalgError> {
    a.check_non_empty()?;
    if d.len() != a.rows() {
        return Err(LinalgError::DimensionMismatch {
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: d.len(),
            right_cols: 1,
        });
    }
    let svd = a.to_na().svd(true, true);
    let d_vec = DVector::from_column_slice(d);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = DEFAULT_RANK_TOL * sigma_max;
    let c = svd
        .solve(&d_vec, eps)
        .map_err(|msg| LinalgError::Precondition(format!("SVD solve failed: {msg}")))?;
    Ok(c.iter().copied().collect())
}

/// Rank certificate for a chain of matrix factors: returns true exactly when
/// every factor has full rank and the dimension sequence along the chain is
/// monotone (non-increasing or non-decreasing). In that case the product
/// provably has rank `min(first rows, last cols)` by repeated application of
/// Sylvester's rank inequality, and this is re-checked numerically.
pub fn monotone_product_rank_check(factors: &[Matrix]) -> Result<bool, LinalgError> {
    if factors.is_empty() {
        return Err(LinalgError::EmptyMatrix);
    }
    let mut dims = Vec::with_capacity(factors.len() + 1);
    dims.push(factors[0].rows());
    for pair in factors.windows(2) {
        if pair[0].cols() != pair[1].rows() {
            return Err(LinalgError::DimensionMismatch {
                left_rows: pair[0].rows(),
                left_cols: pair[0].cols(),
                right_rows: pair[1].rows(),
                right_cols: pair[1].cols(),
            });
        }
    }
    for f in factors {
        dims.push(f.cols());
    }
    let non_increasing = dims.windows(2).all(|w| w[0] >= w[1]);
    let non_decreasing = dims.windows(2).all(|w| w[0] <= w[1]);
    if !(non_increasing || non_decreasing) {
        return Ok(false);
    }
    for f in factors {
        if !is_full_rank(f)? {
            return Ok(false);
        }
    }
    let expected = dims[0].min(*dims.last().expect("non-empty dims"));
    let measured = rank_of(&product_chain(factors)?)?;
    if measured != expected {
        return Err(LinalgError::RankAssertion { measured, expected });
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rank_of_identity_is_full() {
        let r = numerical_rank(&Matrix::identity(3), 1e-8).unwrap();
        assert_eq!(r.rank, 3);
        assert_eq!(r.singular_values.len(), 3);
    }

    #[test]
    fn rank_of_dependent_rows_is_one() {
        let m = mat(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(numerical_rank(&m, 1e-8).unwrap().rank, 1);
    }

    #[test]
    fn rank_of_zero_matrix_is_zero() {
        assert_eq!(numerical_rank(&Matrix::zeros(2, 3), 1e-8).unwrap().rank, 0);
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFiniteEntry { .. })
        ));
    }

    #[test]
    fn left_null_row_of_dependent_rows() {
        let m = mat(&[&[1.0, 1.0], &[2.0, 2.0]]);
        let v = left_null_row(&m, 1e-8).unwrap().expect("rows are dependent");
        let residual = v.matmul(&m).unwrap().frobenius_norm();
        assert!(residual <= 1e-10 * m.frobenius_norm());
        // Proportional to (2, −1): the ratio of components is −2.
        assert!((v.get(0, 0) / v.get(0, 1) + 2.0).abs() < 1e-9);
    }

    #[test]
    fn left_null_row_none_for_full_row_rank() {
        assert!(left_null_row(&Matrix::identity(2), 1e-8).unwrap().is_none());
    }

    #[test]
    fn left_null_row_single_column_stack() {
        let m = mat(&[&[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0]]);
        let v = left_null_row(&m, 1e-8).unwrap().expect("rank 1 with 3 rows");
        assert!(v.matmul(&m).unwrap().frobenius_norm() <= 1e-12);
    }

    #[test]
    fn full_rank_solution_scalar() {
        let b = full_rank_solution(&mat(&[&[1.0]]), &mat(&[&[5.0]])).unwrap();
        assert_eq!(b.entries(), &[5.0]);
    }

    #[test]
    fn full_rank_solution_wide_branch() {
        let a = mat(&[&[2.0, 0.0]]);
        let c = mat(&[&[4.0, 6.0]]);
        let b = full_rank_solution(&a, &c).unwrap();
        assert_eq!(b.row(0), vec![2.0, 3.0]);
        assert!((a.matmul(&b).unwrap().sub(&c).unwrap()).frobenius_norm() <= 1e-12);
        assert_eq!(rank_of(&b).unwrap(), 2);
    }

    #[test]
    fn full_rank_solution_sparse_rhs_branch() {
        let a = mat(&[&[1.0, 1.0]]);
        let c = mat(&[&[1.0, 0.0, 0.0]]);
        let b = full_rank_solution(&a, &c).unwrap();
        assert_eq!(b.row(0), vec![1.0, -1.0, 0.0]);
        assert_eq!(b.row(1), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn full_rank_solution_dense_rhs_no_fresh_columns() {
        // A = (1, 0), C = (1, 1): the free row must still make rank(B) = 2,
        // even though every column of C is occupied.
        let a = mat(&[&[1.0, 0.0]]);
        let c = mat(&[&[1.0, 1.0]]);
        let b = full_rank_solution(&a, &c).unwrap();
        assert!((a.matmul(&b).unwrap().sub(&c).unwrap()).frobenius_norm() <= 1e-12);
        assert_eq!(rank_of(&b).unwrap(), 2);
    }

    #[test]
    fn full_rank_solution_rejects_zero_inputs() {
        assert!(full_rank_solution(&Matrix::zeros(1, 2), &mat(&[&[1.0, 1.0]])).is_err());
        assert!(full_rank_solution(&mat(&[&[1.0, 1.0]]), &Matrix::zeros(1, 2)).is_err());
        assert!(full_rank_solution(&mat(&[&[1.0, 1.0, 1.0]]), &mat(&[&[1.0, 1.0]])).is_err());
    }

    #[test]
    fn minimum_norm_solve_identity() {
        let c = minimum_norm_solve(&Matrix::identity(2), &[3.0, 4.0]).unwrap();
        assert!((c[0] - 3.0).abs() < 1e-12 && (c[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn minimum_norm_solve_underdetermined() {
        let c = minimum_norm_solve(&mat(&[&[1.0, 1.0]]), &[2.0]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-10 && (c[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn minimum_norm_solve_consistent_overdetermined() {
        let c = minimum_norm_solve(&mat(&[&[1.0], &[2.0]]), &[1.0, 2.0]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn minimum_norm_solve_reports_inconsistency() {
        let err = minimum_norm_solve(&mat(&[&[1.0], &[1.0]]), &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, LinalgError::InconsistentSystem { rank_a: 1, rank_augmented: 2 }));
    }

    #[test]
    fn monotone_chain_accepted() {
        let chain = vec![mat(&[&[1.0, 2.0]]), mat(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]])];
        assert!(monotone_product_rank_check(&chain).unwrap());
    }

    #[test]
    fn non_monotone_chain_rejected() {
        let chain = vec![mat(&[&[1.0], &[2.0], &[3.0]]), mat(&[&[1.0, 1.0, 0.0]])];
        assert!(!monotone_product_rank_check(&chain).unwrap());
    }

    #[test]
    fn identity_chain_accepted() {
        let chain = vec![Matrix::identity(2), Matrix::identity(2)];
        assert!(monotone_product_rank_check(&chain).unwrap());
    }

    #[test]
    fn rank_invariant_under_transpose() {
        let m = mat(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(rank_of(&m).unwrap(), rank_of(&m.transpose()).unwrap());
    }
}
