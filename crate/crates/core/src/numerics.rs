//! Dense vectors and matrices for desk-scale problems.
//!
//! Everything here is plain `f64` storage with row-major matrices. The
//! Cholesky solve and the symmetric eigenvalue routines delegate to
//! `nalgebra`; the algorithms under test never call them, they only back the
//! analytic reference oracles.

use std::fmt;
use std::ops::{Index, IndexMut};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("empty vector or matrix")]
    Empty,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

fn check_dim(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(NumericsError::DimensionMismatch { op, expected, got });
    }
    Ok(())
}

/// A dense column vector.
#[derive(Clone, PartialEq, Default)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    /// Builds a vector after checking it is non-empty and finite.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(NumericsError::Empty);
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(i));
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self {
            data: vec![value; dim],
        }
    }

    pub fn unit(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, xi) in self.data.iter_mut().zip(&x.data) {
            *s += a * xi;
        }
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(data: Vec<f64>) -> Self {
        Self { data }
    }
}

impl From<&[f64]> for DenseVector {
    fn from(data: &[f64]) -> Self {
        Self {
            data: data.to_vec(),
        }
    }
}

impl<const D: usize> From<[f64; D]> for DenseVector {
    fn from(data: [f64; D]) -> Self {
        Self {
            data: data.to_vec(),
        }
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.data).finish()
    }
}

/// A dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    symmetric: bool,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(NumericsError::Empty);
        }
        check_dim("DenseMatrix::new", rows * cols, data.len())?;
        Ok(Self {
            rows,
            cols,
            data,
            symmetric: false,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            check_dim("DenseMatrix::from_rows", c, row.len())?;
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            symmetric: rows == cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m.data[i * n + i] = e;
        }
        m.symmetric = true;
        m
    }

    /// Builds a matrix column by column.
    pub fn from_columns(columns: &[DenseVector]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, DenseVector::dim);
        let mut m = Self::new(rows, cols, vec![0.0; rows * cols])?;
        for (j, col) in columns.iter().enumerate() {
            check_dim("DenseMatrix::from_columns", rows, col.dim())?;
            for i in 0..rows {
                m.data[i * cols + j] = col[i];
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
        self.symmetric = false;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t.symmetric = self.symmetric;
        t
    }

    /// Returns `(self + selfᵀ) / 2` with the symmetry flag set. Entries are
    /// mirrored so the result is symmetric bit-for-bit.
    pub fn symmetrize(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(NumericsError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut s = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                s.data[i * n + j] = v;
                s.data[j * n + i] = v;
            }
        }
        s.symmetric = true;
        Ok(s)
    }

    pub fn matvec(&self, v: &DenseVector) -> Result<DenseVector> {
        check_dim("matvec", self.cols, v.dim())?;
        Ok(self.matvec_unchecked(v))
    }

    pub(crate) fn matvec_unchecked(&self, v: &DenseVector) -> DenseVector {
        let x = v.as_slice();
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect::<Vec<f64>>()
            .into()
    }

    /// `selfᵀ · v`
    pub fn matvec_t(&self, v: &DenseVector) -> Result<DenseVector> {
        check_dim("matvec_t", self.rows, v.dim())?;
        Ok(self.matvec_t_unchecked(v))
    }

    pub(crate) fn matvec_t_unchecked(&self, v: &DenseVector) -> DenseVector {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out.into()
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_dim("matmul", self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        out.symmetric = false;
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
            symmetric: self.symmetric,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim("add(rows)", self.rows, other.rows)?;
        check_dim("add(cols)", self.cols, other.cols)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            symmetric: self.symmetric && other.symmetric,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows,
            cols,
            data,
            symmetric: false,
        }
    }

    /// Eigenvalues of a symmetric matrix in ascending order.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        if self.rows != self.cols {
            return Err(NumericsError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let sym = self.symmetrize()?;
        let mut ev: Vec<f64> = sym.to_nalgebra().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        let gram = self.transpose().matmul(self).expect("square gram");
        gram.symmetric_eigenvalues()
            .ok()
            .and_then(|ev| ev.last().copied())
            .map_or(0.0, |l| l.max(0.0).sqrt())
    }

    /// Orthogonal factor of the QR decomposition of a square matrix.
    pub fn orthogonal_factor(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(NumericsError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let q = self.to_nalgebra().qr().q();
        Ok(Self::from_nalgebra(&q))
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// `A · v`
pub fn matvec(a: &DenseMatrix, v: &DenseVector) -> Result<DenseVector> {
    a.matvec(v)
}

/// Solves `A v = b` for symmetric positive definite `A` by Cholesky
/// factorization.
pub fn solve_spd(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    if a.rows != a.cols {
        return Err(NumericsError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    check_dim("solve_spd", a.rows, b.dim())?;
    let chol = a
        .symmetrize()?
        .to_nalgebra()
        .cholesky()
        .ok_or(NumericsError::NotPositiveDefinite)?;
    let x = chol.solve(&DVector::from_column_slice(b.as_slice()));
    let out = DenseVector::from(x.as_slice());
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite(i));
    }
    Ok(out)
}

/// Solves `A X = B` column by column for SPD `A`.
pub fn solve_spd_matrix(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_dim("solve_spd_matrix", a.rows, b.rows)?;
    let bt = b.transpose();
    let cols = (0..b.cols)
        .map(|j| solve_spd(a, &DenseVector::from(bt.row(j))))
        .collect::<Result<Vec<_>>>()?;
    DenseMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matvec_examples() {
        let v = DenseVector::from([3.0, 4.0]);
        assert_eq!(matvec(&DenseMatrix::identity(2), &v).unwrap(), v);
        let d = DenseMatrix::diag(&[2.0, 1.0]);
        assert_eq!(
            matvec(&d, &DenseVector::from([1.0, 1.0])).unwrap(),
            DenseVector::from([2.0, 1.0])
        );
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(
            matvec(&a, &DenseVector::from([1.0, 1.0])).unwrap(),
            DenseVector::from([3.0, 7.0])
        );
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let a = DenseMatrix::identity(2);
        let err = matvec(&a, &DenseVector::zeros(3)).unwrap_err();
        assert!(matches!(err, NumericsError::DimensionMismatch { .. }));
    }

    #[test]
    fn solve_spd_examples() {
        let b = DenseVector::from([1.0, 2.0]);
        assert_eq!(solve_spd(&DenseMatrix::identity(2), &b).unwrap(), b);
        let d = DenseMatrix::diag(&[2.0, 1.0]);
        let v = solve_spd(&d, &DenseVector::from([1.0, 1.0])).unwrap();
        assert!(v.max_abs_diff(&DenseVector::from([0.5, 1.0])) < 1e-15);
        let z = solve_spd(&d, &DenseVector::zeros(2)).unwrap();
        assert_eq!(z, DenseVector::zeros(2));
    }

    #[test]
    fn solve_spd_rejects_indefinite() {
        let a = DenseMatrix::diag(&[1.0, -1.0]);
        assert_eq!(
            solve_spd(&a, &DenseVector::from([1.0, 1.0])).unwrap_err(),
            NumericsError::NotPositiveDefinite
        );
        let zero = DenseMatrix::diag(&[1.0, 0.0]);
        assert!(solve_spd(&zero, &DenseVector::from([1.0, 1.0])).is_err());
    }

    #[test]
    fn vector_constructor_validates() {
        assert_eq!(DenseVector::new(vec![]).unwrap_err(), NumericsError::Empty);
        assert_eq!(
            DenseVector::new(vec![1.0, f64::NAN]).unwrap_err(),
            NumericsError::NonFinite(1)
        );
    }

    #[test]
    fn symmetrize_is_exact() {
        let a = DenseMatrix::from_rows(&[&[1.0, 0.1 + 0.2], &[0.3, 2.0]]).unwrap();
        let s = a.symmetrize().unwrap();
        assert!(s.is_symmetric());
        assert_eq!(s.get(0, 1).to_bits(), s.get(1, 0).to_bits());
    }

    #[test]
    fn eigen_and_norms() {
        let d = DenseMatrix::diag(&[3.0, 1.0, 2.0]);
        assert_eq!(d.symmetric_eigenvalues().unwrap(), vec![1.0, 2.0, 3.0]);
        let b = DenseMatrix::from_rows(&[&[0.0, 2.0], &[0.0, 0.0]]).unwrap();
        assert!((b.spectral_norm() - 2.0).abs() < 1e-12);
    }

    fn small_matrix(n: usize, m: usize) -> impl Strategy<Value = DenseMatrix> {
        prop::collection::vec(-3.0..3.0f64, n * m)
            .prop_map(move |d| DenseMatrix::new(n, m, d).unwrap())
    }

    proptest! {
        #[test]
        fn matvec_is_linear(
            a in small_matrix(4, 3),
            u in prop::collection::vec(-5.0..5.0f64, 3),
            v in prop::collection::vec(-5.0..5.0f64, 3),
        ) {
            let u = DenseVector::from(u);
            let v = DenseVector::from(v);
            let lhs = matvec(&a, &u.add(&v)).unwrap();
            let rhs = matvec(&a, &u).unwrap().add(&matvec(&a, &v).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }

        #[test]
        fn solve_spd_recovers_rhs(
            n in 1usize..=50,
            seed in prop::collection::vec(-1.0..1.0f64, 2500),
            rhs in prop::collection::vec(-10.0..10.0f64, 50),
        ) {
            let b_mat = DenseMatrix::new(n, n, seed[..n * n].to_vec()).unwrap();
            let a = b_mat.transpose().matmul(&b_mat).unwrap()
                .add(&DenseMatrix::identity(n)).unwrap();
            let b = DenseVector::from(&rhs[..n]);
            let v = solve_spd(&a, &b).unwrap();
            let resid = matvec(&a, &v).unwrap().sub(&b).norm();
            prop_assert!(resid <= 1e-10 * b.norm().max(1.0));
        }
    }
}
