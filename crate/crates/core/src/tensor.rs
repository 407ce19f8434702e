//! Dense row-major containers and the handful of vector operations the rest
//! of the crate is built on. Everything is `f64`.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-empty vector of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("vector must have at least one entry".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Vector(data))
    }

    /// Panics if `len == 0`.
    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector length must be positive");
        Vector(vec![0.0; len])
    }

    /// Skips validation; callers guarantee a non-empty, finite buffer.
    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Vector(data)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * s).collect())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Vec<f64> {
        v.0
    }
}

/// Row-major matrix. For classifier heads `rows` is the feature dimension M
/// and `cols` the class count C, so column `i` is the weight vector of class `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!("matrix shape {rows}x{cols} is empty")));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be positive");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(Error::DimensionMismatch { expected: c, got: bad.len() });
        }
        Matrix::new(r, c, rows.concat())
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn column(&self, c: usize) -> Vector {
        Vector((0..self.rows).map(|r| self.get(r, c)).collect())
    }

    pub fn set_column(&mut self, c: usize, v: &[f64]) -> Result<()> {
        check_len(self.rows, v.len())?;
        for (r, &x) in v.iter().enumerate() {
            self.set(r, c, x);
        }
        Ok(())
    }

    pub fn column_norm(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.get(r, c).powi(2)).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// Copy with every column scaled to unit L2 norm.
    pub fn normalize_columns(&self) -> Result<Matrix> {
        let mut out = self.clone();
        for c in 0..self.cols {
            let n = self.column_norm(c);
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            for r in 0..self.rows {
                out.data[r * self.cols + c] /= n;
            }
        }
        Ok(out)
    }

    /// Gram matrix of the columns, `AᵀA` (C×C).
    pub fn column_gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                for j in 0..self.cols {
                    g.data[i * self.cols + j] += row[i] * row[j];
                }
            }
        }
        g
    }

    /// Rank by Gaussian elimination with partial pivoting.
    pub fn rank(&self, tol: f64) -> usize {
        let mut a = self.to_rows();
        let (m, n) = (self.rows, self.cols);
        let mut rank = 0;
        for col in 0..n {
            if rank == m {
                break;
            }
            let pivot =
                (rank..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).expect("non-empty range");
            if a[pivot][col].abs() <= tol {
                continue;
            }
            a.swap(rank, pivot);
            let (top, rest) = a.split_at_mut(rank + 1);
            let pivot_row = &top[rank];
            for row in rest.iter_mut().take(m - rank - 1) {
                let f = row[col] / pivot_row[col];
                for (x, p) in row[col..n].iter_mut().zip(&pivot_row[col..n]) {
                    *x -= f * p;
                }
            }
            rank += 1;
        }
        rank
    }
}

/// Transposed apply: `out[i] = Σ_m A[m,i]·x[m]`, i.e. the class scores `Wᵀx`.
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vector> {
    check_len(a.rows, x.len())?;
    let mut out = vec![0.0; a.cols];
    for (m, &xm) in x.iter().enumerate() {
        axpy(xm, a.row(m), &mut out);
    }
    Ok(Vector(out))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vector> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(Vector(v.iter().map(|x| x / n).collect()))
}

/// Cosine similarity, clamped to [-1, 1] so it is always a valid `acos` input.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(u.len(), v.len())?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Index of the maximum; ties go to the lowest index. Panics on empty input.
pub fn argmax(v: &[f64]) -> usize {
    assert!(!v.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a·x`
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matvec_examples() {
        let id = Matrix::identity(2);
        assert_eq!(matvec(&id, &[3.0, 4.0]).unwrap().as_slice(), &[3.0, 4.0]);

        let a = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        assert_eq!(matvec(&a, &[2.0]).unwrap().as_slice(), &[2.0, -2.0]);

        let z = Matrix::zeros(2, 3);
        assert_eq!(matvec(&z, &[1.0, 1.0]).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matvec_rejects_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matvec(&a, &[1.0, 2.0, 3.0]), Err(Error::DimensionMismatch { expected: 2, got: 3 })));
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[1.0, 0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[7.0]), 0);
    }

    #[test]
    fn vector_rejects_empty_and_nan() {
        assert!(Vector::new(vec![]).is_err());
        assert!(matches!(Vector::new(vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rank_of_identity_and_rank_one() {
        assert_eq!(Matrix::identity(4).rank(1e-12), 4);
        let r1 = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        assert_eq!(r1.rank(1e-12), 1);
    }

    fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, len).prop_filter("nonzero", |v| norm(v) > 1e-6)
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_unit(v in nonzero_vec(5)) {
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(&once).unwrap();
            prop_assert!((once.norm() - 1.0).abs() < 1e-12);
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_free(u in nonzero_vec(4), v in nonzero_vec(4), s in 0.01f64..50.0) {
            let c = cosine(&u, &v).unwrap();
            prop_assert!((c - cosine(&v, &u).unwrap()).abs() < 1e-14);
            let su: Vec<f64> = u.iter().map(|x| x * s).collect();
            prop_assert!((c - cosine(&su, &v).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&c));
        }

        #[test]
        fn argmax_shift_and_scale_invariant(v in prop::collection::vec(-10.0f64..10.0, 1..8),
                                            shift in -5.0f64..5.0, s in 0.1f64..10.0) {
            let base = argmax(&v);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
            // shifting can merge near-ties through rounding, so compare values not indices
            prop_assert_eq!(shifted[argmax(&shifted)], shifted[base]);
            prop_assert_eq!(scaled[argmax(&scaled)], scaled[base]);
        }
    }
}
