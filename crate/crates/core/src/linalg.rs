//! Small dense linear algebra: row-major matrices, Cholesky, a Jacobi
//! symmetric eigensolver and Lawson–Hanson nonnegative least squares.
//!
//! Problem sizes in this crate are tiny (tens to a few hundred columns), so
//! everything here is straightforward dense code.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::scalar::{dot, norm2, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from a row-major buffer. Returns `None` on a length mismatch.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. Returns `None` if rows are ragged.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Option<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return None;
            }
            data.extend_from_slice(r.as_ref());
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "tr_mul_vec dimension");
        let mut out = vec![T::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `Aᵀ A`
    pub fn gram(&self) -> Self {
        let mut g = Self::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                if row[i] == T::zero() {
                    continue;
                }
                for j in i..self.cols {
                    g[(i, j)] += row[i] * row[j];
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Numerical rank from the eigenvalues of `AᵀA`, relative tolerance `1e-10`.
    pub fn rank(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        let eig = symmetric_eigenvalues(&self.gram());
        let top = eig.iter().fold(T::zero(), |m, &e| m.max(e));
        if top <= T::zero() {
            return 0;
        }
        let tol = top * T::lit(1e-10);
        eig.iter().filter(|&&e| e > tol).count()
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factorizes a symmetric positive-definite matrix. `None` if a pivot is not positive.
    pub fn new(a: &Matrix<T>) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky needs a square matrix");
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > T::zero()) {
                return None;
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Some(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
    }
}

/// Orthonormal basis of the subspace of `R^dim` orthogonal to every vector
/// in `rows`. Directions that reduce below `rel_tol` of their original length
/// during Gram–Schmidt count as dependent.
pub fn null_space<T: Real>(rows: &[&[T]], dim: usize, rel_tol: T) -> Vec<Vec<T>> {
    let mut span: Vec<Vec<T>> = Vec::new();
    let reduce = |v: &[T], basis: &[Vec<T>]| -> Vec<T> {
        let mut v = v.to_vec();
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for q in basis {
                let c = dot(q, &v);
                for (vi, &qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        v
    };
    for r in rows {
        let n0 = norm2(r);
        if n0 == T::zero() {
            continue;
        }
        let v = reduce(r, &span);
        let n = norm2(&v);
        if n > rel_tol * n0 {
            span.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut complement = Vec::new();
    for i in 0..dim {
        if span.len() + complement.len() == dim {
            break;
        }
        let mut e = vec![T::zero(); dim];
        e[i] = T::one();
        let all: Vec<Vec<T>> = span.iter().chain(&complement).cloned().collect();
        let v = reduce(&e, &all);
        let n = norm2(&v);
        if n > T::lit(1e-3) {
            complement.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    complement
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Real>(a: &Matrix<T>) -> Vec<T> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "eigenvalues need a square matrix");
    let mut m = a.clone();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut scale = T::zero();
        for i in 0..n {
            scale += m[(i, i)] * m[(i, i)];
            for j in 0..n {
                if i != j {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
        }
        if off <= eps * eps * (scale + off) || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    eig
}

/// Least squares on a subset of columns of `m` by modified Gram–Schmidt.
/// Returns `None` when the selected columns are numerically dependent.
pub(crate) fn subset_lstsq<T: Real>(m: &Matrix<T>, cols: &[usize], b: &[T]) -> Option<Vec<T>> {
    let rows = m.rows();
    let k = cols.len();
    let mut q: Vec<Vec<T>> = cols.iter().map(|&c| m.column(c)).collect();
    let mut r = Matrix::<T>::zeros(k, k);
    let tol = T::lit(1e-12);
    for j in 0..k {
        let orig = crate::scalar::norm2(&q[j]);
        for i in 0..j {
            let proj = dot(&q[i], &q[j]);
            r[(i, j)] = proj;
            let qi = q[i].clone();
            for (v, &u) in q[j].iter_mut().zip(&qi) {
                *v -= proj * u;
            }
        }
        let nrm = crate::scalar::norm2(&q[j]);
        if nrm <= tol * (T::one() + orig) {
            return None;
        }
        r[(j, j)] = nrm;
        for v in q[j].iter_mut() {
            *v /= nrm;
        }
    }
    let qtb: Vec<T> = (0..k).map(|j| dot(&q[j], b)).collect();
    let mut x = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut s = qtb[i];
        for j in (i + 1)..k {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    debug_assert_eq!(rows, b.len());
    Some(x)
}

/// Lawson–Hanson nonnegative least squares: `argmin ‖M μ − b‖` over `μ ≥ 0`.
pub fn nnls<T: Real>(m: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = m.cols();
    assert_eq!(m.rows(), b.len(), "nnls dimension");
    let mut x = vec![T::zero(); n];
    let mut passive = vec![false; n];
    // columns that made the passive set rank deficient since the last progress
    let mut blocked = vec![false; n];
    let tol = T::lit(1e-13) * (T::one() + crate::scalar::norm2(b));
    for _outer in 0..(3 * n + 10) {
        let mx = m.mul_vec(&x);
        let r: Vec<T> = b.iter().zip(mx).map(|(&bi, mi)| bi - mi).collect();
        let grad = m.tr_mul_vec(&r);
        let pick = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && grad[j] > tol)
            .max_by(|&a, &b| grad[a].partial_cmp(&grad[b]).unwrap());
        let Some(j) = pick else { break };
        passive[j] = true;
        loop {
            let set: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let Some(z) = subset_lstsq(m, &set, b) else {
                passive[j] = false;
                blocked[j] = true;
                break;
            };
            if z.iter().all(|&v| v > T::zero()) {
                for (&i, &v) in set.iter().zip(&z) {
                    x[i] = v;
                }
                blocked.iter_mut().for_each(|f| *f = false);
                break;
            }
            let mut alpha = T::one();
            for (&i, &v) in set.iter().zip(&z) {
                if v <= T::zero() {
                    alpha = alpha.min(x[i] / (x[i] - v));
                }
            }
            for (&i, &v) in set.iter().zip(&z) {
                x[i] = x[i] + alpha * (v - x[i]);
                if x[i] <= T::zero() || (v <= T::zero() && x[i] <= T::lit(1e-15)) {
                    x[i] = T::zero();
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}
