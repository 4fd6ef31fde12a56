//! Small dense complex linear algebra.
//!
//! Matrices here are tiny (at most a few hundred rows, a handful of columns),
//! so everything is plain row-major storage with explicit loops. The routines
//! cover what the beamforming pipeline needs: products, Householder QR,
//! full-rank pseudo-inverse, one-sided Jacobi singular values and an LU solve.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::{cz, Real, C};

/// Dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![cz(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C<T>> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[C<T>] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [C<T>] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<C<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (p, &l) in lhs_row.iter().enumerate() {
                if l.re == T::zero() && l.im == T::zero() {
                    continue;
                }
                for (o, &r) in out_row.iter_mut().zip(rhs.row(p)) {
                    *o = *o + l * r;
                }
            }
        }
        out
    }

    /// `self^H * rhs` without materialising the adjoint.
    pub fn adjoint_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "adjoint_matmul row dimension");
        let mut out = Self::zeros(self.cols, rhs.cols);
        for p in 0..self.rows {
            let l_row = self.row(p);
            let r_row = rhs.row(p);
            for (i, &l) in l_row.iter().enumerate() {
                let lc = l.conj();
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &r) in out_row.iter_mut().zip(r_row) {
                    *o = *o + lc * r;
                }
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(C<T>) -> C<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|z| z * s)
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    /// Largest entrywise modulus of `self - rhs`.
    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        assert_eq!(self.shape(), rhs.shape());
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).norm()))
    }

    /// Row-scaled copy: row `i` multiplied by `d[i]`.
    pub fn scale_rows(&self, d: &[T]) -> Self {
        assert_eq!(d.len(), self.rows);
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * d[i])
    }

    /// `out[i, :] = self[idx[i], :]`.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), self.cols, |i, j| self[(idx[i], j)])
    }

    /// `out[:, j] = self[:, idx[j]]`.
    pub fn gather_cols(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = C<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin QR factorisation `A = Q R` of a tall matrix.
#[derive(Clone, Debug)]
pub struct Qr<T> {
    /// `m x n`, orthonormal columns.
    pub q: CMatrix<T>,
    /// `n x n`, upper triangular.
    pub r: CMatrix<T>,
}

/// Householder QR of an `m x n` matrix with `m >= n`.
pub fn qr<T: Real>(a: &CMatrix<T>) -> Result<Qr<T>> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::dim(format!("QR needs rows >= cols, got {m}x{n}")));
    }
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<C<T>>> = Vec::with_capacity(n);
    let two = T::lit(2.0);

    for k in 0..n {
        let norm_x = (k..m).map(|i| work[(i, k)].norm_sqr()).sum::<T>().sqrt();
        let mut v: Vec<C<T>> = (k..m).map(|i| work[(i, k)]).collect();
        if norm_x == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        let x0 = v[0];
        let phase = if x0.norm() == T::zero() {
            C::new(T::one(), T::zero())
        } else {
            x0 / x0.norm()
        };
        let alpha = -phase * norm_x;
        v[0] = v[0] - alpha;
        let v_norm = v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
        if v_norm == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        for z in v.iter_mut() {
            *z = *z / v_norm;
        }
        // work[k.., k..] -= 2 v (v^H work[k.., k..])
        for j in k..n {
            let dot = v
                .iter()
                .enumerate()
                .fold(cz(), |acc, (t, vi)| acc + vi.conj() * work[(k + t, j)]);
            for (t, vi) in v.iter().enumerate() {
                work[(k + t, j)] = work[(k + t, j)] - *vi * dot * two;
            }
        }
        reflectors.push(v);
    }

    let r = CMatrix::from_fn(n, n, |i, j| if i <= j { work[(i, j)] } else { cz() });

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
    let mut q = CMatrix::from_fn(m, n, |i, j| if i == j { C::new(T::one(), T::zero()) } else { cz() });
    for k in (0..n).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for j in 0..n {
            let dot = v
                .iter()
                .enumerate()
                .fold(cz(), |acc, (t, vi)| acc + vi.conj() * q[(k + t, j)]);
            for (t, vi) in v.iter().enumerate() {
                q[(k + t, j)] = q[(k + t, j)] - *vi * dot * two;
            }
        }
    }
    Ok(Qr { q, r })
}

/// Singular values of `a` (descending) by one-sided Jacobi rotations.
pub fn singular_values<T: Real>(a: &CMatrix<T>) -> Vec<T> {
    // Work on the columns of a (or of a^H when wide).
    let mut w = if a.rows() >= a.cols() { a.clone() } else { a.adjoint() };
    let (m, n) = w.shape();
    let eps = T::epsilon();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = cz::<T>();
                for i in 0..m {
                    let ap = w[(i, p)];
                    let aq = w[(i, q)];
                    alpha = alpha + ap.norm_sqr();
                    beta = beta + aq.norm_sqr();
                    gamma = gamma + ap.conj() * aq;
                }
                let g = gamma.norm();
                if g <= eps * (alpha * beta).sqrt() || g == T::zero() {
                    continue;
                }
                rotated = true;
                // Rephase column q so that the inner product is real and positive.
                let phase = gamma.conj() / g;
                let zeta = (beta - alpha) / (T::lit(2.0) * g);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let ap = w[(i, p)];
                    let bq = w[(i, q)] * phase;
                    w[(i, p)] = ap * c - bq * s;
                    w[(i, q)] = ap * s + bq * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = (0..n)
        .map(|j| (0..m).map(|i| w[(i, j)].norm_sqr()).sum::<T>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Solve `R X = B` for upper-triangular `R`.
fn back_substitute<T: Real>(r: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    let n = r.rows();
    let mut x = b.clone();
    for j in 0..b.cols() {
        for i in (0..n).rev() {
            let mut acc = x[(i, j)];
            for p in (i + 1)..n {
                acc = acc - r[(i, p)] * x[(p, j)];
            }
            x[(i, j)] = acc / r[(i, i)];
        }
    }
    x
}

/// Moore-Penrose pseudo-inverse `(A^H A)^{-1} A^H` of a full-column-rank
/// tall matrix, computed as `R^{-1} Q^H`.
///
/// Fails with [`Error::RankDeficient`] when the ratio of smallest to largest
/// singular value is not above `rank_tol`.
pub fn full_rank_pinv<T: Real>(a: &CMatrix<T>, rank_tol: T) -> Result<CMatrix<T>> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::dim(format!("pseudo-inverse needs rows >= cols, got {m}x{n}")));
    }
    if !a.is_finite() {
        return Err(Error::arg("matrix has non-finite entries"));
    }
    let sv = singular_values(a);
    let largest = sv.first().copied().unwrap_or(T::zero());
    let smallest = sv.last().copied().unwrap_or(T::zero());
    let ratio = if largest > T::zero() {
        smallest / largest
    } else {
        T::zero()
    };
    if !(ratio > rank_tol) {
        return Err(Error::RankDeficient {
            ratio: ratio.to_f64_lossy(),
            tol: rank_tol.to_f64_lossy(),
        });
    }
    let Qr { q, r } = qr(a)?;
    Ok(back_substitute(&r, &q.adjoint()))
}

/// Solve the square system `A X = B` by LU with partial pivoting.
pub fn lu_solve<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<CMatrix<T>> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::dim(format!(
            "lu_solve: A is {}x{}, B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = lu.max_abs();
    for k in 0..n {
        let (piv, piv_abs) = (k..n)
            .map(|i| (i, lu[(i, k)].norm()))
            .fold(
                (k, T::neg_infinity()),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if !(piv_abs > T::epsilon() * scale * T::from_count(n)) {
            return Err(Error::arg("singular matrix in lu_solve"));
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            for j in 0..x.cols() {
                let t = x[(k, j)];
                x[(k, j)] = x[(piv, j)];
                x[(piv, j)] = t;
            }
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let f = lu[(i, k)] / pivot;
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                let u = lu[(k, j)];
                lu[(i, j)] = lu[(i, j)] - f * u;
            }
            for j in 0..x.cols() {
                let u = x[(k, j)];
                x[(i, j)] = x[(i, j)] - f * u;
            }
        }
    }
    Ok(back_substitute(&lu, &x))
}
