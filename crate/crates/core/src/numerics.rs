//! Small dense complex-matrix kernel.
//!
//! Matrices here are at most a few dozen rows, so everything is plain
//! row-major storage with cubic algorithms: a cyclic Jacobi solver for
//! Hermitian eigenproblems, Cholesky for positive-definite blocks and a
//! partially pivoted LU for the real systems the conic solver assembles.

use core::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scalar::{creal, Real, C};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix must have at least one row and one column")]
    Empty,
    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {got}")]
    EntryCount {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is indefinite (smallest eigenvalue {min_eig:e})")]
    Indefinite { min_eig: f64 },
    #[error("matrix is singular (smallest eigenvalue {min_eig:e})")]
    Singular { min_eig: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Dense complex matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<C<T>>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 {
            return Err(NumericsError::Empty);
        }
        if data.len() != rows * cols {
            return Err(NumericsError::EntryCount {
                rows,
                cols,
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![C::new(T::zero(), T::zero()); rows * cols],
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
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Column vector from its entries.
    pub fn column(entries: Vec<C<T>>) -> Self {
        let n = entries.len();
        assert!(n > 0, "column vector must be non-empty");
        Self {
            rows: n,
            cols: 1,
            data: entries,
        }
    }

    pub fn from_real_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = creal(d);
        }
        m
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: C<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn scale_real(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: C<T>, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn axpy_real(&mut self, s: T, other: &Self) {
        self.axpy(creal(s), other);
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᴴ * rhs` without forming the adjoint.
    pub fn adjoint_mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "adjoint_mul dimension mismatch");
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i].conj();
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> C<T> {
        assert!(self.is_square(), "trace of non-square matrix");
        (0..self.rows).fold(C::new(T::zero(), T::zero()), |acc, i| acc + self[(i, i)])
    }

    /// `Re tr(self · rhs)`; for Hermitian operands this is the real inner product.
    pub fn re_trace_mul(&self, rhs: &Self) -> T {
        assert_eq!(self.cols, rhs.rows);
        assert_eq!(self.rows, rhs.cols);
        let mut acc = T::zero();
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let b = rhs.data[k * rhs.cols + i];
                acc += a.re * b.re - a.im * b.im;
            }
        }
        acc
    }

    /// Frobenius inner product `Re tr(selfᴴ · rhs)`.
    pub fn re_inner(&self, rhs: &Self) -> T {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(T::zero(), |acc, (a, b)| acc + a.re * b.re + a.im * b.im)
    }

    pub fn frobenius_norm_sq(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, x| acc + x.norm_sqr())
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, x| acc.max(x.norm()))
    }

    /// `max |A − Aᴴ|` over all entries.
    pub fn hermitian_asymmetry(&self) -> T {
        if !self.is_square() {
            return T::infinity();
        }
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self) -> bool {
        self.is_square()
            && self.hermitian_asymmetry() <= hermitian_tolerance::<T>() * T::one().max(self.max_abs())
    }

    /// `(A + Aᴴ)/2`.
    pub fn hermitian_part(&self) -> Self {
        assert!(self.is_square());
        let half = T::lit(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * half
        })
    }

    /// Real part of the diagonal.
    pub fn real_diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)].re).collect()
    }

    /// Squared Euclidean norm of all entries; for a vector this is `‖x‖²`.
    pub fn norm_sq(&self) -> T {
        self.frobenius_norm_sq()
    }

    /// `u vᴴ` for column vectors.
    pub fn outer(u: &Self, v: &Self) -> Self {
        assert_eq!(u.cols, 1);
        assert_eq!(v.cols, 1);
        Self::from_fn(u.rows, v.rows, |i, j| u.data[i] * v.data[j].conj())
    }

    /// `xᴴ A x` for Hermitian `A` (imaginary round-off dropped).
    pub fn quad_form(&self, x: &Self) -> T {
        assert!(self.is_square() && x.cols == 1 && x.rows == self.rows);
        let n = self.rows;
        let mut acc = T::zero();
        for i in 0..n {
            let mut row = C::new(T::zero(), T::zero());
            for j in 0..n {
                row += self.data[i * n + j] * x.data[j];
            }
            let t = x.data[i].conj() * row;
            acc += t.re;
        }
        acc
    }

    pub fn column_vec(&self, j: usize) -> Self {
        Self::column((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn map(&self, f: impl Fn(C<T>) -> C<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Real>(&self) -> CMatrix<U> {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|x| Complex::new(U::lit(x.re.as_f64()), U::lit(x.im.as_f64())))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = C<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> Add for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn add(self, rhs: Self) -> CMatrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: Self) -> CMatrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<T: Real> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: Self) -> CMatrix<T> {
        self.matmul(rhs)
    }
}

impl<T: Real> Neg for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn neg(self) -> CMatrix<T> {
        self.map(|x| -x)
    }
}

/// Relative tolerance for accepting a matrix as Hermitian.
pub fn hermitian_tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}

/// Eigen-decomposition `A = U diag(values) Uᴴ`, values sorted descending.
#[derive(Clone, Debug)]
pub struct HermitianEigen<T> {
    pub values: Vec<T>,
    pub vectors: CMatrix<T>,
}

impl<T: Real> HermitianEigen<T> {
    pub fn reconstruct(&self) -> CMatrix<T> {
        self.reconstruct_with(|w| w)
    }

    /// `U diag(f(values)) Uᴴ`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> CMatrix<T> {
        let n = self.values.len();
        let u = &self.vectors;
        let fw: Vec<T> = self.values.iter().map(|&w| f(w)).collect();
        CMatrix::from_fn(n, n, |i, j| {
            let mut acc = C::new(T::zero(), T::zero());
            for k in 0..n {
                acc += u[(i, k)] * u[(j, k)].conj() * fw[k];
            }
            acc
        })
    }
}

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
pub fn hermitian_eig<T: Real>(a: &CMatrix<T>) -> Result<HermitianEigen<T>, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !a.is_hermitian() {
        return Err(NumericsError::NotHermitian {
            asymmetry: a.hermitian_asymmetry().as_f64(),
        });
    }
    let n = a.rows;
    let mut w = a.hermitian_part();
    for i in 0..n {
        w[(i, i)] = creal(w[(i, i)].re);
    }
    let mut v = CMatrix::<T>::identity(n);
    let scale = w.frobenius_norm();
    if scale == T::zero() {
        return Ok(HermitianEigen {
            values: vec![T::zero(); n],
            vectors: v,
        });
    }
    let tol = T::epsilon() * scale;
    let two = T::lit(2.0);

    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += w[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                let mag = apq.norm();
                if mag <= T::min_positive_value() || mag <= T::epsilon() * tol {
                    continue;
                }
                let phase = apq / mag;
                let app = w[(p, p)].re;
                let aqq = w[(q, q)].re;
                let theta = (aqq - app) / (two * mag);
                let t = if theta.is_infinite() {
                    T::zero()
                } else {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                let e_minus = phase.conj();
                // A ← A U with U = diag(1, e^{-iφ}) · [[c, s], [-s, c]] on (p, q)
                for r in 0..n {
                    let xp = w[(r, p)];
                    let xq = w[(r, q)];
                    w[(r, p)] = xp * c - e_minus * xq * s;
                    w[(r, q)] = xp * s + e_minus * xq * c;
                }
                for r in 0..n {
                    let xp = w[(p, r)];
                    let xq = w[(q, r)];
                    w[(p, r)] = xp * c - phase * xq * s;
                    w[(q, r)] = xp * s + phase * xq * c;
                }
                w[(p, q)] = creal(T::zero());
                w[(q, p)] = creal(T::zero());
                w[(p, p)] = creal(w[(p, p)].re);
                w[(q, q)] = creal(w[(q, q)].re);
                for r in 0..n {
                    let xp = v[(r, p)];
                    let xq = v[(r, q)];
                    v[(r, p)] = xp * c - e_minus * xq * s;
                    v[(r, q)] = xp * s + e_minus * xq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag = w.real_diag();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap_or(core::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, k| v[(r, order[k])]);
    Ok(HermitianEigen { values, vectors })
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(a: &CMatrix<T>) -> Result<T, NumericsError> {
    if a.rows == 0 || a.cols == 0 {
        return Err(NumericsError::Empty);
    }
    if a.cols == 1 || a.rows == 1 {
        return Ok(a.frobenius_norm());
    }
    let gram = if a.cols <= a.rows {
        a.adjoint_mul(a)
    } else {
        a.matmul(&a.adjoint())
    };
    let eig = hermitian_eig(&gram.hermitian_part())?;
    Ok(eig.values[0].max(T::zero()).sqrt())
}

/// `A^{-1/2}` for a Hermitian positive semi-definite matrix.
pub fn inv_sqrt_psd<T: Real>(a: &CMatrix<T>) -> Result<CMatrix<T>, NumericsError> {
    let eig = hermitian_eig(a)?;
    let min = *eig.values.last().expect("non-empty spectrum");
    if min < -T::lit(1e-9) {
        return Err(NumericsError::Indefinite {
            min_eig: min.as_f64(),
        });
    }
    let clamped = min.max(T::zero());
    if clamped < T::lit(1e-14) {
        return Err(NumericsError::Singular {
            min_eig: min.as_f64(),
        });
    }
    Ok(eig.reconstruct_with(|w| T::one() / w.max(T::zero()).sqrt()))
}

/// Standard complex Gaussian sample, `CN(0, 1)`.
pub fn complex_gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R) -> C<T> {
    let half = core::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(T::lit(re * half), T::lit(im * half))
}

pub fn gaussian_matrix<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix<T> {
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Unitary matrix from Gram-Schmidt on a complex Gaussian draw, with the
/// first nonzero entry of each column made real-positive.
pub fn random_unitary<T: Real, R: Rng + ?Sized>(l: usize, rng: &mut R) -> Result<CMatrix<T>, NumericsError> {
    if l == 0 {
        return Err(NumericsError::Empty);
    }
    let mut q = gaussian_matrix::<T, R>(l, l, rng);
    orthonormalize_columns(&mut q)?;
    for j in 0..l {
        let lead = (0..l)
            .map(|i| q[(i, j)])
            .find(|x| x.norm() > T::epsilon())
            .unwrap_or(creal(T::one()));
        let fix = lead.conj() / lead.norm();
        for i in 0..l {
            q[(i, j)] *= fix;
        }
    }
    Ok(q)
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
pub fn orthonormalize_columns<T: Real>(q: &mut CMatrix<T>) -> Result<(), NumericsError> {
    let (n, k) = (q.rows, q.cols);
    for j in 0..k {
        for _pass in 0..2 {
            for p in 0..j {
                let mut dot = C::new(T::zero(), T::zero());
                for i in 0..n {
                    dot += q[(i, p)].conj() * q[(i, j)];
                }
                for i in 0..n {
                    let qp = q[(i, p)];
                    q[(i, j)] -= dot * qp;
                }
            }
        }
        let norm = (0..n).fold(T::zero(), |acc, i| acc + q[(i, j)].norm_sqr()).sqrt();
        if norm <= T::epsilon() {
            return Err(NumericsError::Singular { min_eig: 0.0 });
        }
        for i in 0..n {
            q[(i, j)] /= norm;
        }
    }
    Ok(())
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix.
pub fn cholesky<T: Real>(a: &CMatrix<T>) -> Result<CMatrix<T>, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let mut l = CMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(NumericsError::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = creal(djj);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse<T: Real>(l: &CMatrix<T>) -> CMatrix<T> {
    let n = l.rows;
    let mut inv = CMatrix::<T>::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = creal(T::one()) / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = C::new(T::zero(), T::zero());
            for k in j..i {
                s += l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hpd_inverse<T: Real>(a: &CMatrix<T>) -> Result<CMatrix<T>, NumericsError> {
    let l = cholesky(a)?;
    let li = lower_inverse(&l);
    Ok(li.adjoint_mul(&li).hermitian_part())
}

/// LU factorization with partial pivoting of a dense real row-major matrix.
#[derive(Clone, Debug)]
pub struct LuFactor<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Real> LuFactor<T> {
    pub fn new(mut a: Vec<T>, n: usize) -> Result<Self, NumericsError> {
        if a.len() != n * n {
            return Err(NumericsError::Dimension(format!(
                "system matrix has {} entries, expected {}",
                a.len(),
                n * n
            )));
        }
        let scale = a.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let tiny = T::epsilon() * scale.max(T::min_positive_value()) * T::lit(1e-3);
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in (col + 1)..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if !(best > tiny) {
                return Err(NumericsError::Singular { min_eig: best.as_f64() });
            }
            if piv != col {
                for k in 0..n {
                    a.swap(col * n + k, piv * n + k);
                }
                perm.swap(col, piv);
            }
            let d = a[col * n + col];
            for r in (col + 1)..n {
                let f = a[r * n + col] / d;
                a[r * n + col] = f;
                if f == T::zero() {
                    continue;
                }
                for k in (col + 1)..n {
                    let v = a[col * n + k];
                    a[r * n + k] -= f * v;
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[i * n + k] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lu[i * n + k] * x[k];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

/// Solves the dense real system `A x = b` for row-major `A`.
pub fn solve_real_system<T: Real>(a: &[T], b: &[T]) -> Result<Vec<T>, NumericsError> {
    Ok(LuFactor::new(a.to_vec(), b.len())?.solve(b))
}
