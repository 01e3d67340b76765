//! Small dense matrices over the real and complex fields.
//!
//! Products of lower-triangular operands only ever touch the lower triangle,
//! so structural zeros above the diagonal stay exact zeros. The same holds
//! for the diagonal fast paths: truncating a product to its upper-left block
//! gives bit-for-bit the product of the truncated operands.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::ordering::{tri_class_member, IndexPair, TriClassTag};
use crate::scalar::{FieldTag, Scalar};

/// Minimum ratio between distinct diagonal moduli accepted by the
/// eigendecomposition and everything built on it.
pub const MIN_SEPARATION_RATIO: f64 = 1.05;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    field: FieldTag,
    data: Vec<Scalar>,
}

impl Matrix {
    pub fn zeros(n: usize, field: FieldTag) -> Self {
        Matrix {
            n,
            field,
            data: vec![Scalar::ZERO; n * n],
        }
    }

    pub fn identity(n: usize, field: FieldTag) -> Self {
        let mut m = Matrix::zeros(n, field);
        for i in 0..n {
            m[(i, i)] = Scalar::ONE;
        }
        m
    }

    pub fn from_fn(n: usize, field: FieldTag, mut f: impl FnMut(usize, usize) -> Scalar) -> Self {
        let mut m = Matrix::zeros(n, field);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Real matrix from row slices; panics on ragged input.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        Matrix::from_fn(n, FieldTag::Real, |i, j| {
            assert_eq!(rows[i].len(), n, "ragged row {i}");
            Scalar::real(rows[i][j])
        })
    }

    pub fn from_entries(n: usize, field: FieldTag, data: Vec<Scalar>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                left: n * n,
                right: data.len(),
            });
        }
        Ok(Matrix { n, field, data })
    }

    pub fn diag(field: FieldTag, d: &[Scalar]) -> Self {
        let mut m = Matrix::zeros(d.len(), field);
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn field(&self) -> FieldTag {
        self.field
    }

    pub fn with_field(mut self, field: FieldTag) -> Self {
        self.field = field;
        self
    }

    #[inline]
    pub fn entries(&self) -> &[Scalar] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<Scalar> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    /// First nonzero entry above the diagonal, 1-based.
    pub fn upper_violation(&self) -> Option<(usize, usize)> {
        for i in 0..self.n {
            for j in i + 1..self.n {
                if !self[(i, j)].is_zero() {
                    return Some((i + 1, j + 1));
                }
            }
        }
        None
    }

    pub fn is_lower_triangular(&self) -> bool {
        self.upper_violation().is_none()
    }

    pub fn is_diagonal(&self) -> bool {
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && !self[(i, j)].is_zero() {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Upper-left `m x m` block.
    pub fn block(&self, m: usize) -> Matrix {
        assert!(m <= self.n);
        Matrix::from_fn(m, self.field, |i, j| self[(i, j)])
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        check_compatible(self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Matrix {
            n: self.n,
            field: self.field,
            data,
        })
    }

    pub fn scale(&self, k: Scalar) -> Matrix {
        Matrix {
            n: self.n,
            field: self.field,
            data: self.data.iter().map(|&x| x * k).collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    /// Sup-norm distance, `None` on shape mismatch.
    pub fn distance(&self, other: &Matrix) -> Option<f64> {
        if self.n != other.n {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Inverse of an invertible lower-triangular matrix by forward substitution.
    pub fn lower_inverse(&self) -> Result<Matrix> {
        if let Some((row, col)) = self.upper_violation() {
            return Err(Error::NotLowerTriangular { row, col });
        }
        let n = self.n;
        for i in 0..n {
            if self[(i, i)].is_zero() {
                return Err(Error::DivisionByZero { r: i + 1, s: i + 1 });
            }
        }
        let mut inv = Matrix::zeros(n, self.field);
        for j in 0..n {
            inv[(j, j)] = self[(j, j)].recip();
            for i in j + 1..n {
                let mut acc = Scalar::ZERO;
                for l in j..i {
                    acc += self[(i, l)] * inv[(l, j)];
                }
                inv[(i, j)] = -(acc / self[(i, i)]);
            }
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = Scalar;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Scalar {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Scalar {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix({}x{}, {})", self.n, self.n, self.field)?;
        for i in 0..self.n {
            f.write_str("  [")?;
            for j in 0..self.n {
                if j > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{}", self[(i, j)])?;
            }
            f.write_str("]\n")?;
        }
        Ok(())
    }
}

fn check_compatible(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch {
            left: a.n,
            right: b.n,
        });
    }
    if a.field != b.field {
        return Err(Error::FieldMismatch {
            left: a.field,
            right: b.field,
        });
    }
    Ok(())
}

/// Matrix product with lower-triangular and diagonal fast paths.
pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_compatible(a, b)?;
    Ok(mul_unchecked(a, b))
}

pub(crate) fn mul_unchecked(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.n;
    let mut c = Matrix::zeros(n, a.field);
    if a.is_diagonal() {
        for i in 0..n {
            let d = a[(i, i)];
            for j in 0..n {
                c[(i, j)] = d * b[(i, j)];
            }
        }
        return c;
    }
    if b.is_diagonal() {
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] = a[(i, j)] * b[(j, j)];
            }
        }
        return c;
    }
    if a.is_lower_triangular() && b.is_lower_triangular() {
        for i in 0..n {
            for j in 0..=i {
                let mut acc = Scalar::ZERO;
                for l in j..=i {
                    acc += a[(i, l)] * b[(l, j)];
                }
                c[(i, j)] = acc;
            }
        }
        return c;
    }
    for i in 0..n {
        for j in 0..n {
            let mut acc = Scalar::ZERO;
            for l in 0..n {
                acc += a[(i, l)] * b[(l, j)];
            }
            c[(i, j)] = acc;
        }
    }
    c
}

/// `A^k` by repeated squaring; `A^0` is the identity.
pub fn mat_pow(a: &Matrix, k: u64) -> Matrix {
    if a.is_diagonal() {
        let d: Vec<Scalar> = a.diagonal().into_iter().map(|x| x.powu(k)).collect();
        return Matrix::diag(a.field, &d);
    }
    let mut acc = Matrix::identity(a.n, a.field);
    let mut base = a.clone();
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            acc = mul_unchecked(&acc, &base);
        }
        k >>= 1;
        if k > 0 {
            base = mul_unchecked(&base, &base);
        }
    }
    acc
}

/// Largest entry modulus.
pub fn sup_norm(a: &Matrix) -> f64 {
    a.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// `A = S * diag(d) * S^-1` for lower-triangular `A` with well separated
/// diagonal moduli; `S` is unit lower triangular.
#[derive(Clone, Debug)]
pub struct EigenFactors {
    pub s: Matrix,
    pub s_inv: Matrix,
    pub d: Vec<Scalar>,
}

impl EigenFactors {
    pub fn reconstruct(&self) -> Matrix {
        let dm = Matrix::diag(self.s.field(), &self.d);
        mul_unchecked(&mul_unchecked(&self.s, &dm), &self.s_inv)
    }
}

fn check_separation(d: &[Scalar]) -> Result<()> {
    for i in 0..d.len() {
        for j in i + 1..d.len() {
            let (x, y) = (d[i].abs(), d[j].abs());
            let ratio = if x > y { x / y } else { y / x };
            if !(ratio >= MIN_SEPARATION_RATIO) {
                return Err(Error::IllConditioned {
                    i: i + 1,
                    j: j + 1,
                    ratio,
                });
            }
        }
    }
    Ok(())
}

pub fn tri_eigendecompose(a: &Matrix) -> Result<EigenFactors> {
    if let Some((row, col)) = a.upper_violation() {
        return Err(Error::NotLowerTriangular { row, col });
    }
    let n = a.dim();
    let d = a.diagonal();
    check_separation(&d)?;
    // Column l solves (A - d_l I) s = 0 with s_l = 1 by forward substitution.
    let mut s = Matrix::zeros(n, a.field());
    for l in 0..n {
        s[(l, l)] = Scalar::ONE;
        for i in l + 1..n {
            let mut acc = Scalar::ZERO;
            for k in l..i {
                acc += a[(i, k)] * s[(k, l)];
            }
            s[(i, l)] = acc / (d[l] - d[i]);
        }
    }
    let s_inv = s.lower_inverse()?;
    Ok(EigenFactors { s, s_inv, d })
}

/// Constant `lambda` with `|A^k|_ij <= lambda * |a_i|^k` for all `k >= 1`.
///
/// Computed as `max_ij sum_l |S_il| |S^-1_lj|`, which bounds every power once
/// the diagonal moduli increase down the diagonal.
pub fn lambda_bound(a: &Matrix) -> Result<f64> {
    let ef = tri_eigendecompose(a)?;
    for i in 1..ef.d.len() {
        if !(ef.d[i].abs() > ef.d[i - 1].abs()) {
            return Err(Error::NotIncreasing { i: i + 1 });
        }
    }
    let n = a.dim();
    let mut lambda: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for l in j..=i {
                acc += ef.s[(i, l)].abs() * ef.s_inv[(l, j)].abs();
            }
            lambda = lambda.max(acc);
        }
    }
    Ok(lambda)
}

/// Checks `0 < |a_1| < ... < |a_n|`.
pub fn check_ineqdiag(d: &[Scalar]) -> Result<()> {
    for (i, x) in d.iter().enumerate() {
        if x.is_zero() {
            return Err(Error::NotIncreasing { i: i + 1 });
        }
        if i > 0 && !(x.abs() > d[i - 1].abs()) {
            return Err(Error::NotIncreasing { i: i + 1 });
        }
    }
    Ok(())
}

/// `(A^k)_{rs}` for `A = diag(d0) + T` with `T` in the class anchored at
/// `(r,s)`: `(a_r^k - a_s^k) / (a_r - a_s) * T_rs`.
pub fn closed_form_akrs(d0: &[Scalar], t: &Matrix, rs: IndexPair, k: u64) -> Result<Scalar> {
    let n = t.dim();
    if d0.len() != n {
        return Err(Error::DimensionMismatch {
            left: d0.len(),
            right: n,
        });
    }
    rs.check(n)?;
    if rs.r == rs.s {
        return Err(Error::DiagonalAnchor(rs));
    }
    check_ineqdiag(d0)?;
    if !tri_class_member(t, TriClassTag::new(rs, n))? {
        let at = crate::ordering::first_class_violation(t, rs).unwrap_or(rs);
        return Err(Error::NotInClass { anchor: rs, at });
    }
    let (ar, as_) = (d0[rs.r - 1], d0[rs.s - 1]);
    let denom = ar - as_;
    if denom.is_zero() {
        return Err(Error::DivisionByZero { r: rs.r, s: rs.s });
    }
    let trs = t[(rs.r - 1, rs.s - 1)];
    Ok((ar.powu(k) - as_.powu(k)) / denom * trs)
}
