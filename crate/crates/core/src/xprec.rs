//! Extended-precision complex dense matrices backed by MPFR floats.
//!
//! Only the kernels the subspace dynamics needs are provided: pivoted LU solve,
//! scaling-and-squaring exponential, products and norms. Precision is given in
//! decimal digits and every entry of a matrix carries the same precision.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rug::ops::Pow;
use rug::Float;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::C64;

/// Smallest working precision accepted, in decimal digits.
pub const MIN_DIGITS: u32 = 50;
/// Default working precision, in decimal digits.
pub const DEFAULT_DIGITS: u32 = 200;

const LOG2_10: f64 = std::f64::consts::LOG2_10;

/// Binary precision for `digits` decimal digits plus guard bits.
pub fn bits_for_digits(digits: u32) -> u32 {
    (digits as f64 * LOG2_10).ceil() as u32 + 16
}

/// An extended-precision complex scalar.
#[derive(Clone, PartialEq)]
pub struct XComplex {
    pub re: Float,
    pub im: Float,
}

impl fmt::Debug for XComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.20e}, {:.20e})", self.re.to_f64(), self.im.to_f64())
    }
}

impl XComplex {
    pub fn zero(prec: u32) -> Self {
        Self {
            re: Float::new(prec),
            im: Float::new(prec),
        }
    }

    pub fn one(prec: u32) -> Self {
        Self {
            re: Float::with_val(prec, 1),
            im: Float::new(prec),
        }
    }

    pub fn from_c64(z: C64, prec: u32) -> Self {
        Self {
            re: Float::with_val(prec, z.re),
            im: Float::with_val(prec, z.im),
        }
    }

    /// Nearest double-precision value of each part.
    pub fn to_c64(&self) -> C64 {
        C64::new(self.re.to_f64(), self.im.to_f64())
    }

    pub fn prec(&self) -> u32 {
        self.re.prec()
    }

    pub fn add(&self, o: &Self) -> Self {
        let p = self.prec();
        Self {
            re: Float::with_val(p, &self.re + &o.re),
            im: Float::with_val(p, &self.im + &o.im),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let p = self.prec();
        Self {
            re: Float::with_val(p, &self.re - &o.re),
            im: Float::with_val(p, &self.im - &o.im),
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let p = self.prec();
        let mut re = Float::with_val(p, &self.re * &o.re);
        re -= &self.im * &o.im;
        let mut im = Float::with_val(p, &self.re * &o.im);
        im += &self.im * &o.re;
        Self { re, im }
    }

    /// self += a·b
    pub fn add_mul(&mut self, a: &Self, b: &Self) {
        self.re += &a.re * &b.re;
        self.re -= &a.im * &b.im;
        self.im += &a.re * &b.im;
        self.im += &a.im * &b.re;
    }

    /// self -= a·b
    pub fn sub_mul(&mut self, a: &Self, b: &Self) {
        self.re -= &a.re * &b.re;
        self.re += &a.im * &b.im;
        self.im -= &a.re * &b.im;
        self.im -= &a.im * &b.re;
    }

    pub fn norm_sqr(&self) -> Float {
        let mut r = Float::with_val(self.prec(), self.re.square_ref());
        r += &self.im * &self.im;
        r
    }

    pub fn abs(&self) -> Float {
        self.norm_sqr().sqrt()
    }

    pub fn conj(&self) -> Self {
        Self {
            re: self.re.clone(),
            im: Float::with_val(self.prec(), -&self.im),
        }
    }

    pub fn div(&self, o: &Self) -> Self {
        let den = o.norm_sqr();
        let num = self.mul(&o.conj());
        Self {
            re: num.re / &den,
            im: num.im / &den,
        }
    }

    pub fn scale_real(&self, s: &Float) -> Self {
        Self {
            re: Float::with_val(self.prec(), &self.re * s),
            im: Float::with_val(self.prec(), &self.im * s),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
}

/// Row-major extended-precision complex matrix.
#[derive(Clone, PartialEq)]
pub struct XComplexMatrix {
    rows: usize,
    cols: usize,
    digits: u32,
    data: Vec<XComplex>,
}

impl fmt::Debug for XComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "XComplexMatrix({}x{}, {} digits) ", self.rows, self.cols, self.digits)?;
        fmt::Debug::fmt(&self.to_c64(), f)
    }
}

/// Serialized form: entries row-major as exact base-16 strings, `[re, im]`.
#[derive(Serialize, Deserialize)]
struct MatrixText {
    rows: usize,
    cols: usize,
    digits: u32,
    entries: Vec<[String; 2]>,
}

impl Serialize for XComplexMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixText {
            rows: self.rows,
            cols: self.cols,
            digits: self.digits,
            entries: self
                .data
                .iter()
                .map(|z| [z.re.to_string_radix(16, None), z.im.to_string_radix(16, None)])
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for XComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let t = MatrixText::deserialize(d)?;
        check_digits(t.digits).map_err(D::Error::custom)?;
        if t.entries.len() != t.rows * t.cols {
            return Err(D::Error::custom(format!(
                "{} entries for a {}x{} matrix",
                t.entries.len(),
                t.rows,
                t.cols
            )));
        }
        let p = bits_for_digits(t.digits);
        let parse = |x: &str| {
            Float::parse_radix(x, 16)
                .map(|v| Float::with_val(p, v))
                .map_err(|e| D::Error::custom(format!("bad extended-precision entry {x:?}: {e}")))
        };
        let data = t
            .entries
            .iter()
            .map(|[re, im]| Ok(XComplex { re: parse(re)?, im: parse(im)? }))
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        Ok(Self {
            rows: t.rows,
            cols: t.cols,
            digits: t.digits,
            data,
        })
    }
}

fn check_digits(digits: u32) -> Result<()> {
    if digits < MIN_DIGITS {
        return Err(Error::Invalid(format!(
            "extended precision needs at least {MIN_DIGITS} digits, got {digits}"
        )));
    }
    Ok(())
}

impl XComplexMatrix {
    pub fn zeros(rows: usize, cols: usize, digits: u32) -> Result<Self> {
        check_digits(digits)?;
        let p = bits_for_digits(digits);
        Ok(Self {
            rows,
            cols,
            digits,
            data: vec![XComplex::zero(p); rows * cols],
        })
    }

    pub fn identity(n: usize, digits: u32) -> Result<Self> {
        let mut m = Self::zeros(n, n, digits)?;
        for i in 0..n {
            m[(i, i)] = XComplex::one(m.prec());
        }
        Ok(m)
    }

    pub fn from_c64(a: &DMatrix<C64>, digits: u32) -> Result<Self> {
        check_digits(digits)?;
        let p = bits_for_digits(digits);
        let mut data = Vec::with_capacity(a.len());
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                data.push(XComplex::from_c64(a[(i, j)], p));
            }
        }
        Ok(Self {
            rows: a.nrows(),
            cols: a.ncols(),
            digits,
            data,
        })
    }

    /// Column vector from already-converted entries at `digits` precision.
    pub fn from_entries(entries: Vec<XComplex>, digits: u32) -> Result<Self> {
        check_digits(digits)?;
        let p = bits_for_digits(digits);
        let data = entries
            .into_iter()
            .map(|z| XComplex {
                re: Float::with_val(p, z.re),
                im: Float::with_val(p, z.im),
            })
            .collect::<Vec<_>>();
        Ok(Self {
            rows: data.len(),
            cols: 1,
            digits,
            data,
        })
    }

    /// Same values re-rounded to `digits` precision.
    pub fn with_digits(&self, digits: u32) -> Result<Self> {
        check_digits(digits)?;
        let p = bits_for_digits(digits);
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            digits,
            data: self
                .data
                .iter()
                .map(|z| XComplex {
                    re: Float::with_val(p, &z.re),
                    im: Float::with_val(p, &z.im),
                })
                .collect(),
        })
    }

    pub fn from_vector(v: &DVector<C64>, digits: u32) -> Result<Self> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        Self::from_c64(&m, digits)
    }

    pub fn to_c64(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].to_c64())
    }

    pub fn column_to_c64(&self, j: usize) -> DVector<C64> {
        DVector::from_fn(self.rows, |i, _| self[(i, j)].to_c64())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn digits(&self) -> u32 {
        self.digits
    }

    pub fn prec(&self) -> u32 {
        bits_for_digits(self.digits)
    }

    /// 10^(−digits) at this precision.
    pub fn epsilon(&self) -> Float {
        Float::with_val(self.prec(), 10).pow(-(self.digits as i32))
    }

    fn same_digits(&self, other: &Self) -> Result<()> {
        if self.digits != other.digits {
            return Err(Error::Invalid(format!(
                "precision mismatch: {} vs {} digits",
                self.digits, other.digits
            )));
        }
        Ok(())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_digits(other)?;
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let p = self.prec();
        let mut out = Vec::with_capacity(self.rows * other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = XComplex::zero(p);
                for k in 0..self.cols {
                    acc.add_mul(&self[(i, k)], &other[(k, j)]);
                }
                out.push(acc);
            }
        }
        Ok(Self {
            rows: self.rows,
            cols: other.cols,
            digits: self.digits,
            data: out,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_digits(other)?;
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension("shape mismatch in addition".into()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            digits: self.digits,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.add(b)).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_digits(other)?;
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension("shape mismatch in subtraction".into()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            digits: self.digits,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.sub(b)).collect(),
        })
    }

    pub fn scale(&self, s: &XComplex) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            digits: self.digits,
            data: self.data.iter().map(|a| a.mul(s)).collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self[(i, j)].conj());
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            digits: self.digits,
            data,
        }
    }

    /// Maximum column sum of moduli.
    pub fn norm1(&self) -> Float {
        let mut best = Float::new(self.prec());
        for j in 0..self.cols {
            let mut s = Float::new(self.prec());
            for i in 0..self.rows {
                s += self[(i, j)].abs();
            }
            if s > best {
                best = s;
            }
        }
        best
    }

    pub fn norm_frobenius(&self) -> Float {
        let mut s = Float::new(self.prec());
        for z in &self.data {
            s += z.norm_sqr();
        }
        s.sqrt()
    }

    fn max_abs(&self) -> Float {
        let mut best = Float::new(self.prec());
        for z in &self.data {
            let a = z.abs();
            if a > best {
                best = a;
            }
        }
        best
    }
}

impl std::ops::Index<(usize, usize)> for XComplexMatrix {
    type Output = XComplex;
    fn index(&self, (i, j): (usize, usize)) -> &XComplex {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for XComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut XComplex {
        &mut self.data[i * self.cols + j]
    }
}

/// Solves `A·X = B` by LU with partial pivoting on the modulus.
///
/// Fails when a pivot falls below `10^(−digits/2)·max|A_ij|`.
pub fn xp_solve(a: &XComplexMatrix, b: &XComplexMatrix) -> Result<XComplexMatrix> {
    a.same_digits(b)?;
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Dimension(format!("{}x{} system is not square", a.rows, a.cols)));
    }
    if b.rows != n {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, expected {n}",
            b.rows
        )));
    }
    let p = a.prec();
    let half = -(a.digits as i32) / 2;
    let mut threshold = Float::with_val(p, 10).pow(half);
    threshold *= a.max_abs();
    let mut lu = a.clone();
    let mut x = b.clone();
    let k_cols = b.cols;
    for col in 0..n {
        let mut piv = col;
        let mut best = lu[(col, col)].norm_sqr();
        for r in col + 1..n {
            let v = lu[(r, col)].norm_sqr();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best.sqrt() <= threshold {
            return Err(Error::Singular(format!(
                "pivot {col} is below 10^{half} relative to the matrix scale"
            )));
        }
        if piv != col {
            for j in 0..n {
                lu.data.swap(col * n + j, piv * n + j);
            }
            for j in 0..k_cols {
                x.data.swap(col * k_cols + j, piv * k_cols + j);
            }
        }
        let pivot = lu[(col, col)].clone();
        for r in col + 1..n {
            let f = lu[(r, col)].div(&pivot);
            if f.is_zero() {
                continue;
            }
            for j in col + 1..n {
                let (upper, lower) = (lu[(col, j)].clone(), &mut lu[(r, j)]);
                lower.sub_mul(&f, &upper);
            }
            lu[(r, col)] = XComplex::zero(p);
            for j in 0..k_cols {
                let upper = x[(col, j)].clone();
                x[(r, j)].sub_mul(&f, &upper);
            }
        }
    }
    for j in 0..k_cols {
        for i in (0..n).rev() {
            let mut acc = x[(i, j)].clone();
            for k in i + 1..n {
                acc.sub_mul(&lu[(i, k)], &x[(k, j)]);
            }
            x[(i, j)] = acc.div(&lu[(i, i)]);
        }
    }
    Ok(x)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled by 2^−j until its 1-norm is below 1/2; series terms
/// are summed until their 1-norm drops under 10^(−digits).
pub fn xp_expm(a: &XComplexMatrix) -> Result<XComplexMatrix> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Dimension("exponential of a non-square matrix".into()));
    }
    let p = a.prec();
    let norm = a.norm1();
    let mut j: u32 = 0;
    let half = Float::with_val(p, 0.5);
    let mut scaled_norm = norm.clone();
    while scaled_norm >= half {
        scaled_norm /= 2;
        j += 1;
    }
    let mut scaled = a.clone();
    if j > 0 {
        let factor = Float::with_val(p, Float::i_exp(1, -(j as i32)));
        for z in scaled.data.iter_mut() {
            z.re *= &factor;
            z.im *= &factor;
        }
    }
    let eps = a.epsilon();
    let mut sum = XComplexMatrix::identity(n, a.digits)?;
    let mut term = sum.clone();
    let max_terms = 10 * a.digits as usize + 100;
    for k in 1..=max_terms {
        term = term.mul(&scaled)?;
        let inv_k = Float::with_val(p, 1) / k as u32;
        for z in term.data.iter_mut() {
            z.re *= &inv_k;
            z.im *= &inv_k;
        }
        sum = sum.add(&term)?;
        if term.norm1() < eps {
            break;
        }
    }
    for _ in 0..j {
        sum = sum.mul(&sum)?;
    }
    Ok(sum)
}

/// Matrix–vector product with a single-column right factor.
pub fn xp_matvec(a: &XComplexMatrix, v: &XComplexMatrix) -> Result<XComplexMatrix> {
    if v.cols != 1 {
        return Err(Error::Dimension("matvec needs a column vector".into()));
    }
    a.mul(v)
}

/// Entrywise conversion of a double vector at binary precision `prec`.
pub fn xp_vec(v: &[C64], prec: u32) -> Vec<XComplex> {
    v.iter().map(|&z| XComplex::from_c64(z, prec)).collect()
}

/// Σ_i conj(a_i)·b_i accumulated at binary precision `prec`.
pub fn xp_dot_conj(a: &[XComplex], b: &[XComplex], prec: u32) -> XComplex {
    let mut re = Float::new(prec);
    let mut im = Float::new(prec);
    for (x, y) in a.iter().zip(b) {
        re += &x.re * &y.re;
        re += &x.im * &y.im;
        im += &x.re * &y.im;
        im -= &x.im * &y.re;
    }
    XComplex { re, im }
}

/// Rounds a double to the working precision and back; exact for every finite double.
pub fn round_trip(x: f64, digits: u32) -> f64 {
    Float::with_val(bits_for_digits(digits), x).to_f64()
}
