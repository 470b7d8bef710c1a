//! Small dense helpers on top of nalgebra for m×m subspace matrices.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::C64;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Eigen-decomposition of a general complex matrix, `A = P·diag(λ)·P⁻¹`.
///
/// Uses the complex Schur form `A = Q T Q†` and back substitution on `T`.
/// Columns of `P` have unit 2-norm.
#[derive(Clone, Debug)]
pub struct GeneralEigen {
    pub values: Vec<C64>,
    pub vectors: DMatrix<C64>,
}

impl GeneralEigen {
    pub fn new(a: &DMatrix<C64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Dimension(format!("{}x{} is not square", n, a.ncols())));
        }
        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("non-finite matrix entry".into()));
        }
        let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
        let (q, t) = schur.unpack();
        let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
        let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let small = f64::EPSILON * scale;
        let mut y = DMatrix::<C64>::zeros(n, n);
        for k in 0..n {
            y[(k, k)] = ONE;
            for i in (0..k).rev() {
                let mut acc = ZERO;
                for j in i + 1..=k {
                    acc += t[(i, j)] * y[(j, k)];
                }
                let mut denom = t[(i, i)] - t[(k, k)];
                if denom.norm() < small {
                    denom = C64::new(small, 0.0);
                }
                y[(i, k)] = -acc / denom;
            }
        }
        let mut vectors = q * y;
        for mut col in vectors.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= C64::new(norm, 0.0);
            }
        }
        Ok(Self { values, vectors })
    }

    /// Condition number of the eigenvector matrix; large means nearly defective.
    pub fn vector_condition(&self) -> f64 {
        condition_number(&self.vectors)
    }

    /// Reorder by ascending real part, ties broken by original index.
    pub fn sorted_by_real(mut self) -> Self {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| {
            self.values[a]
                .re
                .total_cmp(&self.values[b].re)
                .then(a.cmp(&b))
        });
        let values = order.iter().map(|&i| self.values[i]).collect();
        let vectors = DMatrix::from_fn(self.vectors.nrows(), order.len(), |r, c| {
            self.vectors[(r, order[c])]
        });
        self.values = values;
        self.vectors = vectors;
        self
    }
}

/// Hermitian eigen-decomposition with ascending eigenvalues.
pub fn hermitian_eigen(a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    sort_ascending(eig.eigenvalues.as_slice(), &eig.eigenvectors)
}

pub(crate) fn sort_ascending<T: Clone + nalgebra::Scalar>(
    values: &[f64],
    vectors: &DMatrix<T>,
) -> (Vec<f64>, DMatrix<T>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted = order.iter().map(|&i| values[i]).collect();
    let vecs = DMatrix::from_fn(vectors.nrows(), order.len(), |r, c| {
        vectors[(r, order[c])].clone()
    });
    (sorted, vecs)
}

/// Solves `H·x = μ·G·x` for Hermitian `H` and positive definite `G` by whitening
/// with the Cholesky factor of `G`. Vectors are G-orthonormal.
pub fn generalized_hermitian(h: &DMatrix<C64>, g: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let gh = (g + g.adjoint()) * C64::new(0.5, 0.0);
    let chol = Cholesky::new(gh)
        .ok_or_else(|| Error::Singular("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Cholesky factor is singular".into()))?;
    let c = &linv * h * linv.adjoint();
    let (values, y) = hermitian_eigen(&c);
    let x = linv.adjoint() * y;
    Ok((values, x))
}

/// Pseudo-inverse with singular values below `rcond·σ_max` discarded.
pub fn pinv(a: &DMatrix<C64>, rcond: f64) -> Result<DMatrix<C64>> {
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = rcond * smax;
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            let inv = C64::new(1.0 / s, 0.0);
            out += vt.row(k).adjoint() * u.column(k).adjoint() * inv;
        }
    }
    Ok(out)
}

/// 2-norm condition number from singular values (∞ when singular).
pub fn condition_number(a: &DMatrix<C64>) -> f64 {
    let s = a.singular_values();
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Determinant by partial-pivot LU. Pivot choice depends only on row values,
/// so permuting rows only flips the sign, and repeated rows give exactly 0.
pub fn det_lu(mut a: DMatrix<C64>) -> C64 {
    let n = a.nrows();
    let mut det = ONE;
    for k in 0..n {
        let mut p = k;
        let mut best = a[(k, k)].norm_sqr();
        for i in k + 1..n {
            let v = a[(i, k)].norm_sqr();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return ZERO;
        }
        if p != k {
            a.swap_rows(p, k);
            det = -det;
        }
        let pivot = a[(k, k)];
        det *= pivot;
        for i in k + 1..n {
            let l = a[(i, k)] / pivot;
            if l == ZERO {
                continue;
            }
            for j in k + 1..n {
                let u = a[(k, j)];
                a[(i, j)] -= l * u;
            }
        }
    }
    det
}

/// Partial-pivot LU solve of `A·X = B`.
pub fn lu_solve(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("LU factorisation hit a zero pivot".into()))
}

pub fn lu_solve_vec(a: &DMatrix<C64>, b: &DVector<C64>) -> Result<DVector<C64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("LU factorisation hit a zero pivot".into()))
}

/// Orthonormal basis of the column span via Householder QR; errors when a
/// column is dependent on the previous ones to relative tolerance `tol`.
pub fn orthonormal_columns(a: &DMatrix<C64>, tol: f64) -> Result<DMatrix<C64>> {
    let qr = a.clone().qr();
    let r = qr.r();
    let rmax = (0..r.ncols().min(r.nrows()))
        .map(|k| r[(k, k)].norm())
        .fold(0.0, f64::max);
    for k in 0..r.ncols().min(r.nrows()) {
        if r[(k, k)].norm() <= tol * rmax {
            return Err(Error::Singular(format!("family is rank deficient at column {k}")));
        }
    }
    if a.ncols() > a.nrows() {
        return Err(Error::Singular("more members than the space dimension".into()));
    }
    Ok(qr.q())
}

pub(crate) fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// Frobenius norm of `a - b` over the Frobenius norm of `b`.
pub fn rel_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Serde helpers writing complex matrices as row lists of `[re, im]` pairs.
pub mod serde_cmat {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(a: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
        a.row_iter()
            .map(|r| r.iter().map(|z| [z.re, z.im]).collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> std::result::Result<DMatrix<C64>, String> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
    }

    pub fn serialize<S: Serializer>(a: &DMatrix<C64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(a).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<C64>, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Serde helpers writing real matrices as row lists.
pub mod serde_rmat {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

/// Serde helpers for complex vectors as `[re, im]` pairs.
pub mod serde_cvec {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[C64], s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<C64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|p| C64::new(p[0], p[1])).collect())
    }
}
