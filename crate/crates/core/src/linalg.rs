//! Small dense vector/matrix kernels. Matrices are square and row-major.

use rand::Rng;

use crate::scalar::Scalar;

#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

/// y += a * x
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn norm_sq<T: Scalar>(x: &[T]) -> T {
    dot(x, x)
}

#[inline]
pub fn dist_sq<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let e = a - b;
            e * e
        })
        .sum()
}

/// out = M x for a `d x d` row-major `m`.
pub fn matvec<T: Scalar>(m: &[T], x: &[T], out: &mut [T]) {
    let d = x.len();
    debug_assert_eq!(m.len(), d * d);
    debug_assert_eq!(out.len(), d);
    for (row, o) in m.chunks_exact(d).zip(out.iter_mut()) {
        *o = dot(row, x);
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`. Returns `None` when
/// the factorization meets a nonpositive pivot.
pub fn cholesky_solve<T: Scalar>(a: &[T], b: &[T]) -> Option<Vec<T>> {
    let d = b.len();
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= T::zero() || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    // forward: L y = b
    let mut y = b.to_vec();
    for i in 0..d {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    // backward: L^T x = y
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    Some(y)
}

/// Haar-like random orthogonal matrix: Gram-Schmidt on a Gaussian matrix.
/// Rows of the result are orthonormal.
pub fn random_orthogonal<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<T> {
    let mut q = vec![T::zero(); d * d];
    let mut i = 0;
    while i < d {
        let mut v: Vec<T> = (0..d).map(|_| T::sample_standard_normal(rng)).collect();
        // two passes of modified Gram-Schmidt for stability
        for _ in 0..2 {
            for k in 0..i {
                let row = &q[k * d..(k + 1) * d];
                let c = dot(row, &v);
                for (vj, &rj) in v.iter_mut().zip(row) {
                    *vj -= c * rj;
                }
            }
        }
        let norm = norm_sq(&v).sqrt();
        if norm < T::lit(1e-6) {
            continue;
        }
        for (dst, &src) in q[i * d..(i + 1) * d].iter_mut().zip(&v) {
            *dst = src / norm;
        }
        i += 1;
    }
    q
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: &[T], d: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..d {
            diag += m[i * d + i] * m[i * d + i];
            for j in 0..d {
                if i != j {
                    off += m[i * d + j] * m[i * d + j];
                }
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..d).map(|i| m[i * d + i]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}
