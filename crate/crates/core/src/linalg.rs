//! Dense linear algebra used throughout the crate: a cyclic Jacobi eigensolver
//! for real symmetric matrices, LU determinants (real and complex), a
//! Gauss-Jordan inverse and two-pass Gram-Schmidt.
//!
//! Sizes handled here are at most a few hundred, so everything is written for
//! clarity over blocking.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm required at Jacobi convergence.
pub const JACOBI_OFF_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: Array2<f64>,
    pub sweeps: usize,
    pub off_norm: f64,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Array1<f64> {
        self.vectors.column(k).to_owned()
    }
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            s += a[p * n + q] * a[p * n + q];
        }
    }
    (2.0 * s).sqrt()
}

/// Cyclic Jacobi eigensolver for a real symmetric matrix.
///
/// Only the symmetric part of `a` is used. Eigenvectors are normalized and
/// signed so that their first entry of magnitude above `1e-12` is positive,
/// which makes repeated runs bit-identical.
pub fn jacobi_eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::Domain(format!(
            "jacobi_eigen needs a square matrix, got {rows}x{cols}"
        )));
    }
    let n = rows;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a[[i, j]] + a[[j, i]]);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = 1e-15 * fro;

    let mut sweeps = 0;
    let mut off = off_diagonal_norm(&m, n);
    while off > target && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                if t == 0.0 {
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        off = off_diagonal_norm(&m, n);
    }
    if off >= JACOBI_OFF_TOL * fro.max(1.0) {
        return Err(Error::Numerical(format!(
            "Jacobi did not converge: off-diagonal norm {off:.3e} after {sweeps} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps equal eigenvalues in solver order
    order.sort_by(|&x, &y| m[y * n + y].total_cmp(&m[x * n + x]));
    let values: Vec<f64> = order.iter().map(|&k| m[k * n + k]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let sign = (0..n)
            .map(|i| v[i * n + src])
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, f64::signum);
        for i in 0..n {
            vectors[[i, dst]] = sign * v[i * n + src];
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
        off_norm: off,
    })
}

/// Determinant by LU with partial pivoting.
pub fn det(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m: Vec<f64> = a.iter().copied().collect();
    let mut d = 1.0;
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, m[i * n + k].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pmax == 0.0 {
            return 0.0;
        }
        if piv != k {
            for j in 0..n {
                m.swap(k * n + j, piv * n + j);
            }
            d = -d;
        }
        let pivot = m[k * n + k];
        d *= pivot;
        for i in (k + 1)..n {
            let f = m[i * n + k] / pivot;
            if f != 0.0 {
                for j in (k + 1)..n {
                    m[i * n + j] -= f * m[k * n + j];
                }
            }
        }
    }
    d
}

/// Complex determinant by LU with partial pivoting.
pub fn det_complex(mut m: Vec<Complex64>, n: usize) -> Complex64 {
    debug_assert_eq!(m.len(), n * n);
    let mut d = Complex64::new(1.0, 0.0);
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, m[i * n + k].norm()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pmax == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != k {
            for j in 0..n {
                m.swap(k * n + j, piv * n + j);
            }
            d = -d;
        }
        let pivot = m[k * n + k];
        d *= pivot;
        for i in (k + 1)..n {
            let f = m[i * n + k] / pivot;
            if f.norm_sqr() != 0.0 {
                for j in (k + 1)..n {
                    let mkj = m[k * n + j];
                    m[i * n + j] -= f * mkj;
                }
            }
        }
    }
    d
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
///
/// Fails when a pivot falls below `1e-14` times the largest entry.
pub fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Domain("invert needs a square matrix".into()));
    }
    let scale = a.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for k in 0..n {
        let mut piv = k;
        for i in (k + 1)..n {
            if m[[i, k]].abs() > m[[piv, k]].abs() {
                piv = i;
            }
        }
        if m[[piv, k]].abs() <= 1e-14 * scale {
            return Err(Error::Numerical(format!(
                "matrix is numerically singular (pivot {:.3e})",
                m[[piv, k]]
            )));
        }
        if piv != k {
            for j in 0..n {
                m.swap([k, j], [piv, j]);
                inv.swap([k, j], [piv, j]);
            }
        }
        let p = m[[k, k]];
        for j in 0..n {
            m[[k, j]] /= p;
            inv[[k, j]] /= p;
        }
        for i in 0..n {
            if i == k {
                continue;
            }
            let f = m[[i, k]];
            if f != 0.0 {
                for j in 0..n {
                    m[[i, j]] -= f * m[[k, j]];
                    inv[[i, j]] -= f * inv[[k, j]];
                }
            }
        }
    }
    Ok(inv)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormalizes `vectors` in place by Gram-Schmidt with a second
/// re-orthogonalization pass. Errors when a vector is (numerically) in the
/// span of its predecessors.
pub fn orthonormalize(vectors: &mut [Vec<f64>]) -> Result<()> {
    for i in 0..vectors.len() {
        let original = dot(&vectors[i], &vectors[i]).sqrt();
        if original == 0.0 {
            return Err(Error::Validation(format!("vector {i} is zero")));
        }
        for _pass in 0..2 {
            for j in 0..i {
                let c = dot(&vectors[i], &vectors[j]);
                let (head, tail) = vectors.split_at_mut(i);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= c * y;
                }
            }
        }
        let norm = dot(&vectors[i], &vectors[i]).sqrt();
        if norm <= 1e-8 * original {
            return Err(Error::Validation(format!(
                "vector {i} is linearly dependent on its predecessors (residual {:.3e})",
                norm / original
            )));
        }
        for x in vectors[i].iter_mut() {
            *x /= norm;
        }
    }
    Ok(())
}

/// `a * diag(d) * aᵀ` for a tall `a`.
pub fn scaled_outer(a: &Array2<f64>, d: &[f64]) -> Array2<f64> {
    let (n, r) = a.dim();
    debug_assert_eq!(r, d.len());
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..r {
                s += a[[i, k]] * d[k] * a[[j, k]];
            }
            out[[i, j]] = s;
            out[[j, i]] = s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn jacobi_two_by_two_rank_one() {
        let g = array![[0.5, 0.5], [0.5, 0.5]];
        let e = jacobi_eigen(&g).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-15);
        assert!(e.values[1].abs() < 1e-15);
        let v = e.vector(0);
        assert!((v[0] - v[1]).abs() < 1e-15);
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = array![[4.0, 1.0, -2.0], [1.0, 2.0, 0.5], [-2.0, 0.5, 3.0]];
        let e = jacobi_eigen(&a).unwrap();
        let back = scaled_outer(&e.vectors, &e.values);
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        assert!(e.off_norm < JACOBI_OFF_TOL);
    }

    #[test]
    fn jacobi_empty_and_scalar() {
        let e = jacobi_eigen(&Array2::zeros((0, 0))).unwrap();
        assert!(e.values.is_empty());
        let e = jacobi_eigen(&array![[0.5]]).unwrap();
        assert_eq!(e.values, vec![0.5]);
    }

    #[test]
    fn determinants() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        assert!((det(&a) - 5.0).abs() < 1e-14);
        let z = vec![
            Complex64::new(1.0, 1.0),
            Complex64::new(0.0, 2.0),
            Complex64::new(3.0, 0.0),
            Complex64::new(1.0, -1.0),
        ];
        // (1+i)(1-i) - (2i)(3) = 2 - 6i
        let d = det_complex(z, 2);
        assert!((d - Complex64::new(2.0, -6.0)).norm() < 1e-14);
        assert_eq!(det(&Array2::zeros((0, 0))), 1.0);
    }

    #[test]
    fn inverse_and_singular() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let inv = invert(&a).unwrap();
        let prod = a.dot(&inv);
        assert!((prod[[0, 0]] - 1.0).abs() < 1e-14 && prod[[0, 1]].abs() < 1e-14);
        assert!(invert(&array![[1.0, 2.0], [2.0, 4.0]]).is_err());
    }

    #[test]
    fn gram_schmidt_detects_dependence() {
        let mut vs = vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        orthonormalize(&mut vs).unwrap();
        assert!(dot(&vs[0], &vs[1]).abs() < 1e-15);
        let mut bad = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(orthonormalize(&mut bad).is_err());
    }
}
