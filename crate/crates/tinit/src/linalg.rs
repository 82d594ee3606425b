//! Right-inverse computation through the Gram matrix and a symmetric
//! positive-definite factorization.
//!
//! For a wide matrix A (m <= n, full row rank) the right inverse is
//! R = A' (A A')^-1, so A R = I. The Gram matrix A A' is factored by
//! Cholesky; the factorization runs in binary64 whatever the element
//! precision, which keeps the 32-bit residual well under its tolerance.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Default bound on the Gram-matrix condition estimate.
pub const DEFAULT_COND_LIMIT: f64 = 1e8;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or None when a pivot is not strictly positive.
fn cholesky(g: &Matrix<f64>) -> Option<Matrix<f64>> {
    let n = g.rows();
    let mut l: Matrix<f64> = Matrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let mut s = g.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l.set(j, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Solves L L' x = b in place given the lower factor L.
fn solve_spd(l: &Matrix<f64>, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

/// Condition estimate of the Gram matrix from the factor diagonal: the
/// squared ratio of its largest to smallest entry.
fn cond_estimate(l: &Matrix<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for i in 0..l.rows() {
        let d = l.get(i, i);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let ratio = hi / lo;
    ratio * ratio
}

/// Right inverse R of a wide matrix A, with A R = I to within the
/// precision's documented residual tolerance.
pub fn right_inverse<T: Scalar>(a: &Matrix<T>, cond_limit: f64) -> Result<Matrix<T>> {
    let (m, n) = (a.rows(), a.cols());
    if m > n {
        return Err(Error::NotWide { rows: m, cols: n });
    }
    if m == 0 {
        return Err(Error::EmptyInput {
            context: "right_inverse",
        });
    }
    let a64: Matrix<f64> = a.cast();
    let gram = a64.matmul(&a64.transpose())?;
    let l = cholesky(&gram).ok_or(Error::IllConditioned {
        estimate: f64::INFINITY,
        limit: cond_limit,
    })?;
    let estimate = cond_estimate(&l);
    if estimate > cond_limit {
        return Err(Error::IllConditioned {
            estimate,
            limit: cond_limit,
        });
    }
    // R = A' G^-1: row j of R solves G y = (column j of A).
    let mut r: Matrix<f64> = Matrix::zeros(n, m);
    let mut col = vec![0.0_f64; m];
    for j in 0..n {
        for i in 0..m {
            col[i] = a64.get(i, j);
        }
        solve_spd(&l, &mut col);
        r.row_mut(j).copy_from_slice(&col);
    }
    Ok(r.cast())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSpec;

    fn residual<T: Scalar>(a: &Matrix<T>, r: &Matrix<T>) -> f64 {
        let prod = a.cast::<f64>().matmul(&r.cast::<f64>()).unwrap();
        prod.max_abs_diff(&Matrix::identity(a.rows())).unwrap()
    }

    #[test]
    fn diagonal_case_is_analytic() {
        let a = Matrix::from_vec(2, 3, vec![2.0, 0.0, 0.0, 0.0, 4.0, 0.0]).unwrap();
        let r = right_inverse(&a, DEFAULT_COND_LIMIT).unwrap();
        let expected = Matrix::from_vec(3, 2, vec![0.5, 0.0, 0.0, 0.25, 0.0, 0.0]).unwrap();
        assert!(r.max_abs_diff(&expected).unwrap() <= 1e-14);
    }

    #[test]
    fn identity_is_its_own_right_inverse() {
        let a: Matrix<f64> = Matrix::identity(3);
        let r = right_inverse(&a, DEFAULT_COND_LIMIT).unwrap();
        assert!(r.max_abs_diff(&a).unwrap() <= 1e-14);
    }

    #[test]
    fn gaussian_residual_is_tiny_in_f64() {
        let a: Matrix<f64> = Matrix::sample(42, 64, &RngSpec::normal(1, 0.0, 1.0 / 42.0));
        let r = right_inverse(&a, DEFAULT_COND_LIMIT).unwrap();
        assert!(residual(&a, &r) <= 1e-10);
    }

    #[test]
    fn gaussian_residual_is_tiny_in_f32() {
        for seed in 0..5 {
            let a: Matrix<f32> = Matrix::sample(42, 64, &RngSpec::normal(seed, 0.0, 1.0 / 42.0));
            let r = right_inverse(&a, DEFAULT_COND_LIMIT).unwrap();
            assert!(residual(&a, &r) <= 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn tall_matrices_are_rejected() {
        let a: Matrix<f64> = Matrix::zeros(3, 2);
        assert!(matches!(
            right_inverse(&a, DEFAULT_COND_LIMIT),
            Err(Error::NotWide { .. })
        ));
    }

    #[test]
    fn rank_deficient_matrix_is_rejected() {
        // Second row is twice the first: rank 1 < 2.
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).unwrap();
        assert!(matches!(
            right_inverse(&a, DEFAULT_COND_LIMIT),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn cond_limit_is_enforced() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1e-6]).unwrap();
        assert!(matches!(
            right_inverse(&a, 1e8),
            Err(Error::IllConditioned { .. })
        ));
        assert!(right_inverse(&a, 1e14).is_ok());
    }

    #[test]
    fn residual_bound_holds_across_random_wide_shapes() {
        for (rows, cols, seed) in [(8, 8, 3_u64), (8, 16, 4), (20, 50, 5), (1, 4, 6)] {
            let a: Matrix<f64> =
                Matrix::sample(rows, cols, &RngSpec::normal(seed, 0.0, 1.0 / rows as f64));
            let r = right_inverse(&a, DEFAULT_COND_LIMIT).unwrap();
            assert!(residual(&a, &r) <= 1e-10, "{rows}x{cols}");
        }
    }
}
