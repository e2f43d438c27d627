//! Singular values by one-sided Jacobi and the numerical rank built on them.
//! Intended for the small blocks the rank checkers look at (≤ 256 × 256).

use crate::error::{MixerError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

const MAX_SWEEPS: usize = 80;

/// Singular values in descending order.
pub fn singular_values(m: &Tensor) -> Result<Vec<f64>> {
    if m.ndim() != 2 || m.rows() == 0 || m.cols() == 0 {
        return Err(MixerError::shape("singular_values", format!("{:?}", m.shape())));
    }
    // Work on whichever orientation has fewer columns; store columns
    // contiguously.
    let (rows, cols) = (m.rows(), m.cols());
    let (len, n, cols_data) = if cols <= rows {
        let mut c = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                c[j * rows + i] = m.at2(i, j);
            }
        }
        (rows, cols, c)
    } else {
        (cols, rows, m.data().to_vec())
    };
    let mut a = cols_data;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..len {
                    let x = a[p * len + k];
                    let y = a[q * len + k];
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..len {
                    let x = a[p * len + k];
                    let y = a[q * len + k];
                    a[p * len + k] = c * x - s * y;
                    a[q * len + k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = (0..n)
        .map(|j| a[j * len..(j + 1) * len].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

/// Number of singular values at least `rel_tol` times the largest. The zero
/// matrix has rank 0.
pub fn numerical_rank(m: &Tensor, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(MixerError::Config(format!("rel_tol {rel_tol} outside (0, 1)")));
    }
    let sv = singular_values(m)?;
    let top = sv[0];
    if top == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s >= rel_tol * top).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::matmul_nt;

    /// Rank by Gaussian elimination with partial pivoting, independent of the
    /// SVD path.
    fn row_reduce_rank(m: &Tensor, tol: f64) -> usize {
        let mut a = m.clone();
        let (r, c) = (a.rows(), a.cols());
        let scale = a.max_abs();
        let mut rank = 0;
        for col in 0..c {
            if rank == r {
                break;
            }
            let piv = (rank..r)
                .max_by(|&x, &y| a.at2(x, col).abs().total_cmp(&a.at2(y, col).abs()))
                .unwrap();
            if a.at2(piv, col).abs() <= tol * scale {
                continue;
            }
            for j in 0..c {
                let tmp = a.at2(rank, j);
                *a.at2_mut(rank, j) = a.at2(piv, j);
                *a.at2_mut(piv, j) = tmp;
            }
            for i in rank + 1..r {
                let f = a.at2(i, col) / a.at2(rank, col);
                for j in col..c {
                    let v = a.at2(rank, j);
                    *a.at2_mut(i, j) -= f * v;
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn outer_product_has_rank_one() {
        let mut rng = RngState::new(21);
        let q = rng.normal_tensor(&[6, 1], 1.0);
        let k = rng.normal_tensor(&[9, 1], 1.0);
        let m = matmul_nt(&q, &k).unwrap();
        assert_eq!(numerical_rank(&m, DEFAULT_RANK_TOL).unwrap(), 1);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        assert_eq!(numerical_rank(&Tensor::zeros(&[4, 3]), 1e-8).unwrap(), 0);
    }

    #[test]
    fn sum_of_three_outer_products() {
        let mut rng = RngState::new(22);
        let q = rng.normal_tensor(&[8, 3], 1.0);
        let k = rng.normal_tensor(&[8, 3], 1.0);
        let m = matmul_nt(&q, &k).unwrap();
        assert_eq!(row_reduce_rank(&m, 1e-10), 3);
        assert_eq!(numerical_rank(&m, 1e-8).unwrap(), 3);
    }

    #[test]
    fn singular_values_of_diagonal() {
        let mut m = Tensor::zeros(&[3, 3]);
        *m.at2_mut(0, 0) = -2.0;
        *m.at2_mut(1, 1) = 5.0;
        *m.at2_mut(2, 2) = 0.5;
        let sv = singular_values(&m).unwrap();
        assert!((sv[0] - 5.0).abs() < 1e-14);
        assert!((sv[1] - 2.0).abs() < 1e-14);
        assert!((sv[2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn frobenius_norm_is_preserved() {
        let mut rng = RngState::new(23);
        let m = rng.normal_tensor(&[7, 12], 1.0);
        let sv = singular_values(&m).unwrap();
        let fro2: f64 = m.data().iter().map(|v| v * v).sum();
        let sv2: f64 = sv.iter().map(|s| s * s).sum();
        assert!((fro2 - sv2).abs() <= 1e-12 * fro2);
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(numerical_rank(&Tensor::identity(2), 0.0).is_err());
        assert!(numerical_rank(&Tensor::identity(2), 1.0).is_err());
    }

    #[test]
    fn generic_random_matches_row_reduction() {
        let mut rng = RngState::new(24);
        for r in 1..6 {
            let q = rng.normal_tensor(&[10, r], 1.0);
            let k = rng.normal_tensor(&[7, r], 1.0);
            let m = matmul_nt(&q, &k).unwrap();
            assert_eq!(numerical_rank(&m, 1e-8).unwrap(), row_reduce_rank(&m, 1e-10));
        }
    }
}
