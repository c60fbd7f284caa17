use super::eigen::symmetric_eigen;
use super::matrix::Matrix;
use crate::error::{ensure, Result};

/// Singular values of `m`, descending, from the eigenvalues of `m mᵀ`
/// (negative round-off clipped to zero).
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let eig = symmetric_eigen(&m.gram_rows())?;
    Ok(eig.values.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

/// `min_O ||O A - B||_F^2` over orthonormal `O`, for `A`, `B` of equal shape.
///
/// Equals `||A||^2 + ||B||^2 - 2 * (sum of singular values of B Aᵀ)`.
pub fn procrustes_min_distance_sq(a: &Matrix, b: &Matrix) -> Result<f64> {
    ensure!(
        a.shape() == b.shape(),
        "procrustes shape mismatch: {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let cross = b.matmul(&a.transpose())?;
    let nuclear: f64 = singular_values(&cross)?.iter().sum();
    Ok((a.frobenius_sq() + b.frobenius_sq() - 2.0 * nuclear).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{random_orthonormal_basis, RngStream};

    fn rows_of_basis(basis: &Matrix, idx: &[usize]) -> Matrix {
        basis.select_columns(idx).transpose()
    }

    #[test]
    fn identical_inputs() {
        let mut rng = RngStream::new(1);
        let b = random_orthonormal_basis(&mut rng, 8).unwrap();
        let a = rows_of_basis(&b, &[0, 1, 2]);
        assert!(procrustes_min_distance_sq(&a, &a).unwrap() < 1e-10);
    }

    #[test]
    fn disjoint_index_sets() {
        let mut rng = RngStream::new(2);
        let b = random_orthonormal_basis(&mut rng, 10).unwrap();
        let a = rows_of_basis(&b, &[0, 1, 2]);
        let c = rows_of_basis(&b, &[5, 6, 7]);
        let d = procrustes_min_distance_sq(&a, &c).unwrap();
        assert!((d - 6.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn rotated_copy_is_zero_distance() {
        let mut rng = RngStream::new(3);
        let b = random_orthonormal_basis(&mut rng, 9).unwrap();
        let o = random_orthonormal_basis(&mut rng, 4).unwrap();
        let a = rows_of_basis(&b, &[1, 3, 4, 8]);
        let oa = o.matmul(&a).unwrap();
        assert!(procrustes_min_distance_sq(&a, &oa).unwrap() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        assert!(procrustes_min_distance_sq(&Matrix::zeros(2, 3), &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = RngStream::new(4);
        let a = Matrix::from_fn(3, 6, |_, _| rng.standard_normal());
        let b = Matrix::from_fn(3, 6, |_, _| rng.standard_normal());
        let ab = procrustes_min_distance_sq(&a, &b).unwrap();
        let ba = procrustes_min_distance_sq(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }
}
