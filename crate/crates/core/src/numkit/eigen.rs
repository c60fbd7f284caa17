//! Symmetric eigendecomposition (cyclic Jacobi) and orthonormalization.

use super::matrix::{dot, Matrix};
use super::rng::RngStream;
use crate::error::{ensure, Result};

const SYMMETRY_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Sorted descending.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `V diag(values) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)])
                .sum()
        })
    }
}

/// Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.
///
/// Symmetry is checked relative to the largest entry; the strictly lower
/// triangle is then mirrored from the upper one before iterating.
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    ensure!(m.is_square(), "matrix must be square, got {:?}", m.shape());
    let n = m.rows();
    let scale = m.max_abs().max(1.0);
    ensure!(
        m.asymmetry() <= SYMMETRY_TOL * scale,
        "matrix is not symmetric (max asymmetry {:e})",
        m.asymmetry()
    );

    let mut a = Matrix::from_fn(n, n, |i, j| if i <= j { m[(i, j)] } else { m[(j, i)] });
    let mut v = Matrix::identity(n);

    let total = a.frobenius_sq();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= f64::EPSILON * f64::EPSILON * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = v.select_columns(&order);
    Ok(SymmetricEigen { values, vectors })
}

fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    // skip rotations that cannot change the diagonal in floating point
    if apq.abs() < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        a[(p, q)] = 0.0;
        a[(q, p)] = 0.0;
        return;
    }
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Orthonormalize the columns of `m` in place order (modified Gram-Schmidt,
/// applied twice for full working precision). Returns the Q factor.
pub fn orthonormalize_columns(m: &Matrix) -> Result<Matrix> {
    let (rows, cols) = m.shape();
    ensure!(cols <= rows, "cannot orthonormalize {cols} columns in R^{rows}");
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut v = m.column(j);
        for _ in 0..2 {
            for u in &q {
                let proj = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(x, ui)| *x -= proj * ui);
            }
        }
        let n = dot(&v, &v).sqrt();
        ensure!(n > 1e-12, "columns are linearly dependent");
        v.iter_mut().for_each(|x| *x /= n);
        q.push(v);
    }
    Ok(Matrix::from_fn(rows, cols, |i, j| q[j][i]))
}

/// A `d x d` matrix with orthonormal columns: Q factor of a standard Gaussian
/// matrix.
pub fn random_orthonormal_basis(rng: &mut RngStream, d: usize) -> Result<Matrix> {
    ensure!(d >= 1, "basis dimension must be >= 1");
    loop {
        let g = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
        // a singular Gaussian draw has probability zero; redraw if it happens
        if let Ok(q) = orthonormalize_columns(&g) {
            return Ok(q);
        }
    }
}

/// `max |MᵀM - I|`.
pub fn orthonormality_error(m: &Matrix) -> f64 {
    let g = m.transpose().gram_rows();
    let n = g.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_input() {
        let m = Matrix::diag(&[4.0, 3.0, 2.0, 1.0]);
        let e = symmetric_eigen(&m).unwrap();
        assert_eq!(e.values, vec![4.0, 3.0, 2.0, 1.0]);
        assert_eq!(e.vectors, Matrix::identity(4));
    }

    #[test]
    fn unsorted_diagonal_gets_sorted() {
        let m = Matrix::diag(&[1.0, 5.0, 3.0]);
        let e = symmetric_eigen(&m).unwrap();
        assert_eq!(e.values, vec![5.0, 3.0, 1.0]);
        assert_eq!(e.vectors.column(0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two() {
        // characteristic polynomial (2-l)^2 - 1 = 0 -> l = 3, 1
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = symmetric_eigen(&m).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn similarity_invariance() {
        let mut rng = RngStream::new(3);
        let r = random_orthonormal_basis(&mut rng, 6).unwrap();
        let d = Matrix::diag(&[9.0, 7.5, 3.0, 1.0, -2.0, 0.5]);
        let m = r.matmul(&d).unwrap().matmul(&r.transpose()).unwrap();
        let m = Matrix::from_fn(6, 6, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
        let e = symmetric_eigen(&m).unwrap();
        let expected = [9.0, 7.5, 3.0, 1.0, 0.5, -2.0];
        for (got, want) in e.values.iter().zip(expected) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        let recon = e.reconstruct();
        assert!(recon.sub(&m).unwrap().frobenius() <= 1e-7 * m.frobenius());
        assert!(orthonormality_error(&e.vectors) < 1e-10);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(symmetric_eigen(&Matrix::zeros(2, 3)).is_err());
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(symmetric_eigen(&m).is_err());
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = RngStream::new(11);
        let b1 = random_orthonormal_basis(&mut rng, 1).unwrap();
        assert_eq!(b1[(0, 0)].abs(), 1.0);
        assert!(random_orthonormal_basis(&mut rng, 0).is_err());
        let b5 = random_orthonormal_basis(&mut rng, 5).unwrap();
        assert!(orthonormality_error(&b5) <= 1e-10);
        let b50 = random_orthonormal_basis(&mut rng, 50).unwrap();
        for j in 0..50 {
            let c = b50.column(j);
            assert!((dot(&c, &c).sqrt() - 1.0).abs() <= 1e-10);
        }
    }
}
