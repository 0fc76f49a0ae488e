//! Minimal dense routines for the small (D x D) symmetric positive-definite
//! covariance blocks used throughout the crate.

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    /// Row-major lower triangle (upper entries are zero).
    factor: Vec<f64>,
}

impl Cholesky {
    /// Factorizes the row-major `dim x dim` matrix `a`. Returns `None` when
    /// the matrix is not (numerically) positive definite.
    pub fn new(a: &[f64], dim: usize) -> Option<Cholesky> {
        debug_assert_eq!(a.len(), dim * dim);
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut sum = a[i * dim + j];
                for p in 0..j {
                    sum -= l[i * dim + p] * l[j * dim + p];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return None;
                    }
                    l[i * dim + j] = sum.sqrt();
                } else {
                    l[i * dim + j] = sum / l[j * dim + j];
                }
            }
        }
        Some(Cholesky { dim, factor: l })
    }

    /// log |A| = 2 * sum(log L_ii).
    pub fn log_determinant(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += self.factor[i * self.dim + i].ln();
        }
        2.0 * acc
    }

    /// Quadratic form v^T A^{-1} v via two triangular solves.
    pub fn mahalanobis_squared(&self, v: &[f64], scratch: &mut [f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        debug_assert_eq!(scratch.len(), self.dim);
        // Solve L y = v; then v^T A^{-1} v = |y|^2.
        for i in 0..self.dim {
            let mut sum = v[i];
            for p in 0..i {
                sum -= self.factor[i * self.dim + p] * scratch[p];
            }
            scratch[i] = sum / self.factor[i * self.dim + i];
        }
        scratch.iter().map(|y| y * y).sum()
    }
}

/// Max absolute asymmetry of a row-major square matrix.
pub fn symmetry_error(a: &[f64], dim: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        for j in (i + 1)..dim {
            worst = worst.max((a[i * dim + j] - a[j * dim + i]).abs());
        }
    }
    worst
}
