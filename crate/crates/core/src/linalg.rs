//! Dense symmetric solves for small systems (the coefficient dimension is
//! typically single-digit).

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub(crate) struct Cholesky {
    dim: usize,
    // Row-major lower triangle, full dim x dim storage.
    l: Vec<f64>,
}

impl Cholesky {
    /// Factor a symmetric matrix. Returns `None` when a pivot is not
    /// positive (relative to the largest diagonal entry), i.e. the matrix
    /// is singular or indefinite.
    pub fn decompose(a: &[Vec<f64>]) -> Option<Self> {
        let dim = a.len();
        let max_diag = (0..dim).map(|i| a[i][i].abs()).fold(0.0_f64, f64::max);
        if !(max_diag.is_finite()) || max_diag == 0.0 {
            return None;
        }
        let tol = 1e-12 * max_diag;
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                if i == j {
                    // Also rejects NaN pivots.
                    if s.is_nan() || s <= tol {
                        return None;
                    }
                    l[i * dim + i] = s.sqrt();
                } else {
                    l[i * dim + j] = s / l[j * dim + j];
                }
            }
        }
        Some(Self { dim, l })
    }

    /// Solve `A x = b` using the stored factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.dim);
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
