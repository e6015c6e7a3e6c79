//! Cholesky factorization and solves for symmetric positive definite
//! pentadiagonal systems, the shape of `I + lambda * Omega` when `Omega` is a
//! squared second-difference matrix. Cost is O(q) per solve.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Lower bands of a symmetric pentadiagonal matrix: main diagonal, first and
/// second sub-diagonals.
#[derive(Debug, Clone)]
pub(crate) struct PentaBands {
    pub diag: Vec<f64>,
    pub sub1: Vec<f64>,
    pub sub2: Vec<f64>,
}

impl PentaBands {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }
}

/// Banded Cholesky factor (bandwidth 2) of a positive definite
/// pentadiagonal matrix.
#[derive(Debug, Clone)]
pub(crate) struct PentaCholesky {
    diag: Vec<f64>,
    sub1: Vec<f64>,
    sub2: Vec<f64>,
}

impl PentaCholesky {
    pub fn factor(a: &PentaBands) -> Result<Self> {
        let q = a.dim();
        if a.sub1.len() + 1 != q || a.sub2.len() + 2 != q {
            return Err(Error::Size {
                what: "pentadiagonal bands",
                expected: q,
                got: a.sub1.len() + 1,
            });
        }
        let mut diag = vec![0.0; q];
        let mut sub1 = vec![0.0; q.saturating_sub(1)];
        let mut sub2 = vec![0.0; q.saturating_sub(2)];
        for j in 0..q {
            let mut v = a.diag[j];
            if j >= 1 {
                v -= sub1[j - 1] * sub1[j - 1];
            }
            if j >= 2 {
                v -= sub2[j - 2] * sub2[j - 2];
            }
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Argument(format!(
                    "matrix not positive definite at pivot {j}"
                )));
            }
            diag[j] = v.sqrt();
            if j + 1 < q {
                let mut w = a.sub1[j];
                if j >= 1 {
                    w -= sub2[j - 1] * sub1[j - 1];
                }
                sub1[j] = w / diag[j];
            }
            if j + 2 < q {
                sub2[j] = a.sub2[j] / diag[j];
            }
        }
        Ok(Self { diag, sub1, sub2 })
    }

    /// Solves `A x = b` using the factorization.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let q = self.diag.len();
        debug_assert_eq!(b.len(), q);
        let mut x = b.clone();
        // forward: L y = b
        for i in 0..q {
            let mut v = x[i];
            if i >= 1 {
                v -= self.sub1[i - 1] * x[i - 1];
            }
            if i >= 2 {
                v -= self.sub2[i - 2] * x[i - 2];
            }
            x[i] = v / self.diag[i];
        }
        // backward: L^T x = y
        for i in (0..q).rev() {
            let mut v = x[i];
            if i + 1 < q {
                v -= self.sub1[i] * x[i + 1];
            }
            if i + 2 < q {
                v -= self.sub2[i] * x[i + 2];
            }
            x[i] = v / self.diag[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn dense_from_bands(b: &PentaBands) -> DMatrix<f64> {
        let q = b.dim();
        let mut a = DMatrix::zeros(q, q);
        for i in 0..q {
            a[(i, i)] = b.diag[i];
            if i + 1 < q {
                a[(i + 1, i)] = b.sub1[i];
                a[(i, i + 1)] = b.sub1[i];
            }
            if i + 2 < q {
                a[(i + 2, i)] = b.sub2[i];
                a[(i, i + 2)] = b.sub2[i];
            }
        }
        a
    }

    #[test]
    fn matches_dense_solve() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for q in [3usize, 4, 7, 40] {
            // I + lambda * D2' D2 style bands, diagonally dominant
            let bands = PentaBands {
                diag: (0..q).map(|_| 6.0 + rng.random::<f64>()).collect(),
                sub1: (0..q - 1).map(|_| -2.0 + 0.1 * rng.random::<f64>()).collect(),
                sub2: (0..q - 2).map(|_| 1.0).collect(),
            };
            let chol = PentaCholesky::factor(&bands).unwrap();
            let b = DVector::from_fn(q, |_, _| rng.random::<f64>() - 0.5);
            let x = chol.solve(&b);
            let dense = dense_from_bands(&bands);
            let x_ref = dense.lu().solve(&b).unwrap();
            assert_relative_eq!(x, x_ref, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let bands = PentaBands {
            diag: vec![1.0, -1.0, 1.0],
            sub1: vec![0.0, 0.0],
            sub2: vec![0.0],
        };
        assert!(PentaCholesky::factor(&bands).is_err());
    }
}
