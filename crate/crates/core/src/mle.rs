//! Exact likelihood evaluation and the closed-form per-cell maximum
//! likelihood estimate for the two-way piecewise-constant hazard model, plus
//! scree diagnostics for rank selection.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::CellStats;

/// An `m x p` matrix of hazard rates (events per second). Cells without any
/// exposure have no defined estimate and are marked in `missing`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardMatrix {
    pub values: DMatrix<f64>,
    pub missing: DMatrix<bool>,
}

impl HazardMatrix {
    /// Wraps a fully observed matrix.
    pub fn dense(values: DMatrix<f64>) -> Self {
        let missing = DMatrix::from_element(values.nrows(), values.ncols(), false);
        Self { values, missing }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Grand mean of the non-missing entries.
    pub fn observed_mean(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for j in 0..self.nrows() {
            for k in 0..self.ncols() {
                if !self.missing[(j, k)] {
                    sum += self.values[(j, k)];
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::AllMissing);
        }
        Ok(sum / n as f64)
    }

    /// Dense copy with missing cells replaced by the grand mean of the
    /// observed ones.
    pub fn imputed(&self) -> Result<DMatrix<f64>> {
        let mean = self.observed_mean()?;
        let mut out = self.values.clone();
        for j in 0..self.nrows() {
            for k in 0..self.ncols() {
                if self.missing[(j, k)] {
                    out[(j, k)] = mean;
                }
            }
        }
        Ok(out)
    }
}

/// Log likelihood of a hazard matrix given the per-cell statistics:
/// `sum_jk [ d log h - t h ]` with the `0 log 0 = 0` convention; a cell with
/// observed events and zero hazard yields `-inf`.
///
/// The matrix must be defined (non-missing) wherever the statistics carry
/// events or exposure, and nonnegative everywhere it is defined.
pub fn log_likelihood(h: &HazardMatrix, stats: &CellStats) -> Result<f64> {
    let (m, p) = (stats.rows(), stats.cols());
    if h.nrows() != m || h.ncols() != p {
        return Err(Error::Size {
            what: "hazard matrix rows*cols",
            expected: m * p,
            got: h.nrows() * h.ncols(),
        });
    }
    let mut ll = 0.0f64;
    for j in 0..m {
        for k in 0..p {
            let d = stats.d_sum[(j, k)];
            let t = stats.t_sum[(j, k)];
            if h.missing[(j, k)] {
                if d > 0.0 || t > 0.0 {
                    return Err(Error::Argument(format!(
                        "hazard missing at ({j}, {k}) where data is present"
                    )));
                }
                continue;
            }
            let hv = h.values[(j, k)];
            if hv < 0.0 || !hv.is_finite() {
                return Err(Error::Argument(format!(
                    "hazard must be finite and >= 0, got {hv} at ({j}, {k})"
                )));
            }
            if d > 0.0 {
                if hv == 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                ll += d * hv.ln();
            }
            ll -= t * hv;
        }
    }
    Ok(ll)
}

/// Per-cell maximum likelihood estimate `d / t`; cells with zero exposure
/// are marked missing.
pub fn mle(stats: &CellStats) -> HazardMatrix {
    let (m, p) = (stats.rows(), stats.cols());
    let mut values = DMatrix::zeros(m, p);
    let mut missing = DMatrix::from_element(m, p, false);
    for j in 0..m {
        for k in 0..p {
            let t = stats.t_sum[(j, k)];
            if t > 0.0 {
                values[(j, k)] = stats.d_sum[(j, k)] / t;
            } else {
                missing[(j, k)] = true;
            }
        }
    }
    HazardMatrix { values, missing }
}

/// Singular values of the (grand-mean-imputed) hazard matrix in descending
/// order. An advisory diagnostic: the imputation constant shifts only the
/// low-order values.
pub fn scree(h: &HazardMatrix) -> Result<Vec<f64>> {
    let dense = h.imputed()?;
    let mut sv: Vec<f64> = dense.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellStats;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};

    fn stats(d: DMatrix<f64>, t: DMatrix<f64>) -> CellStats {
        CellStats {
            n_records: d.sum() as usize,
            d_sum: d,
            t_sum: t,
        }
    }

    #[test]
    fn loglik_simple_cell() {
        let s = stats(dmatrix![1.0], dmatrix![2.0]);
        let h = HazardMatrix::dense(dmatrix![1.0]);
        assert_relative_eq!(log_likelihood(&h, &s).unwrap(), -2.0);
    }

    #[test]
    fn loglik_zero_hazard_no_events() {
        let s = stats(dmatrix![0.0], dmatrix![3.0]);
        let h = HazardMatrix::dense(dmatrix![0.0]);
        assert_eq!(log_likelihood(&h, &s).unwrap(), 0.0);
    }

    #[test]
    fn loglik_zero_hazard_with_event_is_neg_inf() {
        let s = stats(dmatrix![1.0], dmatrix![1.0]);
        let h = HazardMatrix::dense(dmatrix![0.0]);
        assert_eq!(log_likelihood(&h, &s).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn loglik_rejects_negative_hazard() {
        let s = stats(dmatrix![1.0], dmatrix![1.0]);
        let h = HazardMatrix::dense(dmatrix![-0.5]);
        assert!(matches!(log_likelihood(&h, &s), Err(Error::Argument(_))));
    }

    #[test]
    fn mle_basic_and_missing() {
        let s = stats(dmatrix![1.0], dmatrix![2.0]);
        let est = mle(&s);
        assert_eq!(est.values[(0, 0)], 0.5);
        assert!(!est.missing[(0, 0)]);

        let s = stats(dmatrix![0.0], dmatrix![0.0]);
        let est = mle(&s);
        assert!(est.missing[(0, 0)]);
    }

    #[test]
    fn mle_two_by_two() {
        let s = stats(dmatrix![2.0, 0.0; 0.0, 1.0], dmatrix![4.0, 1.0; 2.0, 2.0]);
        let est = mle(&s);
        assert_eq!(est.values, dmatrix![0.5, 0.0; 0.0, 0.5]);
    }

    #[test]
    fn mle_maximizes_likelihood() {
        let d = dmatrix![3.0, 0.0, 1.0; 2.0, 5.0, 0.0];
        let t = dmatrix![4.0, 1.5, 2.0; 6.0, 5.0, 3.0];
        let s = stats(d, t);
        let est = mle(&s);
        let base = log_likelihood(&est, &s).unwrap();
        for delta in [-0.05, 0.05, 0.3] {
            for j in 0..2 {
                for k in 0..3 {
                    let mut perturbed = est.clone();
                    let v = perturbed.values[(j, k)] + delta;
                    if v < 0.0 {
                        continue;
                    }
                    perturbed.values[(j, k)] = v;
                    assert!(log_likelihood(&perturbed, &s).unwrap() <= base + 1e-12);
                }
            }
        }
    }

    #[test]
    fn mle_time_rescaling_equivariance() {
        let d = dmatrix![3.0, 1.0; 2.0, 5.0];
        let t = dmatrix![4.0, 1.5; 6.0, 5.0];
        let s = stats(d.clone(), t.clone());
        let scaled = CellStats {
            d_sum: d,
            t_sum: t * 3.0,
            n_records: s.n_records,
        };
        let a = mle(&s);
        let b = mle(&scaled);
        assert_relative_eq!(&a.values / 3.0, b.values, epsilon = 1e-14);
    }

    #[test]
    fn scree_rank_one() {
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let v = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let h = HazardMatrix::dense(&u * v.transpose());
        let sv = scree(&h).unwrap();
        assert_relative_eq!(sv[0], 1.0, epsilon = 1e-12);
        assert!(sv[1].abs() < 1e-12);
    }

    #[test]
    fn scree_zero_matrix() {
        let h = HazardMatrix::dense(DMatrix::zeros(3, 4));
        let sv = scree(&h).unwrap();
        assert!(sv.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn scree_matches_gram_eigenvalues() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let h = DMatrix::from_fn(5, 5, |_, _| rng.random::<f64>());
        let gram = h.transpose() * &h;
        let mut eig: Vec<f64> = gram
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|&e| e.max(0.0).sqrt())
            .collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let sv = scree(&HazardMatrix::dense(h)).unwrap();
        for (a, b) in sv.iter().zip(eig.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn scree_all_missing_errors() {
        let values = DMatrix::zeros(2, 2);
        let missing = DMatrix::from_element(2, 2, true);
        let h = HazardMatrix { values, missing };
        assert!(matches!(scree(&h), Err(Error::AllMissing)));
    }

    #[test]
    fn scree_descending_nonnegative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let h = HazardMatrix::dense(DMatrix::from_fn(6, 9, |_, _| rng.random::<f64>()));
        let sv = scree(&h).unwrap();
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        assert!(sv.iter().all(|&s| s >= 0.0));
    }
}
