//! Location and scatter functionals evaluated on samples.
//!
//! Every estimator here is the plug-in version of a functional on the
//! empirical distribution, so covariances use the divisor n rather than
//! n − 1. Scatter estimators are affine equivariant:
//! S(AX + b) = A·S(X)·Aᵀ for full-rank A.

mod pair;
mod solver;
mod source;
mod symmetrized;
mod weights;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use pair::{
    LocationKind, ScatterKind, ScatterPairSpec, ScatterSpec, Symmetrization, DEFAULT_INCOMPLETE_DEGREE,
};
pub use solver::SolverOptions;
pub use symmetrized::{incomplete_symmetrized_scatter, symmetrized_scatter};
pub use weights::{huber_weight_constants, huber_weight_constants_with_tail, HuberTail, WeightKind, WeightSpec};

use crate::error::{Error, Result};
use source::Columns;

/// A p × n sample, one observation per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    /// Validates p ≥ 2, n ≥ p + 1 and finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (p, n) = values.shape();
        if p < 2 {
            return Err(Error::InvalidInput(format!("dimension must be at least 2, got {p}")));
        }
        if n < p + 1 {
            return Err(Error::InvalidInput(format!(
                "need at least p + 1 = {} observations, got {n}",
                p + 1
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at variable {}, observation {}",
                pos % p,
                pos / p
            )));
        }
        Ok(Self { values })
    }

    /// Build from observations given as rows (n × p).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(p, n, |i, j| rows[j][i]))
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    /// Affine image A·X + b·1ᵀ.
    pub fn affine(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        let mut y = a * &self.values;
        for mut col in y.column_iter_mut() {
            col += b;
        }
        Self::new(y)
    }

    pub(crate) fn columns(&self) -> Columns<'_> {
        Columns::new(self.values.as_slice(), self.p())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationVector(DVector<f64>);

impl LocationVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(Error::InvalidInput("location has non-finite entries".into()))
        }
    }

    pub(crate) fn from_vector(values: DVector<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(p: usize) -> Self {
        Self(DVector::zeros(p))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Symmetric positive semi-definite p × p matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterMatrix(DMatrix<f64>);

impl ScatterMatrix {
    const SYMMETRY_TOL: f64 = 1e-10;
    const PSD_TOL: f64 = 1e-10;

    /// Checks symmetry (relative 1e-10) and positive semi-definiteness
    /// (smallest eigenvalue ≥ −1e-10 · largest).
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::InvalidInput("scatter matrix must be square".into()));
        }
        let scale = values.amax().max(f64::MIN_POSITIVE);
        let asym = (&values - values.transpose()).amax();
        if asym > Self::SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput(format!("scatter matrix not symmetric (deviation {asym:.3e})")));
        }
        let values = crate::linalg::symmetrize(&values);
        let eig = values.clone().symmetric_eigenvalues();
        if eig.min() < -Self::PSD_TOL * eig.max().abs() {
            return Err(Error::InvalidInput("scatter matrix is not positive semi-definite".into()));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_symmetric_unchecked(values: DMatrix<f64>) -> Self {
        Self(values)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Arithmetic mean of the columns.
pub fn mean_location(x: &DataMatrix) -> LocationVector {
    LocationVector(solver::mean_of(&x.columns()))
}

/// Covariance with divisor n. Rank deficiency is allowed here.
pub fn sample_cov(x: &DataMatrix) -> ScatterMatrix {
    let mean = solver::mean_of(&x.columns());
    ScatterMatrix(solver::second_moment(&x.columns(), Some(&mean)))
}

/// Scatter matrix of fourth moments,
/// (1/(p+2)) · (1/n) Σ rᵢ² (xᵢ − x̄)(xᵢ − x̄)ᵀ with rᵢ the Mahalanobis
/// distance under the sample covariance.
pub fn cov4(x: &DataMatrix) -> Result<ScatterMatrix> {
    let cols = x.columns();
    let mean = solver::mean_of(&cols);
    let cov = solver::second_moment(&cols, Some(&mean));
    Ok(ScatterMatrix(solver::fourth_moment(&cols, Some(&mean), &cov)?))
}

/// Joint M-estimate of location and scatter, iterated from (mean, cov)
/// until the relative change in S (Frobenius) and the change in T (scaled
/// by the root mean marginal scale √(tr S / p)) both fall below `tol`.
pub fn m_estimate(
    x: &DataMatrix,
    weights: &WeightSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(LocationVector, ScatterMatrix)> {
    if let Some(p) = weights.dim() {
        if p != x.p() {
            return Err(Error::DimensionMismatch { expected: p, actual: x.p() });
        }
    }
    let fit = solver::m_solve(&x.columns(), weights, true, &SolverOptions { tol, max_iter })?;
    Ok((
        LocationVector(fit.location.expect("location estimated")),
        ScatterMatrix(fit.scatter),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_matrix, stream};
    use rand::Rng;

    fn data(rows: &[[f64; 2]]) -> DataMatrix {
        DataMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn gaussian(p: usize, n: usize, seed: u64) -> DataMatrix {
        DataMatrix::new(standard_normal_matrix(p, n, &mut stream(seed))).unwrap()
    }

    fn random_affine(p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = stream(seed);
        let a = standard_normal_matrix(p, p, &mut rng) + DMatrix::identity(p, p) * 2.0;
        let b = DVector::from_fn(p, |_, _| rng.random_range(-5.0..5.0));
        (a, b)
    }

    #[test]
    fn data_matrix_validation() {
        assert!(DataMatrix::new(DMatrix::zeros(1, 5)).is_err());
        assert!(DataMatrix::new(DMatrix::zeros(3, 3)).is_err());
        let mut m = DMatrix::zeros(2, 4);
        m[(1, 2)] = f64::NAN;
        assert!(DataMatrix::new(m).is_err());
    }

    #[test]
    fn mean_and_cov_of_two_points() {
        // below the DataMatrix size floor, so go through the raw estimators
        let raw = [0.0, 0.0, 2.0, 0.0];
        let cols = Columns::new(&raw, 2);
        let mean = solver::mean_of(&cols);
        assert_eq!(mean.as_slice(), &[1.0, 0.0]);
        let cov = solver::second_moment(&cols, Some(&mean));
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let x = data(&[[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]]);
        assert_eq!(mean_location(&x).as_vector().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn constant_data_mean() {
        let x = data(&[[3.0, -1.0]; 5]);
        assert_eq!(mean_location(&x).as_vector().as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn gaussian_mean_and_cov_large_sample() {
        let mut z = standard_normal_matrix(2, 100_000, &mut stream(21));
        z.row_mut(1).scale_mut(2.0);
        let x = DataMatrix::new(z).unwrap();
        let m = mean_location(&x);
        assert!(m.as_vector().amax() < 0.02);
        let c = sample_cov(&x);
        assert!((c.as_matrix()[(0, 0)] - 1.0).abs() < 0.1);
        assert!((c.as_matrix()[(1, 1)] - 4.0).abs() < 0.1);
    }

    #[test]
    fn cov_is_affine_equivariant() {
        let x = gaussian(3, 200, 1);
        let (a, b) = random_affine(3, 2);
        let y = x.affine(&a, &b).unwrap();
        let expected = &a * sample_cov(&x).as_matrix() * a.transpose();
        let got = sample_cov(&y);
        assert!((got.as_matrix() - &expected).amax() < 1e-9 * expected.amax());
    }

    #[test]
    fn cov4_is_affine_equivariant() {
        let x = gaussian(3, 300, 3);
        let (a, b) = random_affine(3, 4);
        let y = x.affine(&a, &b).unwrap();
        let expected = &a * cov4(&x).unwrap().as_matrix() * a.transpose();
        let got = cov4(&y).unwrap();
        assert!((got.as_matrix() - &expected).amax() < 1e-8 * expected.amax());
    }

    #[test]
    fn cov4_of_gaussian_is_near_identity() {
        let x = gaussian(3, 200_000, 5);
        let c = cov4(&x).unwrap();
        assert!((c.as_matrix() - DMatrix::identity(3, 3)).amax() < 0.03);
    }

    #[test]
    fn cov4_rejects_singular_covariance() {
        let x = data(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        assert!(matches!(cov4(&x), Err(Error::WhiteningImpossible { .. })));
    }

    #[test]
    fn identity_weights_reduce_to_mean_and_cov() {
        let x = gaussian(3, 100, 6);
        let (t, s) = m_estimate(&x, &WeightSpec::Identity, 1e-6, 1).unwrap();
        assert!((t.as_vector() - mean_location(&x).as_vector()).amax() < 1e-14);
        assert!((s.as_matrix() - sample_cov(&x).as_matrix()).amax() < 1e-14);
    }

    #[test]
    fn m_estimates_are_affine_equivariant() {
        let x = gaussian(3, 400, 7);
        let (a, b) = random_affine(3, 8);
        let y = x.affine(&a, &b).unwrap();
        let tol = 1e-9;
        for kind in [WeightKind::cauchy(), WeightKind::huber(), WeightKind::TLikelihood { nu: 5.0 }] {
            let w = kind.resolve(3).unwrap();
            let (tx, sx) = m_estimate(&x, &w, tol, 2000).unwrap();
            let (ty, sy) = m_estimate(&y, &w, tol, 2000).unwrap();
            let t_expected = &a * tx.as_vector() + &b;
            let s_expected = &a * sx.as_matrix() * a.transpose();
            let scale = s_expected.amax();
            assert!((ty.as_vector() - t_expected).amax() < 1e-6 * scale.sqrt(), "{kind:?}");
            assert!((sy.as_matrix() - &s_expected).amax() < 1e-6 * scale, "{kind:?}");
        }
    }

    #[test]
    fn cauchy_estimate_resists_gross_outliers() {
        let n = 2000;
        let mut rng = stream(9);
        let clean = standard_normal_matrix(3, n, &mut rng);
        let mut dirty = clean.clone();
        for j in 0..n / 100 {
            for i in 0..3 {
                dirty[(i, j)] += 100.0;
            }
        }
        let clean = DataMatrix::new(clean).unwrap();
        let dirty = DataMatrix::new(dirty).unwrap();
        let w = WeightKind::cauchy().resolve(3).unwrap();
        let (_, s_clean) = m_estimate(&clean, &w, 1e-8, 1000).unwrap();
        let (_, s_dirty) = m_estimate(&dirty, &w, 1e-8, 1000).unwrap();
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() / b.norm();
        assert!(rel(s_dirty.as_matrix(), s_clean.as_matrix()) < 0.05);
        let cov_change = rel(sample_cov(&dirty).as_matrix(), sample_cov(&clean).as_matrix());
        assert!(cov_change > 0.5, "{cov_change}");
    }

    #[test]
    fn m_estimate_reports_non_convergence() {
        let x = gaussian(3, 200, 10);
        let w = WeightKind::cauchy().resolve(3).unwrap();
        match m_estimate(&x, &w, 1e-14, 2) {
            Err(Error::NonConvergence { iterations, residual, last }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
                assert_eq!(last.1.dim(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn m_estimate_weight_dimension_mismatch() {
        let x = gaussian(3, 50, 11);
        let w = WeightKind::huber().resolve(4).unwrap();
        assert!(matches!(m_estimate(&x, &w, 1e-6, 10), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn scatter_matrix_validation() {
        assert!(ScatterMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(ScatterMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(ScatterMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).is_ok());
    }
}
