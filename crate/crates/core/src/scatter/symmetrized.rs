//! Symmetrized scatters: a base scatter evaluated on pairwise differences
//! with the location pinned at the origin.

use rand::seq::SliceRandom;

use super::pair::ScatterKind;
use super::solver::{self, SolverOptions};
use super::source::{AllPairs, CyclicPairs, Observations};
use super::{DataMatrix, ScatterMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// Base scatter on all n(n−1)/2 differences xᵢ − xⱼ, i < j.
pub fn symmetrized_scatter(x: &DataMatrix, base: &ScatterKind, opts: &SolverOptions) -> Result<ScatterMatrix> {
    if x.n() < 3 {
        return Err(Error::InvalidInput("symmetrized scatter needs at least 3 observations".into()));
    }
    let pairs = AllPairs::new(x.as_matrix().as_slice(), x.p());
    origin_scatter(&pairs, base, opts)
}

/// Base scatter on the cyclic-lag difference set: after permuting the
/// columns with a permutation drawn from `seed`, each observation is paired
/// with its successors at lags 1..=d/2, so it appears in exactly d
/// differences.
pub fn incomplete_symmetrized_scatter(
    x: &DataMatrix,
    base: &ScatterKind,
    d: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<ScatterMatrix> {
    let order = incomplete_order(x.n(), d, seed)?;
    let pairs = CyclicPairs::new(x.as_matrix().as_slice(), x.p(), order, d / 2);
    origin_scatter(&pairs, base, opts)
}

pub(crate) fn incomplete_order(n: usize, d: usize, seed: u64) -> Result<Vec<usize>> {
    if d < 2 || d % 2 != 0 {
        return Err(Error::InvalidParameter(format!("incomplete degree d must be even and >= 2, got {d}")));
    }
    if d >= n {
        return Err(Error::InvalidParameter(format!("incomplete degree d = {d} must be below n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed));
    Ok(order)
}

pub(crate) fn origin_scatter<S: Observations>(
    src: &S,
    base: &ScatterKind,
    opts: &SolverOptions,
) -> Result<ScatterMatrix> {
    let m = match base {
        ScatterKind::Cov => solver::second_moment(src, None),
        ScatterKind::Cov4 => {
            let second = solver::second_moment(src, None);
            solver::fourth_moment(src, None, &second)?
        }
        ScatterKind::M(kind) => {
            let weights = kind.resolve(src.dim())?;
            solver::m_solve(src, &weights, false, opts)?.scatter
        }
    };
    Ok(ScatterMatrix::from_symmetric_unchecked(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_matrix, stream};
    use crate::scatter::source::Columns;
    use crate::scatter::{sample_cov, WeightKind};
    use nalgebra::{DMatrix, DVector};

    fn sample(p: usize, n: usize, seed: u64) -> DataMatrix {
        let mut z = standard_normal_matrix(p, n, &mut stream(seed));
        // make it non-Gaussian and shifted so location matters
        z.iter_mut().for_each(|v| *v = v.powi(3) + 2.0);
        DataMatrix::new(z).unwrap()
    }

    /// Base scatter evaluated directly on an explicit list of differences.
    fn on_explicit(diffs: &[Vec<f64>], base: &ScatterKind) -> DMatrix<f64> {
        let p = diffs[0].len();
        let flat: Vec<f64> = diffs.iter().flatten().copied().collect();
        let cols = Columns::new(&flat, p);
        origin_scatter(&cols, base, &SolverOptions { tol: 1e-12, max_iter: 5000 }).unwrap().into_matrix()
    }

    fn bases() -> Vec<ScatterKind> {
        vec![
            ScatterKind::Cov,
            ScatterKind::Cov4,
            ScatterKind::M(WeightKind::cauchy()),
            ScatterKind::M(WeightKind::huber()),
        ]
    }

    #[test]
    fn complete_matches_materialized_differences() {
        let x = sample(3, 20, 1);
        let m = x.as_matrix();
        let mut diffs = Vec::new();
        for i in 0..20 {
            for j in i + 1..20 {
                diffs.push((m.column(i) - m.column(j)).iter().copied().collect::<Vec<_>>());
            }
        }
        assert_eq!(diffs.len(), 190);
        let opts = SolverOptions { tol: 1e-12, max_iter: 5000 };
        for base in bases() {
            let got = symmetrized_scatter(&x, &base, &opts).unwrap();
            let expected = on_explicit(&diffs, &base);
            assert!((got.as_matrix() - &expected).amax() < 1e-9 * expected.amax(), "{base:?}");
        }
    }

    #[test]
    fn symmetrized_cov_is_twice_the_unbiased_covariance() {
        let x = sample(3, 40, 2);
        let got = symmetrized_scatter(&x, &ScatterKind::Cov, &SolverOptions::default()).unwrap();
        let n = x.n() as f64;
        let expected = sample_cov(&x).into_matrix() * (2.0 * n / (n - 1.0));
        assert!((got.as_matrix() - &expected).amax() < 1e-12 * expected.amax());
    }

    #[test]
    fn incomplete_matches_explicit_lag_list() {
        let n = 12;
        let x = sample(2, n, 3);
        let seed = 17;
        let order = incomplete_order(n, 4, seed).unwrap();
        let m = x.as_matrix();
        let mut diffs = Vec::new();
        for i in 0..n {
            for lag in 1..=2 {
                let a = order[i];
                let b = order[(i + lag) % n];
                diffs.push((m.column(a) - m.column(b)).iter().copied().collect::<Vec<_>>());
            }
        }
        assert_eq!(diffs.len(), 24);
        let opts = SolverOptions { tol: 1e-12, max_iter: 5000 };
        for base in bases() {
            let got = incomplete_symmetrized_scatter(&x, &base, 4, seed, &opts).unwrap();
            let expected = on_explicit(&diffs, &base);
            assert!((got.as_matrix() - &expected).amax() < 1e-9 * expected.amax(), "{base:?}");
        }
    }

    #[test]
    fn incomplete_with_all_lags_equals_complete() {
        let n = 15;
        let x = sample(3, n, 4);
        let opts = SolverOptions { tol: 1e-12, max_iter: 5000 };
        for base in bases() {
            let full = symmetrized_scatter(&x, &base, &opts).unwrap();
            let inc = incomplete_symmetrized_scatter(&x, &base, n - 1, 99, &opts).unwrap();
            assert!((full.as_matrix() - inc.as_matrix()).amax() < 1e-9 * full.as_matrix().amax(), "{base:?}");
        }
    }

    #[test]
    fn shift_invariance() {
        let x = sample(3, 30, 5);
        let b = DVector::from_vec(vec![10.0, -4.0, 0.5]);
        let y = x.affine(&DMatrix::identity(3, 3), &b).unwrap();
        let opts = SolverOptions::default();
        for base in bases() {
            let sx = symmetrized_scatter(&x, &base, &opts).unwrap();
            let sy = symmetrized_scatter(&y, &base, &opts).unwrap();
            assert!((sx.as_matrix() - sy.as_matrix()).amax() < 1e-9 * sx.as_matrix().amax());
            let ix = incomplete_symmetrized_scatter(&x, &base, 6, 1, &opts).unwrap();
            let iy = incomplete_symmetrized_scatter(&y, &base, 6, 1, &opts).unwrap();
            assert!((ix.as_matrix() - iy.as_matrix()).amax() < 1e-9 * ix.as_matrix().amax());
        }
    }

    #[test]
    fn incomplete_degree_validation() {
        let x = sample(2, 10, 6);
        let opts = SolverOptions::default();
        assert!(incomplete_symmetrized_scatter(&x, &ScatterKind::Cov, 3, 0, &opts).is_err());
        assert!(incomplete_symmetrized_scatter(&x, &ScatterKind::Cov, 10, 0, &opts).is_err());
        assert!(incomplete_symmetrized_scatter(&x, &ScatterKind::Cov, 0, 0, &opts).is_err());
    }
}
