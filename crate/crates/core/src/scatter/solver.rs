//! Moment estimators and the M-estimation fixed point, generic over the
//! observation source. A location of `None` pins the centre at the origin,
//! which is how symmetrized scatters are evaluated.

use nalgebra::{DMatrix, DVector};

use super::source::Observations;
use super::weights::WeightSpec;
use crate::error::{Error, Result};
use crate::linalg::{self, accumulate_outer, unpack_symmetric, PackedCholesky};

/// Convergence controls for the fixed-point solver.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500 }
    }
}

pub(crate) fn mean_of<S: Observations>(src: &S) -> DVector<f64> {
    let p = src.dim();
    let sum = src.reduce(
        || vec![0.0; p],
        |acc, x| acc.iter_mut().zip(x).for_each(|(a, v)| *a += v),
        |acc, part| acc.iter_mut().zip(part).for_each(|(a, v)| *a += v),
    );
    DVector::from_vec(sum) / src.count() as f64
}

fn sub_into(buf: &mut [f64], x: &[f64], center: Option<&[f64]>) {
    match center {
        Some(c) => buf.iter_mut().zip(x).zip(c).for_each(|((b, v), m)| *b = v - m),
        None => buf.copy_from_slice(x),
    }
}

/// (1/m) Σ (x − c)(x − c)ᵀ.
pub(crate) fn second_moment<S: Observations>(src: &S, center: Option<&DVector<f64>>) -> DMatrix<f64> {
    let p = src.dim();
    let c = center.map(|c| c.as_slice());
    let packed = src.reduce(
        || (vec![0.0; p * (p + 1) / 2], vec![0.0; p]),
        |(acc, buf), x| {
            sub_into(buf, x, c);
            accumulate_outer(acc, buf, 1.0);
        },
        |(acc, _), (part, _)| acc.iter_mut().zip(part).for_each(|(a, v)| *a += v),
    );
    unpack_symmetric(p, &packed.0, 1.0 / src.count() as f64)
}

/// Fourth-moment scatter (1/(p+2)) E(r² (x − c)(x − c)ᵀ), r measured
/// against the second moment about the same centre.
pub(crate) fn fourth_moment<S: Observations>(
    src: &S,
    center: Option<&DVector<f64>>,
    cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = src.dim();
    let chol = cholesky_or_whitening_error(cov)?;
    let c = center.map(|c| c.as_slice());
    let packed = src.reduce(
        || (vec![0.0; p * (p + 1) / 2], vec![0.0; p], vec![0.0; p]),
        |(acc, buf, work), x| {
            sub_into(buf, x, c);
            let r2 = chol.mahalanobis_sq(buf, work);
            accumulate_outer(acc, buf, r2);
        },
        |(acc, ..), (part, ..)| acc.iter_mut().zip(part).for_each(|(a, v)| *a += v),
    );
    Ok(unpack_symmetric(p, &packed.0, 1.0 / (src.count() as f64 * (p as f64 + 2.0))))
}

pub(crate) fn cholesky_or_whitening_error(m: &DMatrix<f64>) -> Result<PackedCholesky> {
    PackedCholesky::new(m).ok_or_else(|| {
        let (values, _) = linalg::sorted_symmetric_eigen(m);
        Error::WhiteningImpossible {
            condition: linalg::condition_number(&values),
        }
    })
}

struct StepSums {
    sw1: f64,
    sw1y: Vec<f64>,
    sw2: f64,
    sw2y: Vec<f64>,
    sw2yy: Vec<f64>,
    buf: Vec<f64>,
    work: Vec<f64>,
}

impl StepSums {
    fn new(p: usize) -> Self {
        Self {
            sw1: 0.0,
            sw1y: vec![0.0; p],
            sw2: 0.0,
            sw2y: vec![0.0; p],
            sw2yy: vec![0.0; p * (p + 1) / 2],
            buf: vec![0.0; p],
            work: vec![0.0; p],
        }
    }

    fn merge(&mut self, other: StepSums) {
        self.sw1 += other.sw1;
        self.sw2 += other.sw2;
        for (a, b) in self.sw1y.iter_mut().zip(other.sw1y) {
            *a += b;
        }
        for (a, b) in self.sw2y.iter_mut().zip(other.sw2y) {
            *a += b;
        }
        for (a, b) in self.sw2yy.iter_mut().zip(other.sw2yy) {
            *a += b;
        }
    }
}

/// Outcome of a converged M-estimation.
pub(crate) struct MFit {
    pub location: Option<DVector<f64>>,
    pub scatter: DMatrix<f64>,
}

/// Fixed-point iteration for T = E(w₁x)/E(w₁), S = E(w₂(x − T)(x − T)ᵀ),
/// started from the mean and covariance (or the origin and the second
/// moment when the location is pinned).
pub(crate) fn m_solve<S: Observations>(
    src: &S,
    weights: &WeightSpec,
    estimate_location: bool,
    opts: &SolverOptions,
) -> Result<MFit> {
    let p = src.dim();
    let m = src.count() as f64;
    let mut location = if estimate_location { Some(mean_of(src)) } else { None };
    let mut scatter = second_moment(src, location.as_ref());
    if PackedCholesky::new(&scatter).is_none() {
        return Err(cholesky_or_whitening_error(&scatter).err().unwrap_or(Error::DegenerateScatter {
            iteration: 0,
        }));
    }
    let mut history: Vec<f64> = Vec::with_capacity(opts.max_iter);

    for iteration in 1..=opts.max_iter {
        let chol = PackedCholesky::new(&scatter).ok_or(Error::DegenerateScatter { iteration })?;
        let center = location.as_ref().map(|t| t.as_slice());
        let sums = src.reduce(
            || StepSums::new(p),
            |s, x| {
                sub_into(&mut s.buf, x, center);
                let r2 = chol.mahalanobis_sq(&s.buf, &mut s.work);
                let w1 = weights.w1(r2);
                let w2 = weights.w2(r2);
                s.sw1 += w1;
                s.sw2 += w2;
                for i in 0..p {
                    s.sw1y[i] += w1 * s.buf[i];
                    s.sw2y[i] += w2 * s.buf[i];
                }
                accumulate_outer(&mut s.sw2yy, &s.buf, w2);
            },
            StepSums::merge,
        );
        if !(sums.sw2 > 0.0) || !sums.sw2.is_finite() {
            return Err(Error::DegenerateScatter { iteration });
        }

        // shift of the centre, and the scatter re-centred at the new location
        let delta = if estimate_location {
            DVector::from_iterator(p, sums.sw1y.iter().map(|v| v / sums.sw1))
        } else {
            DVector::zeros(p)
        };
        let sw2y = DVector::from_vec(sums.sw2y);
        let raw = unpack_symmetric(p, &sums.sw2yy, 1.0);
        let correction = &delta * sw2y.transpose();
        let centred = raw - &correction - correction.transpose() + &delta * delta.transpose() * sums.sw2;
        let denom = if weights.normalized_update() { sums.sw2 } else { m };
        let next = linalg::symmetrize(&(centred / denom));
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateScatter { iteration });
        }

        let scale = (next.trace() / p as f64).sqrt();
        let scatter_change = (&next - &scatter).norm() / next.norm();
        let location_change = if estimate_location { delta.norm() / scale } else { 0.0 };
        let residual = scatter_change.max(location_change);
        history.push(residual);

        if let Some(t) = location.as_mut() {
            *t += &delta;
        }
        scatter = next;

        if residual < opts.tol {
            log_residual_trend(&history);
            log::trace!("M-solver converged in {iteration} iterations");
            return Ok(MFit { location, scatter });
        }
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
        last: Box::new((
            super::LocationVector::from_vector(location.unwrap_or_else(|| DVector::zeros(p))),
            super::ScatterMatrix::from_symmetric_unchecked(scatter),
        )),
    })
}

fn log_residual_trend(history: &[f64]) {
    let tail = &history[history.len().saturating_sub(5)..];
    if tail.windows(2).any(|w| w[1] > w[0]) {
        log::debug!("M-solver residual not monotone over final iterations: {tail:?}");
    }
}
