//! Two-scatter unmixing (ICS / FOBI).
//!
//! The data are whitened with the symmetric inverse square root of S₁,
//! S₂ is evaluated on the whitened sample and eigendecomposed as U·D·Uᵀ,
//! and the unmixing matrix is W = Uᵀ·S₁^{-1/2}. The eigenvalues D are the
//! generalized kurtoses of the latent components with respect to S₁–S₂.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scatter::{DataMatrix, LocationVector, ScatterMatrix, ScatterPairSpec};

/// Which latent model the signal part is assumed to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelAssumption {
    /// Signal components may be dependent; only the subspace is identifiable.
    Ngca,
    /// Signal components are mutually independent.
    Ngica,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnmixingResult {
    /// Unmixing matrix, one latent component per row, rows in `ordering`.
    pub w: DMatrix<f64>,
    /// Generalized kurtoses, aligned with the rows of `w`.
    pub d: DVector<f64>,
    pub location: LocationVector,
    /// Positions in the descending eigenvalue order that each row came from.
    pub ordering: Vec<usize>,
    /// Row index where the noise block starts, once a partition is chosen.
    pub noise_index: Option<usize>,
    /// S₁ evaluated on the data.
    pub s1: ScatterMatrix,
    /// S₂ evaluated on the whitened data.
    pub s2_whitened: ScatterMatrix,
    /// S₁^{-1/2} as used for whitening.
    pub s1_inv_sqrt: DMatrix<f64>,
}

impl UnmixingResult {
    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    /// S₂ of the whitened data carried back to the original coordinates,
    /// S₁^{1/2}·S₂(x^st)·S₁^{1/2}, so that W·(this)·Wᵀ = diag(D).
    pub fn s2_transported(&self) -> DMatrix<f64> {
        let root = self
            .s1_inv_sqrt
            .clone()
            .try_inverse()
            .expect("inverse square root of a positive definite matrix is invertible");
        &root * self.s2_whitened.as_matrix() * &root
    }

    /// Reorder the latent components so the noise block selected by
    /// [`order_for_partition`] comes last.
    pub fn partitioned(&self, k: usize) -> Result<UnmixingResult> {
        let part = order_for_partition(self.d.as_slice(), k)?;
        Ok(self.reordered(&part, k))
    }

    /// Reorder with an explicit partition of the current rows.
    pub fn reordered(&self, part: &Partition, k: usize) -> UnmixingResult {
        let p = self.p();
        let mut w = DMatrix::zeros(p, p);
        for (dst, &src) in part.ordering.iter().enumerate() {
            w.set_row(dst, &self.w.row(src));
        }
        let d = DVector::from_iterator(p, part.ordering.iter().map(|&i| self.d[i]));
        let ordering = part.ordering.iter().map(|&i| self.ordering[i]).collect();
        UnmixingResult {
            w,
            d,
            location: self.location.clone(),
            ordering,
            noise_index: Some(k),
            s1: self.s1.clone(),
            s2_whitened: self.s2_whitened.clone(),
            s1_inv_sqrt: self.s1_inv_sqrt.clone(),
        }
    }
}

/// Standardize X with respect to (T, S₁). Returns S₁^{-1/2}(X − T·1ᵀ) and
/// the symmetric inverse square root used.
pub fn whiten(x: &DataMatrix, t: &LocationVector, s1: &ScatterMatrix) -> Result<(DataMatrix, ScatterMatrix)> {
    if t.len() != x.p() {
        return Err(Error::DimensionMismatch { expected: x.p(), actual: t.len() });
    }
    if s1.dim() != x.p() {
        return Err(Error::DimensionMismatch { expected: x.p(), actual: s1.dim() });
    }
    let root = linalg::inverse_sqrt(s1.as_matrix())?;
    let centred = centre(x.as_matrix(), t.as_vector());
    let z = DataMatrix::new(&root * centred)?;
    Ok((z, ScatterMatrix::from_symmetric_unchecked(root)))
}

fn centre(x: &DMatrix<f64>, t: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        col -= t;
    }
    c
}

/// Fit W and D for the given scatter pair. Eigenvalues come out in
/// descending order; use [`UnmixingResult::partitioned`] to move a noise
/// block to the end.
pub fn two_scatter_unmixing(x: &DataMatrix, spec: &ScatterPairSpec) -> Result<UnmixingResult> {
    spec.validate()?;
    let (s1_location, s1) = spec.s1.evaluate(x, &spec.solver)?;
    let location = spec.centre(x, s1_location);
    let (standardized, root) = whiten(x, &location, &s1)?;
    let s1_inv_sqrt = root.into_matrix();
    let (_, s2) = spec.s2.evaluate(&standardized, &spec.solver)?;
    let (d, u) = linalg::sorted_symmetric_eigen(s2.as_matrix());
    let mut w = u.transpose() * &s1_inv_sqrt;
    apply_sign_convention(&mut w);
    let p = x.p();
    Ok(UnmixingResult {
        w,
        d,
        location,
        ordering: (0..p).collect(),
        noise_index: None,
        s1,
        s2_whitened: s2,
        s1_inv_sqrt,
    })
}

/// Make the largest-magnitude entry of every row positive.
fn apply_sign_convention(w: &mut DMatrix<f64>) {
    for mut row in w.row_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in row.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            row.neg_mut();
        }
    }
}

/// Signal/noise split of a vector of eigenvalues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    /// Permutation of 0..p: the k signal entries (decreasing), then the
    /// p − k noise entries (decreasing).
    pub ordering: Vec<usize>,
    /// Indices of the noise entries, in decreasing order of value.
    pub noise: Vec<usize>,
}

impl Partition {
    fn from_noise(d: &[f64], mut noise: Vec<usize>) -> Self {
        let desc = |a: &usize, b: &usize| d[*b].total_cmp(&d[*a]).then(a.cmp(b));
        noise.sort_by(desc);
        let mut signal: Vec<usize> = (0..d.len()).filter(|i| !noise.contains(i)).collect();
        signal.sort_by(desc);
        let ordering = signal.into_iter().chain(noise.iter().copied()).collect();
        Self { ordering, noise }
    }
}

/// Sum of squared deviations from the mean, values taken in the given order.
/// Deviations are taken about the first value so equal entries give exactly 0.
pub(crate) fn sum_sq_dev(values: &[f64]) -> f64 {
    let Some(&v0) = values.first() else { return 0.0 };
    let shift = values.iter().map(|v| v - v0).sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - v0 - shift) * (v - v0 - shift)).sum()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Choose the (p − k)-subset of `d` with the smallest variance as the noise
/// block. The optimum is always a run of consecutive values in sorted
/// order, so a sliding window suffices. Exact ties go to the subset whose
/// mean is closest to the median of `d`, then to the earlier window.
pub fn order_for_partition(d: &[f64], k: usize) -> Result<Partition> {
    let p = d.len();
    if p < 2 || k > p - 2 {
        return Err(Error::InvalidParameter(format!(
            "noise block needs at least two entries: k = {k}, p = {p}"
        )));
    }
    let m = p - k;
    let mut sorted: Vec<usize> = (0..p).collect();
    sorted.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let values: Vec<f64> = sorted.iter().map(|&i| d[i]).collect();
    let med = median(d);

    let mut best: Option<(usize, f64, f64)> = None;
    for start in 0..=p - m {
        let window = &values[start..start + m];
        let var = sum_sq_dev(window);
        let dist = (window.iter().sum::<f64>() / m as f64 - med).abs();
        let better = match best {
            None => true,
            Some((_, bv, bd)) => var < bv || (var == bv && dist < bd),
        };
        if better {
            best = Some((start, var, dist));
        }
    }
    let (start, ..) = best.expect("at least one window");
    Ok(Partition::from_noise(d, sorted[start..start + m].to_vec()))
}

/// Choose the p − k entries closest to `target` by squared distance as the
/// noise block; ties prefer the smaller value.
pub fn order_by_closeness(d: &[f64], k: usize, target: f64) -> Result<Partition> {
    let p = d.len();
    if k >= p {
        return Err(Error::InvalidParameter(format!("k = {k} must be below p = {p}")));
    }
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| {
        let da = (d[a] - target).powi(2);
        let db = (d[b] - target).powi(2);
        da.total_cmp(&db).then(d[a].total_cmp(&d[b])).then(a.cmp(&b))
    });
    Ok(Partition::from_noise(d, idx[..p - k].to_vec()))
}

/// Latent sample Z = W(X − T̂·1ᵀ), rows in the result's ordering.
pub fn latent_components(x: &DataMatrix, result: &UnmixingResult) -> Result<DMatrix<f64>> {
    if x.p() != result.p() {
        return Err(Error::DimensionMismatch { expected: result.p(), actual: x.p() });
    }
    Ok(&result.w * centre(x.as_matrix(), result.location.as_vector()))
}
