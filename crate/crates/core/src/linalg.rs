//! Small dense helpers shared by the scatter and unmixing code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues below this multiple of the largest count as zero when a
/// matrix must be inverted.
pub const SINGULAR_RATIO: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned matrix follow the same order).
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let p = m.nrows();
    let mut idx: Vec<usize> = (0..p).collect();
    // stable sort keeps the solver's order for exact ties
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(p, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in idx.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Condition number of a symmetric PSD matrix (infinite when singular).
pub fn condition_number(eigenvalues: &DVector<f64>) -> f64 {
    let max = eigenvalues.max();
    let min = eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Unique symmetric positive-definite inverse square root.
pub fn inverse_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_symmetric_eigen(m);
    let max = values.max();
    let min = values.min();
    if !(max > 0.0) || min <= SINGULAR_RATIO * max {
        return Err(Error::WhiteningImpossible {
            condition: condition_number(&values),
        });
    }
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] / values[j].sqrt()
    });
    Ok(symmetrize(&(scaled * vectors.transpose())))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower Cholesky factor packed row-major, for repeated Mahalanobis
/// distances in tight loops.
#[derive(Debug, Clone)]
pub struct PackedCholesky {
    dim: usize,
    // row i holds L[i][0..=i]
    lower: Vec<f64>,
}

impl PackedCholesky {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let chol = m.clone().cholesky()?;
        let l = chol.l();
        let dim = m.nrows();
        let mut lower = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in 0..=i {
                lower.push(l[(i, j)]);
            }
        }
        // reject factors whose pivots collapse relative to the largest one
        let diag: Vec<f64> = (0..dim).map(|i| l[(i, i)]).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        if diag.iter().any(|&d| !(d > max * 1e-8)) {
            return None;
        }
        Some(Self { dim, lower })
    }

    /// Squared Mahalanobis norm yᵀ M⁻¹ y, using `work` as scratch.
    #[inline]
    pub fn mahalanobis_sq(&self, y: &[f64], work: &mut [f64]) -> f64 {
        let mut acc = 0.0;
        let mut offset = 0;
        for i in 0..self.dim {
            let row = &self.lower[offset..offset + i + 1];
            let mut s = y[i];
            for j in 0..i {
                s -= row[j] * work[j];
            }
            let z = s / row[i];
            work[i] = z;
            acc += z * z;
            offset += i + 1;
        }
        acc
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Expand a packed upper triangle (row-major, i ≤ j) into a full symmetric matrix.
pub fn unpack_symmetric(dim: usize, packed: &[f64], scale: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            let v = packed[k] * scale;
            m[(i, j)] = v;
            m[(j, i)] = v;
            k += 1;
        }
    }
    m
}

/// Add w·y·yᵀ into a packed upper triangle.
#[inline]
pub fn accumulate_outer(packed: &mut [f64], y: &[f64], w: f64) {
    let dim = y.len();
    let mut k = 0;
    for i in 0..dim {
        let wi = w * y[i];
        for j in i..dim {
            packed[k] += wi * y[j];
            k += 1;
        }
    }
}

/// Largest principal angle (radians) between the column spans of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let m = qa.transpose() * qb;
    let sv = m.singular_values();
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smallest.acos()
}
