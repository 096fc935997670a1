use serde::{Deserialize, Serialize};

use super::solver::{self, SolverOptions};
use super::symmetrized::{incomplete_order, origin_scatter};
use super::source::{AllPairs, CyclicPairs, Observations};
use super::weights::WeightKind;
use super::{DataMatrix, LocationVector, ScatterMatrix};
use crate::error::{Error, Result};

/// Each observation appears in this many differences for incomplete
/// symmetrization unless configured otherwise.
pub const DEFAULT_INCOMPLETE_DEGREE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScatterKind {
    Cov,
    Cov4,
    /// M-estimator of scatter; estimated jointly with its own location
    /// unless symmetrized.
    M(WeightKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Symmetrization {
    None,
    Complete,
    /// Cyclic-lag differences, each observation in `d` of them. The column
    /// permutation is drawn from `seed`.
    Incomplete {
        d: usize,
        #[serde(with = "crate::rng::seed_serde")]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterSpec {
    pub kind: ScatterKind,
    pub symmetrization: Symmetrization,
}

impl ScatterSpec {
    pub fn plain(kind: ScatterKind) -> Self {
        Self { kind, symmetrization: Symmetrization::None }
    }

    pub fn validate(&self) -> Result<()> {
        if let ScatterKind::M(w) = self.kind {
            w.validate()?;
        }
        if let Symmetrization::Incomplete { d, .. } = self.symmetrization {
            if d < 2 || d % 2 != 0 {
                return Err(Error::InvalidParameter(format!("incomplete degree d must be even and >= 2, got {d}")));
            }
        }
        Ok(())
    }

    /// Evaluate on a sample. The location is returned when the scatter
    /// carries one of its own (moment scatters and unsymmetrized M-estimators).
    pub fn evaluate(&self, x: &DataMatrix, opts: &SolverOptions) -> Result<(Option<LocationVector>, ScatterMatrix)> {
        let data = x.as_matrix().as_slice();
        let p = x.p();
        match self.symmetrization {
            Symmetrization::None => {
                let cols = x.columns();
                match self.kind {
                    ScatterKind::Cov => {
                        let mean = solver::mean_of(&cols);
                        let cov = solver::second_moment(&cols, Some(&mean));
                        Ok((Some(LocationVector::from_vector(mean)), ScatterMatrix::from_symmetric_unchecked(cov)))
                    }
                    ScatterKind::Cov4 => {
                        let mean = solver::mean_of(&cols);
                        let cov = solver::second_moment(&cols, Some(&mean));
                        let c4 = solver::fourth_moment(&cols, Some(&mean), &cov)?;
                        Ok((Some(LocationVector::from_vector(mean)), ScatterMatrix::from_symmetric_unchecked(c4)))
                    }
                    ScatterKind::M(kind) => {
                        let weights = kind.resolve(p)?;
                        let fit = solver::m_solve(&cols, &weights, true, opts)?;
                        Ok((
                            fit.location.map(LocationVector::from_vector),
                            ScatterMatrix::from_symmetric_unchecked(fit.scatter),
                        ))
                    }
                }
            }
            Symmetrization::Complete => {
                if x.n() < 3 {
                    return Err(Error::InvalidInput("symmetrized scatter needs at least 3 observations".into()));
                }
                Ok((None, origin_scatter(&AllPairs::new(data, p), &self.kind, opts)?))
            }
            Symmetrization::Incomplete { d, seed } => {
                let order = incomplete_order(x.n(), d, seed)?;
                let pairs = CyclicPairs::new(data, p, order, d / 2);
                debug_assert_eq!(pairs.count(), x.n() * d / 2);
                Ok((None, origin_scatter(&pairs, &self.kind, opts)?))
            }
        }
    }
}

/// Which location the data are centred with before whitening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    /// Sample mean.
    #[default]
    Mean,
    /// The location estimated jointly with the first scatter; falls back to
    /// the mean when that scatter has none (symmetrized scatters).
    FirstScatter,
}

/// Declarative choice of (T, S₁, S₂).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPairSpec {
    pub location: LocationKind,
    pub s1: ScatterSpec,
    pub s2: ScatterSpec,
    pub solver: SolverOptions,
}

impl ScatterPairSpec {
    pub fn new(s1: ScatterSpec, s2: ScatterSpec) -> Self {
        Self {
            location: LocationKind::Mean,
            s1,
            s2,
            solver: SolverOptions::default(),
        }
    }

    /// Covariance and the fourth-moment scatter (FOBI).
    pub fn cov_cov4() -> Self {
        Self::new(ScatterSpec::plain(ScatterKind::Cov), ScatterSpec::plain(ScatterKind::Cov4))
    }

    /// Cauchy (t₁-likelihood) M-scatter and Huber M-scatter.
    pub fn cau_hub() -> Self {
        Self::new(
            ScatterSpec::plain(ScatterKind::M(WeightKind::cauchy())),
            ScatterSpec::plain(ScatterKind::M(WeightKind::huber())),
        )
    }

    /// Symmetrized Cauchy and Huber M-scatters over all pairwise differences.
    pub fn scau_shub() -> Self {
        let sym = |kind| ScatterSpec { kind, symmetrization: Symmetrization::Complete };
        Self::new(sym(ScatterKind::M(WeightKind::cauchy())), sym(ScatterKind::M(WeightKind::huber())))
    }

    /// Symmetrized Cauchy and Huber M-scatters over the incomplete
    /// difference set with degree `d`.
    pub fn scaui_shubi(d: usize, seed: u64) -> Self {
        let sym = |kind| ScatterSpec {
            kind,
            symmetrization: Symmetrization::Incomplete { d, seed },
        };
        Self::new(sym(ScatterKind::M(WeightKind::cauchy())), sym(ScatterKind::M(WeightKind::huber())))
    }

    pub fn validate(&self) -> Result<()> {
        self.s1.validate()?;
        self.s2.validate()?;
        if self.s1 == self.s2 {
            return Err(Error::InvalidParameter("the two scatter functionals must differ".into()));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::InvalidParameter("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    /// Location to centre with, given the location returned alongside S₁.
    pub(crate) fn centre(&self, x: &DataMatrix, s1_location: Option<LocationVector>) -> LocationVector {
        match (self.location, s1_location) {
            (LocationKind::FirstScatter, Some(t)) => t,
            (LocationKind::Mean, Some(t)) if matches!(self.s1.kind, ScatterKind::Cov | ScatterKind::Cov4)
                && self.s1.symmetrization == Symmetrization::None =>
            {
                t
            }
            _ => super::mean_location(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for spec in [
            ScatterPairSpec::cov_cov4(),
            ScatterPairSpec::cau_hub(),
            ScatterPairSpec::scau_shub(),
            ScatterPairSpec::scaui_shubi(100, 0),
        ] {
            spec.validate().unwrap();
        }
    }

    #[test]
    fn identical_scatters_rejected() {
        let s = ScatterSpec::plain(ScatterKind::Cov);
        assert!(ScatterPairSpec::new(s, s).validate().is_err());
    }

    #[test]
    fn odd_incomplete_degree_rejected() {
        assert!(ScatterPairSpec::scaui_shubi(5, 0).validate().is_err());
    }
}
