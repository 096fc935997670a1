//! Weight functions for M-functionals of location and scatter.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Tail form of Huber's scatter weight for r > c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HuberTail {
    /// c²/(r²σ²): continuous at r = c.
    #[default]
    Standard,
    /// c/(r²σ²); discontinuous at r = c.
    Discontinuous,
}

/// Weight family before it is resolved for a particular dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightKind {
    Identity,
    Huber { q: f64, tail: HuberTail },
    TLikelihood { nu: f64 },
}

impl WeightKind {
    pub const DEFAULT_HUBER_Q: f64 = 0.9;
    pub const DEFAULT_T_NU: f64 = 1.0;

    pub fn huber() -> Self {
        WeightKind::Huber {
            q: Self::DEFAULT_HUBER_Q,
            tail: HuberTail::Standard,
        }
    }

    pub fn cauchy() -> Self {
        WeightKind::TLikelihood { nu: Self::DEFAULT_T_NU }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightKind::Identity => Ok(()),
            WeightKind::Huber { q, .. } => {
                if q > 0.0 && q < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("Huber q must lie in (0, 1), got {q}")))
                }
            }
            WeightKind::TLikelihood { nu } => {
                if nu >= 1.0 && nu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "t-likelihood degrees of freedom must be >= 1, got {nu}"
                    )))
                }
            }
        }
    }

    /// Resolve dimension-dependent constants.
    pub fn resolve(&self, p: usize) -> Result<WeightSpec> {
        self.validate()?;
        match *self {
            WeightKind::Identity => Ok(WeightSpec::Identity),
            WeightKind::Huber { q, tail } => huber_weight_constants_with_tail(q, p, tail),
            WeightKind::TLikelihood { nu } => Ok(WeightSpec::TLikelihood { nu, p }),
        }
    }
}

/// Fully resolved weights w₁ (location) and w₂ (scatter) for dimension p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Identity,
    Huber {
        /// Cutoff on the Mahalanobis distance; c² is the q-quantile of χ²_p.
        c: f64,
        /// Consistency scaling, E(Q·w₂(√Q)) = p for Q ~ χ²_p.
        sigma2: f64,
        q: f64,
        p: usize,
        tail: HuberTail,
    },
    TLikelihood {
        nu: f64,
        p: usize,
    },
}

impl WeightSpec {
    pub fn dim(&self) -> Option<usize> {
        match *self {
            WeightSpec::Identity => None,
            WeightSpec::Huber { p, .. } | WeightSpec::TLikelihood { p, .. } => Some(p),
        }
    }

    /// Location weight as a function of the squared distance.
    #[inline]
    pub fn w1(&self, r2: f64) -> f64 {
        match *self {
            WeightSpec::Identity => 1.0,
            WeightSpec::Huber { c, .. } => {
                if r2 <= c * c {
                    1.0
                } else {
                    c / r2.sqrt()
                }
            }
            WeightSpec::TLikelihood { nu, p } => (p as f64 + nu) / (r2 + nu),
        }
    }

    /// Scatter weight as a function of the squared distance.
    #[inline]
    pub fn w2(&self, r2: f64) -> f64 {
        match *self {
            WeightSpec::Identity => 1.0,
            WeightSpec::Huber { c, sigma2, tail, .. } => {
                if r2 <= c * c {
                    1.0 / sigma2
                } else {
                    match tail {
                        HuberTail::Standard => c * c / (r2 * sigma2),
                        HuberTail::Discontinuous => c / (r2 * sigma2),
                    }
                }
            }
            WeightSpec::TLikelihood { nu, p } => (p as f64 + nu) / (r2 + nu),
        }
    }

    /// Whether the scatter update may be normalized by Σw₂ instead of the
    /// sample size. For t-likelihood weights the mean weight is exactly one
    /// at every fixed point, so both updates share fixed points and the
    /// normalized one converges much faster.
    pub(crate) fn normalized_update(&self) -> bool {
        matches!(self, WeightSpec::TLikelihood { .. })
    }
}

/// Huber constants with the continuous (c²) tail.
pub fn huber_weight_constants(q: f64, p: usize) -> Result<WeightSpec> {
    huber_weight_constants_with_tail(q, p, HuberTail::Standard)
}

pub fn huber_weight_constants_with_tail(q: f64, p: usize, tail: HuberTail) -> Result<WeightSpec> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("Huber q must lie in (0, 1), got {q}")));
    }
    if p == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let chi_p = ChiSquared::new(p as f64).expect("positive degrees of freedom");
    let chi_p2 = ChiSquared::new(p as f64 + 2.0).expect("positive degrees of freedom");
    let c2 = chi_p.inverse_cdf(q);
    let c = c2.sqrt();
    // E(Q; Q <= c²) = p·F_{p+2}(c²); the tail contributes c²(1 - q) (or c(1 - q)).
    let truncated = chi_p2.cdf(c2);
    let tail_mass = match tail {
        HuberTail::Standard => c2 * (1.0 - q),
        HuberTail::Discontinuous => c * (1.0 - q),
    };
    let sigma2 = truncated + tail_mass / p as f64;
    Ok(WeightSpec::Huber { c, sigma2, q, p, tail })
}
