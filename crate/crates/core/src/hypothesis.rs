//! Tests of H₀ₖ: "there are exactly k non-Gaussian components".
//!
//! Two families are provided: the FOBI asymptotic tests, which use the
//! known noise eigenvalue 1 of the Cov–Cov4 pair, and the bootstrap test,
//! which works for any scatter pair by looking at the spread of the p − k
//! eigenvalues that lie closest together.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared as ChiSquaredDist, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, StreamRng};
use crate::scatter::{DataMatrix, ScatterPairSpec};
use crate::unmixing::{
    latent_components, order_by_closeness, order_for_partition, sum_sq_dev, two_scatter_unmixing, ModelAssumption,
    UnmixingResult,
};

/// Draws used to evaluate the weighted χ² limit law.
pub const LIMIT_LAW_DRAWS: usize = 100_000;
/// Replicate failures tolerated before a bootstrap test gives up.
pub const MAX_REPLICATE_FAILURES: usize = 10;
/// Lower bound applied to σ̂₁ so the limit law stays non-degenerate.
pub const SIGMA1_FLOOR: f64 = 1e-6;
const NOISE_EIGEN_FLOOR: f64 = 1e-10;
const LIMIT_LAW_TAG: u64 = 0x4c49_4d49_545f_4c41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStrategy {
    /// Gaussian draws with the empirical covariance of the noise estimate.
    #[default]
    Parametric,
    /// Each noise vector multiplied by its own Haar-random rotation.
    Rotation,
}

/// Statistic refitted on every bootstrap sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// n times the sum of squared deviations of the tightest p − k eigenvalues.
    #[default]
    Variance,
    /// n Σ (d − 1)² over the p − k eigenvalues closest to one. Only
    /// meaningful for pairs whose Gaussian eigenvalue is one (Cov–Cov4).
    FobiTk,
}

/// How the two parts of T_k are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TkSplit {
    /// n Σ(d − d̄)² and n(p − k)(d̄ − 1)², which add up to T_k.
    #[default]
    Decomposition,
    /// n(Σd² − (Σd)²) and n(Σ(d − 1))². Can be negative; kept for comparison.
    Unnormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Bootstrap,
    AsymptoticTk,
    AsymptoticTk1,
    AsymptoticTk2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub k: usize,
    /// Bootstrap statistics in replicate order; empty for asymptotic tests.
    pub replicates: Vec<f64>,
    pub sigma1_hat: Option<f64>,
    #[serde(with = "crate::rng::seed_serde")]
    pub seed: u64,
    /// Replicate fits that failed and were redrawn.
    pub failures: usize,
}

impl TestOutcome {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub model: ModelAssumption,
    pub noise_strategy: NoiseStrategy,
    /// Number of bootstrap samples M.
    pub replicates: usize,
    #[serde(with = "crate::rng::seed_serde")]
    pub seed: u64,
    pub scatter: ScatterPairSpec,
    pub statistic: StatisticKind,
}

impl BootstrapConfig {
    pub const DEFAULT_REPLICATES: usize = 200;

    pub fn new(scatter: ScatterPairSpec, model: ModelAssumption) -> Self {
        Self {
            model,
            noise_strategy: NoiseStrategy::Parametric,
            replicates: Self::DEFAULT_REPLICATES,
            seed: 0,
            scatter,
            statistic: StatisticKind::Variance,
        }
    }

    /// Bootstrap version of the FOBI test: Cov–Cov4 with the T_k statistic.
    pub fn fobi(model: ModelAssumption) -> Self {
        Self {
            statistic: StatisticKind::FobiTk,
            ..Self::new(ScatterPairSpec::cov_cov4(), model)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replicates(mut self, m: usize) -> Self {
        self.replicates = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("bootstrap needs at least one replicate".into()));
        }
        self.scatter.validate()
    }

    /// Largest k the configured statistic can test in dimension p.
    pub fn max_testable_k(&self, p: usize) -> usize {
        match self.statistic {
            StatisticKind::Variance => p.saturating_sub(2),
            StatisticKind::FobiTk => p.saturating_sub(1),
        }
    }
}

fn check_k(p: usize, k: usize, max: usize) -> Result<()> {
    if p < 2 || k > max {
        return Err(Error::InvalidParameter(format!("k = {k} is not testable in dimension p = {p}")));
    }
    Ok(())
}

/// T_k = n Σ (d − 1)² over the p − k eigenvalues closest to one.
pub fn statistic_tk_fobi(d: &[f64], k: usize, n: usize) -> Result<f64> {
    check_k(d.len(), k, d.len().saturating_sub(1))?;
    let part = order_by_closeness(d, k, 1.0)?;
    Ok(n as f64 * part.noise.iter().map(|&i| (d[i] - 1.0).powi(2)).sum::<f64>())
}

/// t̂_k = n Σ (d − d̄)² over the minimum-variance (p − k)-subset.
pub fn statistic_variance_tk(d: &[f64], k: usize, n: usize) -> Result<f64> {
    let part = order_for_partition(d, k)?;
    let vals: Vec<f64> = sorted_values(d, &part.noise);
    Ok(n as f64 * sum_sq_dev(&vals))
}

fn sorted_values(d: &[f64], idx: &[usize]) -> Vec<f64> {
    let mut v: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// The two parts of T_k over the p − k eigenvalues closest to one.
pub fn statistics_tk1_tk2(d: &[f64], k: usize, n: usize, split: TkSplit) -> Result<(f64, f64)> {
    check_k(d.len(), k, d.len().saturating_sub(1))?;
    let part = order_by_closeness(d, k, 1.0)?;
    let vals = sorted_values(d, &part.noise);
    let n = n as f64;
    let m = vals.len() as f64;
    let sum: f64 = vals.iter().sum();
    Ok(match split {
        TkSplit::Decomposition => {
            let mean = sum / m;
            (n * sum_sq_dev(&vals), n * m * (mean - 1.0).powi(2))
        }
        TkSplit::Unnormalized => {
            let sq: f64 = vals.iter().map(|v| v * v).sum();
            (n * (sq - sum * sum), n * (sum - m).powi(2))
        }
    })
}

/// Fourth-moment constant of the limit law, estimated from a standardized
/// latent sample (one component per row).
pub fn sigma1_hat(z: &DMatrix<f64>, model: ModelAssumption) -> f64 {
    let p = z.nrows() as f64;
    let n = z.ncols() as f64;
    let est = match model {
        ModelAssumption::Ngica => z.iter().map(|v| v.powi(4)).sum::<f64>() / n - p + 8.0,
        ModelAssumption::Ngca => {
            z.column_iter().map(|c| c.norm_squared().powi(2)).sum::<f64>() / n - p * p + 8.0
        }
    };
    est.max(SIGMA1_FLOOR)
}

/// Degrees of freedom of the two χ² parts for p − k noise components.
pub fn limit_law_dof(p: usize, k: usize) -> Result<(usize, usize)> {
    let m = p.checked_sub(k).unwrap_or(0);
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "the limit law needs at least two noise components: p = {p}, k = {k}"
        )));
    }
    Ok(((m - 1) * (m + 2) / 2, 1))
}

/// P(C ≥ observed) for C = 2σ₁Q₁ + (2σ₁ + 4(p − k))Q₂, estimated from
/// seeded draws of (Q₁, Q₂).
pub fn limit_law_p_value(observed: f64, sigma1: f64, p: usize, k: usize, seed: u64) -> Result<f64> {
    let (df1, df2) = limit_law_dof(p, k)?;
    let q1 = ChiSquaredDist::new(df1 as f64).expect("positive dof");
    let q2 = ChiSquaredDist::new(df2 as f64).expect("positive dof");
    let a = 2.0 * sigma1;
    let b = 2.0 * sigma1 + 4.0 * (p - k) as f64;
    let mut rng = rng::stream(rng::derive_seed(seed, LIMIT_LAW_TAG));
    let mut exceed = 0usize;
    for _ in 0..LIMIT_LAW_DRAWS {
        let c = a * q1.sample(&mut rng) + b * q2.sample(&mut rng);
        if c >= observed {
            exceed += 1;
        }
    }
    Ok((exceed + 1) as f64 / (LIMIT_LAW_DRAWS + 1) as f64)
}

struct FobiFit {
    d: Vec<f64>,
    sigma1: f64,
    n: usize,
    p: usize,
}

fn fobi_fit(x: &DataMatrix, model: ModelAssumption) -> Result<FobiFit> {
    let fit = two_scatter_unmixing(x, &ScatterPairSpec::cov_cov4())?;
    let z = latent_components(x, &fit)?;
    Ok(FobiFit {
        d: fit.d.as_slice().to_vec(),
        sigma1: sigma1_hat(&z, model),
        n: x.n(),
        p: x.p(),
    })
}

/// Asymptotic FOBI test: (p + 2)² T_k against its weighted χ² limit.
pub fn asymptotic_test_fobi(x: &DataMatrix, k: usize, model: ModelAssumption, seed: u64) -> Result<TestOutcome> {
    limit_law_dof(x.p(), k)?;
    let fit = fobi_fit(x, model)?;
    let scale = (fit.p as f64 + 2.0).powi(2);
    let statistic = scale * statistic_tk_fobi(&fit.d, k, fit.n)?;
    let p_value = limit_law_p_value(statistic, fit.sigma1, fit.p, k, seed)?;
    Ok(TestOutcome {
        statistic,
        p_value,
        method: TestMethod::AsymptoticTk,
        k,
        replicates: Vec::new(),
        sigma1_hat: Some(fit.sigma1),
        seed,
        failures: 0,
    })
}

/// The two parts of T_k, each divided by its own weight in the limit law:
/// (p + 2)²T_{k,1}/(2σ̂₁) and (p + 2)²T_{k,2}/(2σ̂₁ + 4(p − k)).
pub fn standardized_tk_parts(d: &[f64], k: usize, n: usize, sigma1: f64, split: TkSplit) -> Result<(f64, f64)> {
    let p = d.len();
    let (t1, t2) = statistics_tk1_tk2(d, k, n, split)?;
    let scale = (p as f64 + 2.0).powi(2);
    Ok((scale * t1 / (2.0 * sigma1), scale * t2 / (2.0 * sigma1 + 4.0 * (p - k) as f64)))
}

/// χ² tests on the two parts of T_k.
pub fn chi2_tests_tk1_tk2(
    x: &DataMatrix,
    k: usize,
    model: ModelAssumption,
    split: TkSplit,
) -> Result<(TestOutcome, TestOutcome)> {
    let (df1, df2) = limit_law_dof(x.p(), k)?;
    let fit = fobi_fit(x, model)?;
    let (s1, s2) = standardized_tk_parts(&fit.d, k, fit.n, fit.sigma1, split)?;
    let outcome = |statistic: f64, df: usize, method| TestOutcome {
        statistic,
        p_value: chi2_sf(statistic, df),
        method,
        k,
        replicates: Vec::new(),
        sigma1_hat: Some(fit.sigma1),
        seed: 0,
        failures: 0,
    };
    Ok((
        outcome(s1, df1, TestMethod::AsymptoticTk1),
        outcome(s2, df2, TestMethod::AsymptoticTk2),
    ))
}

pub(crate) fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("positive dof").sf(x)
}

/// n·tr((Bᵀ(S₂ − I)B)²) for an orthonormal noise basis B (p × (p − k)) in
/// the whitened coordinates: the statistic one would use if the noise
/// subspace were known.
pub fn statistic_tk_star(s2_whitened: &DMatrix<f64>, noise_basis: &DMatrix<f64>, n: usize) -> Result<f64> {
    let p = s2_whitened.nrows();
    if noise_basis.nrows() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: noise_basis.nrows() });
    }
    let centred = s2_whitened - DMatrix::identity(p, p);
    let block = noise_basis.transpose() * centred * noise_basis;
    Ok(n as f64 * (&block * &block).trace())
}

/// Resample the signal block (k × n). NGCA keeps each column intact; NGICA
/// resamples every row on its own.
pub fn resample_signal<R: Rng + ?Sized>(s_hat: &DMatrix<f64>, model: ModelAssumption, rng: &mut R) -> DMatrix<f64> {
    let (k, n) = s_hat.shape();
    let mut out = DMatrix::zeros(k, n);
    if k == 0 || n == 0 {
        return out;
    }
    match model {
        ModelAssumption::Ngca => {
            for i in 0..n {
                let j = rng.random_range(0..n);
                out.set_column(i, &s_hat.column(j));
            }
        }
        ModelAssumption::Ngica => {
            for r in 0..k {
                for i in 0..n {
                    let j = rng.random_range(0..n);
                    out[(r, i)] = s_hat[(r, j)];
                }
            }
        }
    }
    out
}

/// Noise generator prepared once from N̂ and reused across replicates.
pub struct NoiseSampler<'a> {
    n_hat: &'a DMatrix<f64>,
    strategy: NoiseStrategy,
    factor: Option<DMatrix<f64>>,
}

impl<'a> NoiseSampler<'a> {
    pub fn new(n_hat: &'a DMatrix<f64>, strategy: NoiseStrategy) -> Result<Self> {
        if n_hat.nrows() == 0 {
            return Err(Error::InvalidParameter("noise block must have at least one row".into()));
        }
        let factor = match strategy {
            NoiseStrategy::Parametric => Some(gaussian_factor(n_hat)),
            NoiseStrategy::Rotation => None,
        };
        Ok(Self { n_hat, strategy, factor })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let (m, n) = self.n_hat.shape();
        match self.strategy {
            NoiseStrategy::Parametric => {
                let g = rng::standard_normal_matrix(m, n, rng);
                self.factor.as_ref().expect("parametric factor") * g
            }
            NoiseStrategy::Rotation => {
                let mut out = DMatrix::zeros(m, n);
                for i in 0..n {
                    let o = rng::haar_orthogonal(m, rng);
                    out.set_column(i, &(o * self.n_hat.column(i)));
                }
                out
            }
        }
    }
}

/// Lower Cholesky factor of cov(N̂), with eigenvalues floored at
/// 1e-10·trace when the covariance is singular.
fn gaussian_factor(n_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = n_hat.shape();
    let mean = n_hat.column_mean();
    let mut c = n_hat.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    let cov = linalg::symmetrize(&(&c * c.transpose() / n as f64));
    if let Some(ch) = cov.clone().cholesky() {
        if ch.l().diagonal().iter().all(|v| *v > 0.0 && v.is_finite()) {
            return ch.l();
        }
    }
    log::warn!("noise covariance is singular; flooring its eigenvalues");
    let floor = (NOISE_EIGEN_FLOOR * cov.trace()).max(f64::MIN_POSITIVE);
    let (vals, vecs) = linalg::sorted_symmetric_eigen(&cov);
    let floored = DVector::from_iterator(m, vals.iter().map(|v| v.max(floor)));
    let fixed = &vecs * DMatrix::from_diagonal(&floored) * vecs.transpose();
    linalg::symmetrize(&fixed).cholesky().map(|c| c.l()).unwrap_or_else(|| {
        // a floored spectral factor is always available
        &vecs * DMatrix::from_diagonal(&floored.map(f64::sqrt))
    })
}

/// One-off noise resample; see [`NoiseSampler`] for repeated draws.
pub fn resample_noise<R: Rng + ?Sized>(
    n_hat: &DMatrix<f64>,
    strategy: NoiseStrategy,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(NoiseSampler::new(n_hat, strategy)?.sample(rng))
}

/// Fit the configured pair, choose the noise block for `k` and compute the
/// statistic. The returned unmixing result has the noise rows last.
pub fn observed_statistic(x: &DataMatrix, k: usize, cfg: &BootstrapConfig) -> Result<(f64, UnmixingResult)> {
    check_k(x.p(), k, cfg.max_testable_k(x.p()))?;
    let fit = two_scatter_unmixing(x, &cfg.scatter)?;
    statistic_from_fit(&fit, k, x.n(), cfg.statistic)
}

fn statistic_from_fit(fit: &UnmixingResult, k: usize, n: usize, kind: StatisticKind) -> Result<(f64, UnmixingResult)> {
    let d = fit.d.as_slice();
    let part = match kind {
        StatisticKind::Variance => order_for_partition(d, k)?,
        StatisticKind::FobiTk => order_by_closeness(d, k, 1.0)?,
    };
    let t = match kind {
        StatisticKind::Variance => statistic_variance_tk(d, k, n)?,
        StatisticKind::FobiTk => statistic_tk_fobi(d, k, n)?,
    };
    Ok((t, fit.reordered(&part, k)))
}

fn replicate_stream(seed: u64, j: usize, attempt: usize) -> StreamRng {
    rng::stream(rng::derive_path(seed, &[j as u64, attempt as u64]))
}

struct Replicate {
    value: Option<f64>,
    errors: Vec<Error>,
}

/// Bootstrap test of H₀ₖ with any scatter pair.
pub fn bootstrap_test(x: &DataMatrix, k: usize, cfg: &BootstrapConfig) -> Result<TestOutcome> {
    cfg.validate()?;
    let (t_obs, fit) = observed_statistic(x, k, cfg)?;
    let p = x.p();
    let n = x.n();
    let z = latent_components(x, &fit)?;
    let s_hat = z.rows(0, k).into_owned();
    let n_hat = z.rows(k, p - k).into_owned();
    let w_inv = fit.w.clone().try_inverse().ok_or(Error::WhiteningImpossible { condition: f64::INFINITY })?;
    let noise = NoiseSampler::new(&n_hat, cfg.noise_strategy)?;

    let draw = |j: usize, attempt: usize| -> Result<f64> {
        let mut rng = replicate_stream(cfg.seed, j, attempt);
        let s_star = resample_signal(&s_hat, cfg.model, &mut rng);
        let n_star = noise.sample(&mut rng);
        let mut z_star = DMatrix::zeros(p, n);
        z_star.rows_mut(0, k).copy_from(&s_star);
        z_star.rows_mut(k, p - k).copy_from(&n_star);
        let x_star = DataMatrix::new(&w_inv * z_star)?;
        let refit = two_scatter_unmixing(&x_star, &cfg.scatter)?;
        Ok(statistic_from_fit(&refit, k, n, cfg.statistic)?.0)
    };

    let replicates: Vec<Replicate> = (0..cfg.replicates)
        .into_par_iter()
        .map(|j| {
            let mut errors = Vec::new();
            while errors.len() < MAX_REPLICATE_FAILURES {
                match draw(j, errors.len()) {
                    Ok(v) => return Replicate { value: Some(v), errors },
                    Err(e) => errors.push(e),
                }
            }
            Replicate { value: None, errors }
        })
        .collect();

    let mut values = Vec::with_capacity(cfg.replicates);
    let mut failures = 0;
    let mut last_error = None;
    for rep in replicates {
        failures += rep.errors.len();
        if let Some(e) = rep.errors.into_iter().last() {
            last_error = Some(e);
        }
        if failures >= MAX_REPLICATE_FAILURES {
            return Err(Error::BootstrapAborted {
                failures,
                last: Box::new(last_error.expect("a failure was recorded")),
            });
        }
        values.push(rep.value.expect("a replicate without a value has hit the failure cap"));
    }
    if failures > 0 {
        log::info!("bootstrap for k = {k}: {failures} replicate fits failed and were redrawn");
    }
    let exceed = values.iter().filter(|&&t| t >= t_obs).count();
    Ok(TestOutcome {
        statistic: t_obs,
        p_value: (exceed + 1) as f64 / (cfg.replicates + 1) as f64,
        method: TestMethod::Bootstrap,
        k,
        replicates: values,
        sigma1_hat: None,
        seed: cfg.seed,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_matrix, stream};
    use proptest::prelude::*;

    #[test]
    fn tk_fobi_examples() {
        assert_eq!(statistic_tk_fobi(&[1.0; 5], 2, 100).unwrap(), 0.0);
        let t = statistic_tk_fobi(&[1.1, 1.0, 0.9], 1, 100).unwrap();
        assert!((t - 1.0).abs() < 1e-12, "{t}");
    }

    #[test]
    fn variance_tk_examples() {
        let t = statistic_variance_tk(&[1.2, 1.0], 0, 100).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert_eq!(statistic_variance_tk(&[3.0, 0.7, 0.7, 0.7], 1, 50).unwrap(), 0.0);
        assert!(statistic_variance_tk(&[1.0, 2.0, 3.0], 2, 10).is_err());
    }

    #[test]
    fn split_parts_edge_cases() {
        let (t1, t2) = statistics_tk1_tk2(&[3.0, 0.9, 1.1], 1, 10, TkSplit::Decomposition).unwrap();
        assert!(t2.abs() < 1e-12 && (t1 - 0.2).abs() < 1e-12);
        let (t1, _) = statistics_tk1_tk2(&[2.0, 1.2, 1.2, 1.2], 1, 10, TkSplit::Decomposition).unwrap();
        assert_eq!(t1, 0.0);
    }

    #[test]
    fn unnormalized_split_is_the_literal_formula() {
        let d = [1.3, 0.8, 1.05];
        let (t1, t2) = statistics_tk1_tk2(&d, 1, 7, TkSplit::Unnormalized).unwrap();
        // the two closest to one are 1.05 and 0.8
        let sum: f64 = 1.05 + 0.8;
        assert!((t1 - 7.0 * (1.05f64.powi(2) + 0.64 - sum * sum)).abs() < 1e-12);
        assert!((t2 - 7.0 * (sum - 2.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn dof_arithmetic() {
        assert_eq!(limit_law_dof(6, 3).unwrap(), (5, 1));
        assert_eq!(limit_law_dof(6, 0).unwrap(), (20, 1));
        assert!(limit_law_dof(6, 5).is_err());
    }

    #[test]
    fn sigma1_on_hypercube_vertices() {
        // every coordinate is ±1: Σz⁴ = p and ‖z‖⁴ = p² per column, so both forms give 8
        let p = 3;
        let z = DMatrix::from_fn(p, 8, |r, c| if (c >> r) & 1 == 1 { 1.0 } else { -1.0 });
        assert!((sigma1_hat(&z, ModelAssumption::Ngica) - 8.0).abs() < 1e-12);
        assert!((sigma1_hat(&z, ModelAssumption::Ngca) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn sigma1_gaussian_monte_carlo() {
        let z = standard_normal_matrix(6, 100_000, &mut stream(10));
        for model in [ModelAssumption::Ngica, ModelAssumption::Ngca] {
            let s = sigma1_hat(&z, model);
            assert!((s - 20.0).abs() < 0.5, "{model:?}: {s}");
        }
    }

    #[test]
    fn sigma1_heavy_tails_exceed_gaussian_value() {
        let mut rng = stream(11);
        let t5 = rand_distr::StudentT::new(5.0).unwrap();
        // unit-variance t₅ components
        let scale = (3.0f64 / 5.0).sqrt();
        let z = DMatrix::from_fn(4, 50_000, |_, _| t5.sample(&mut rng) * scale);
        assert!(sigma1_hat(&z, ModelAssumption::Ngica) > 2.0 * 4.0 + 8.0);
    }

    #[test]
    fn sigma1_is_floored() {
        let z = DMatrix::from_element(30, 4, 0.0);
        assert_eq!(sigma1_hat(&z, ModelAssumption::Ngca), SIGMA1_FLOOR);
    }

    #[test]
    fn limit_law_p_value_matches_chi2_when_one_part_vanishes() {
        // with p − k = 2 the first part has 2 dof; compare against an
        // independent simulation of the weighted sum
        let sigma1 = 20.0;
        let (p, k) = (6, 4);
        let mut rng = stream(12);
        let mut draws: Vec<f64> = (0..200_000)
            .map(|_| {
                let g: Vec<f64> = (0..3).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
                2.0 * sigma1 * (g[0] * g[0] + g[1] * g[1]) + (2.0 * sigma1 + 8.0) * g[2] * g[2]
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        let q95 = draws[(0.95 * draws.len() as f64) as usize];
        let pv = limit_law_p_value(q95, sigma1, p, k, 1).unwrap();
        assert!((pv - 0.05).abs() < 0.004, "{pv}");
    }

    #[test]
    fn chi2_survival_oracle_even_dof() {
        // closed form for 4 dof: e^{-x/2}(1 + x/2)
        for x in [0.5, 3.0, 9.0] {
            let exact = (-x / 2.0f64).exp() * (1.0 + x / 2.0);
            assert!((chi2_sf(x, 4) - exact).abs() < 1e-12);
        }
        assert_eq!(chi2_sf(-1.0, 3), 1.0);
    }

    #[test]
    fn tk_star_equals_tk_on_selected_eigenvectors() {
        let x = DataMatrix::new(standard_normal_matrix(5, 400, &mut stream(13))).unwrap();
        let fit = two_scatter_unmixing(&x, &ScatterPairSpec::cov_cov4()).unwrap();
        let (_, u) = linalg::sorted_symmetric_eigen(fit.s2_whitened.as_matrix());
        let d = fit.d.as_slice();
        let k = 2;
        let part = order_by_closeness(d, k, 1.0).unwrap();
        let basis = DMatrix::from_fn(5, 3, |r, c| u[(r, part.noise[c])]);
        let star = statistic_tk_star(fit.s2_whitened.as_matrix(), &basis, 400).unwrap();
        let tk = statistic_tk_fobi(d, k, 400).unwrap();
        assert!((star - tk).abs() < 1e-9 * tk.max(1.0));
    }

    #[test]
    fn resample_constant_signal_is_unchanged() {
        let s = DMatrix::from_element(2, 20, 1.5);
        for model in [ModelAssumption::Ngca, ModelAssumption::Ngica] {
            assert_eq!(resample_signal(&s, model, &mut stream(14)), s);
        }
        assert_eq!(resample_signal(&DMatrix::zeros(0, 5), ModelAssumption::Ngca, &mut stream(0)).shape(), (0, 5));
    }

    #[test]
    fn ngca_resampling_keeps_columns_together() {
        let s = standard_normal_matrix(3, 50, &mut stream(15));
        let out = resample_signal(&s, ModelAssumption::Ngca, &mut stream(16));
        for c in out.column_iter() {
            assert!(s.column_iter().any(|orig| orig == c));
        }
    }

    #[test]
    fn ngica_resampling_breaks_row_coupling() {
        let n = 10_000;
        let row = standard_normal_matrix(1, n, &mut stream(17));
        let s = DMatrix::from_fn(2, n, |_, c| row[(0, c)]);
        let out = resample_signal(&s, ModelAssumption::Ngica, &mut stream(18));
        let a = out.row(0).transpose();
        let b = out.row(1).transpose();
        let (ma, mb) = (a.mean(), b.mean());
        let cov = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
        let corr = cov / ((a.add_scalar(-ma).norm()) * (b.add_scalar(-mb).norm()));
        assert!(corr.abs() < 0.1, "{corr}");
    }

    #[test]
    fn rotation_noise_preserves_norms_and_signs_in_one_dimension() {
        let nh = standard_normal_matrix(3, 40, &mut stream(19));
        let out = resample_noise(&nh, NoiseStrategy::Rotation, &mut stream(20)).unwrap();
        for (a, b) in nh.column_iter().zip(out.column_iter()) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
        let one = standard_normal_matrix(1, 40, &mut stream(21));
        let out = resample_noise(&one, NoiseStrategy::Rotation, &mut stream(22)).unwrap();
        assert!(one.iter().zip(out.iter()).all(|(a, b)| (a.abs() - b.abs()).abs() < 1e-15));
    }

    #[test]
    fn parametric_noise_matches_covariance() {
        let mut rng = stream(23);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 0.5]);
        let nh = &a * standard_normal_matrix(2, 5000, &mut rng);
        let target = {
            let mean = nh.column_mean();
            let c = DMatrix::from_fn(2, 5000, |r, j| nh[(r, j)] - mean[r]);
            &c * c.transpose() / 5000.0
        };
        let draw = resample_noise(&nh, NoiseStrategy::Parametric, &mut rng).unwrap();
        let got = &draw * draw.transpose() / 5000.0;
        assert!((got - &target).amax() < 0.15 * target.amax());
    }

    #[test]
    fn singular_noise_covariance_falls_back() {
        let row = standard_normal_matrix(1, 100, &mut stream(24));
        let nh = DMatrix::from_fn(2, 100, |_, c| row[(0, c)]);
        let draw = resample_noise(&nh, NoiseStrategy::Parametric, &mut stream(25)).unwrap();
        assert!(draw.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bootstrap_p_value_granularity_and_determinism() {
        let mut rng = stream(26);
        let mut z = standard_normal_matrix(4, 300, &mut rng);
        z.row_mut(0).iter_mut().for_each(|v| *v = v.powi(3));
        let x = DataMatrix::new(standard_normal_matrix(4, 4, &mut rng) * z).unwrap();
        let cfg = BootstrapConfig::new(ScatterPairSpec::cov_cov4(), ModelAssumption::Ngca)
            .with_replicates(30)
            .with_seed(9);
        let a = bootstrap_test(&x, 1, &cfg).unwrap();
        assert_eq!(a.replicates.len(), 30);
        let m = a.p_value * 31.0;
        assert!((m - m.round()).abs() < 1e-9 && (1.0..=31.0).contains(&m.round()));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| bootstrap_test(&x, 1, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_rejects_too_few_noise_components() {
        let x = DataMatrix::new(standard_normal_matrix(3, 50, &mut stream(27))).unwrap();
        let cfg = BootstrapConfig::new(ScatterPairSpec::cov_cov4(), ModelAssumption::Ngca);
        assert!(matches!(bootstrap_test(&x, 2, &cfg), Err(Error::InvalidParameter(_))));
        assert!(bootstrap_test(&x, 0, &cfg.with_replicates(0)).is_err());
    }

    proptest! {
        #[test]
        fn variance_statistic_non_increasing_in_k(d in prop::collection::vec(0.0f64..4.0, 3..9), n in 1usize..5000) {
            let p = d.len();
            let values: Vec<f64> = (0..=p - 2).map(|k| statistic_variance_tk(&d, k, n).unwrap()).collect();
            for w in values.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
        }

        #[test]
        fn decomposition_sums_to_tk(d in prop::collection::vec(0.0f64..4.0, 2..9), n in 1usize..5000, k in 0usize..8) {
            prop_assume!(k < d.len());
            let (t1, t2) = statistics_tk1_tk2(&d, k, n, TkSplit::Decomposition).unwrap();
            let tk = statistic_tk_fobi(&d, k, n).unwrap();
            prop_assert!((t1 + t2 - tk).abs() <= 1e-12 * tk.max(1.0));
        }
    }
}
