//! Data models and Monte-Carlo experiment drivers.
//!
//! Signals are standardized with their exact population mean and
//! covariance, Gaussian noise coordinates are appended, and the latent
//! vector is mixed with a random N(0, 1) matrix.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, Strategy};
use crate::hypothesis::{bootstrap_test, BootstrapConfig, NoiseStrategy, StatisticKind};
use crate::linalg;
use crate::rng::{self, StreamRng};
use crate::scatter::{DataMatrix, ScatterPairSpec, DEFAULT_INCOMPLETE_DEGREE};
use crate::unmixing::ModelAssumption;

/// Mixing matrices with a larger condition number are redrawn.
pub const MAX_MIXING_CONDITION: f64 = 1e6;
/// Largest share of failed repetitions an experiment tolerates.
pub const MAX_FAILURE_SHARE: f64 = 0.02;
pub const DEFAULT_SHIFT: f64 = 10.0;
pub const DEFAULT_CONTAMINATION: f64 = 0.005;

/// Stroke width of the Γ glyph. The stem has height 1.
pub const GLYPH_STROKE: f64 = 0.1;
/// Length of the glyph's top arm.
pub const GLYPH_ARM: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelName {
    M1,
    M2,
    M1x,
    M2x,
    M1star,
    M2star,
}

impl ModelName {
    pub const ALL: [ModelName; 6] = [
        ModelName::M1,
        ModelName::M2,
        ModelName::M1x,
        ModelName::M2x,
        ModelName::M1star,
        ModelName::M2star,
    ];

    fn label(self) -> &'static str {
        match self {
            ModelName::M1 => "M1",
            ModelName::M2 => "M2",
            ModelName::M1x => "M1x",
            ModelName::M2x => "M2x",
            ModelName::M1star => "M1star",
            ModelName::M2star => "M2star",
        }
    }

    fn is_glyph(self) -> bool {
        matches!(self, ModelName::M1 | ModelName::M1x | ModelName::M1star)
    }

    fn noise_dim(self) -> usize {
        match self {
            ModelName::M1star | ModelName::M2star => 6,
            _ => 3,
        }
    }

    fn contaminated(self) -> bool {
        matches!(self, ModelName::M1x | ModelName::M2x)
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', '-'], "");
        let norm = norm.strip_suffix("star").map(|b| format!("{b}*")).unwrap_or(norm);
        match norm.as_str() {
            "m1" => Ok(ModelName::M1),
            "m2" => Ok(ModelName::M2),
            "m1x" => Ok(ModelName::M1x),
            "m2x" => Ok(ModelName::M2x),
            "m1*" => Ok(ModelName::M1star),
            "m2*" => Ok(ModelName::M2star),
            _ => Err(Error::InvalidParameter(format!("unknown model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub fraction: f64,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    pub p: usize,
    pub q: usize,
    pub contamination: Option<Contamination>,
    #[serde(with = "crate::rng::seed_serde")]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(name: ModelName) -> Self {
        let q = 3;
        let p = q + name.noise_dim();
        let contamination = name.contaminated().then(|| Contamination {
            fraction: DEFAULT_CONTAMINATION,
            shift: vec![DEFAULT_SHIFT; p],
        });
        Self { name, p, q, contamination, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::new(self.name);
        if self.p != expected.p || self.q != expected.q {
            return Err(Error::InvalidParameter(format!(
                "{} has p = {}, q = {}",
                self.name, expected.p, expected.q
            )));
        }
        if let Some(c) = &self.contamination {
            if !(0.0..=0.05).contains(&c.fraction) {
                return Err(Error::InvalidParameter(format!(
                    "contamination fraction must lie in [0, 0.05], got {}",
                    c.fraction
                )));
            }
            if c.shift.len() != self.p {
                return Err(Error::DimensionMismatch { expected: self.p, actual: c.shift.len() });
            }
        }
        Ok(())
    }

    /// Draw a sample using the spec's own seed.
    pub fn sample(&self, n: usize) -> Result<ModelSample> {
        sample_model(self, n, &mut rng::stream(self.seed))
    }
}

/// Uniform points on the Γ glyph [0,a]×[1−b,1] ∪ [0,b]×[0,1], with arm
/// a = 0.45 and stroke b = 0.1.
/// Row 0 is x, row 1 is y.
pub fn sample_gamma_glyph<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = glyph_geometry();
    let mut out = DMatrix::zeros(2, n);
    for i in 0..n {
        let (x, y) = if rng.random::<f64>() < g.top_share {
            (GLYPH_ARM * rng.random::<f64>(), 1.0 - GLYPH_STROKE + GLYPH_STROKE * rng.random::<f64>())
        } else {
            (GLYPH_STROKE * rng.random::<f64>(), (1.0 - GLYPH_STROKE) * rng.random::<f64>())
        };
        out[(0, i)] = x;
        out[(1, i)] = y;
    }
    out
}

struct GlyphGeometry {
    top_share: f64,
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
}

/// Exact moments of the uniform law on the glyph, split into the top bar
/// and the stem below it.
fn glyph_geometry() -> GlyphGeometry {
    let (a, b) = (GLYPH_ARM, GLYPH_STROKE);
    let h = 1.0 - b;
    let top_area = a * b;
    let stem_area = b * h;
    let total = top_area + stem_area;
    let (wt, ws) = (top_area / total, stem_area / total);
    // per-piece moments of uniform rectangles
    let ex = wt * a / 2.0 + ws * b / 2.0;
    let ey = wt * (h + b / 2.0) + ws * h / 2.0;
    let exx = wt * a * a / 3.0 + ws * b * b / 3.0;
    let eyy = wt * (1.0 - h.powi(3)) / (3.0 * b) + ws * h * h / 3.0;
    let exy = wt * (a / 2.0) * (h + b / 2.0) + ws * (b / 2.0) * (h / 2.0);
    GlyphGeometry {
        top_share: wt,
        mean: Vector2::new(ex, ey),
        cov: Matrix2::new(exx - ex * ex, exy - ex * ey, exy - ex * ey, eyy - ey * ey),
    }
}

/// P(y > 1 − b) for the glyph law.
pub fn glyph_top_probability() -> f64 {
    glyph_geometry().top_share
}

/// Two-component Gaussian mixture w·N(μ₁, σ₁²) + (1 − w)·N(μ₂, σ₂²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixture {
    pub weight: f64,
    pub first: (f64, f64),
    pub second: (f64, f64),
}

impl Mixture {
    pub fn mean(&self) -> f64 {
        self.weight * self.first.0 + (1.0 - self.weight) * self.second.0
    }

    pub fn variance(&self) -> f64 {
        let m2 = self.weight * (self.first.1.powi(2) + self.first.0.powi(2))
            + (1.0 - self.weight) * (self.second.1.powi(2) + self.second.0.powi(2));
        m2 - self.mean().powi(2)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (mu, sd) = if rng.random::<f64>() < self.weight { self.first } else { self.second };
        let g: f64 = StandardNormal.sample(rng);
        mu + sd * g
    }
}

/// Mixing weight that makes a two-component equal-variance mixture have
/// kurtosis 3.
pub fn kurtosis3_weight() -> f64 {
    1.0 / (3.0 + 3f64.sqrt())
}

/// The three signal mixtures of the independent-component models.
pub fn m2_mixtures() -> [Mixture; 3] {
    [
        Mixture { weight: kurtosis3_weight(), first: (-5.0, 1.0), second: (5.0, 1.0) },
        Mixture { weight: 0.7, first: (10.0, 2.0), second: (15.0, 5.0) },
        Mixture { weight: 0.4, first: (-4.0, 1.0), second: (2.0, 15.0) },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSample {
    pub x: DataMatrix,
    pub mixing: DMatrix<f64>,
    /// Standardized latent sample, signals first.
    pub z: DMatrix<f64>,
    /// Column indices that received the contamination shift.
    pub contaminated: Vec<usize>,
    pub mixing_redraws: usize,
}

/// Standardized signal block (q × n) for a model.
fn sample_signals<R: Rng + ?Sized>(name: ModelName, n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(3, n);
    if name.is_glyph() {
        let g = glyph_geometry();
        let root = linalg::inverse_sqrt(&DMatrix::from_column_slice(2, 2, g.cov.as_slice()))
            .expect("glyph covariance is positive definite");
        let glyph = sample_gamma_glyph(n, rng);
        let mean = DVector::from_column_slice(g.mean.as_slice());
        for i in 0..n {
            let v = &root * (glyph.column(i) - &mean);
            s[(0, i)] = v[0];
            s[(1, i)] = v[1];
        }
        for i in 0..n {
            let g: f64 = StandardNormal.sample(rng);
            s[(2, i)] = (g * g - 1.0) / 2f64.sqrt();
        }
    } else {
        for (r, mix) in m2_mixtures().iter().enumerate() {
            let (mu, sd) = (mix.mean(), mix.variance().sqrt());
            for i in 0..n {
                s[(r, i)] = (mix.sample(rng) - mu) / sd;
            }
        }
    }
    s
}

/// Draw (X, A, Z) for a model.
pub fn sample_model<R: Rng + ?Sized>(spec: &ModelSpec, n: usize, rng: &mut R) -> Result<ModelSample> {
    spec.validate()?;
    if n < spec.p + 1 {
        return Err(Error::InvalidParameter(format!("n = {n} must exceed p = {}", spec.p)));
    }
    let signals = sample_signals(spec.name, n, rng);
    let mut z = DMatrix::zeros(spec.p, n);
    z.rows_mut(0, spec.q).copy_from(&signals);
    let noise = rng::standard_normal_matrix(spec.p - spec.q, n, rng);
    z.rows_mut(spec.q, spec.p - spec.q).copy_from(&noise);

    let mut redraws = 0;
    let mixing = loop {
        let a = rng::standard_normal_matrix(spec.p, spec.p, rng);
        let sv = a.singular_values();
        let cond = sv.max() / sv.min();
        if cond.is_finite() && cond <= MAX_MIXING_CONDITION {
            break a;
        }
        redraws += 1;
    };
    if redraws > 0 {
        log::debug!("redrew the mixing matrix {redraws} time(s)");
    }
    let mut x = DataMatrix::new(&mixing * &z)?;
    let mut contaminated = Vec::new();
    if let Some(c) = &spec.contamination {
        let (cx, idx) = contaminate_with_indices(&x, c.fraction, &c.shift, rng)?;
        x = cx;
        contaminated = idx;
    }
    Ok(ModelSample { x, mixing, z, contaminated, mixing_redraws: redraws })
}

/// Add `shift` to ⌈fraction·n⌉ columns chosen uniformly without replacement.
pub fn contaminate<R: Rng + ?Sized>(x: &DataMatrix, fraction: f64, shift: &[f64], rng: &mut R) -> Result<DataMatrix> {
    Ok(contaminate_with_indices(x, fraction, shift, rng)?.0)
}

fn contaminate_with_indices<R: Rng + ?Sized>(
    x: &DataMatrix,
    fraction: f64,
    shift: &[f64],
    rng: &mut R,
) -> Result<(DataMatrix, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if shift.len() != x.p() {
        return Err(Error::DimensionMismatch { expected: x.p(), actual: shift.len() });
    }
    let n = x.n();
    // guard against 0.005·1000 landing a hair above 5
    let count = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut idx = index::sample(rng, n, count.min(n)).into_vec();
    idx.sort_unstable();
    let mut m = x.as_matrix().clone();
    let s = DVector::from_column_slice(shift);
    for &i in &idx {
        let mut col = m.column_mut(i);
        col += &s;
    }
    Ok((DataMatrix::new(m)?, idx))
}

/// Named testing procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Cov–Cov4 with the T_k statistic (noise eigenvalue known to be one).
    Fobi,
    CovCov4,
    CauHub,
    ScauShub,
    ScauiShubi { d: usize },
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Fobi,
        Method::CovCov4,
        Method::CauHub,
        Method::ScauShub,
        Method::ScauiShubi { d: DEFAULT_INCOMPLETE_DEGREE },
    ];

    pub fn label(&self) -> String {
        match self {
            Method::Fobi => "fobi".into(),
            Method::CovCov4 => "cov-cov4".into(),
            Method::CauHub => "cau-hub".into(),
            Method::ScauShub => "scau-shub".into(),
            Method::ScauiShubi { d } if *d == DEFAULT_INCOMPLETE_DEGREE => "scaui-shubi".into(),
            Method::ScauiShubi { d } => format!("scaui-shubi({d})"),
        }
    }

    /// Scatter pair; `seed` drives the permutation of incomplete symmetrization.
    pub fn scatter(&self, seed: u64) -> ScatterPairSpec {
        match self {
            Method::Fobi | Method::CovCov4 => ScatterPairSpec::cov_cov4(),
            Method::CauHub => ScatterPairSpec::cau_hub(),
            Method::ScauShub => ScatterPairSpec::scau_shub(),
            Method::ScauiShubi { d } => ScatterPairSpec::scaui_shubi(*d, seed),
        }
    }

    pub fn statistic(&self) -> StatisticKind {
        match self {
            Method::Fobi => StatisticKind::FobiTk,
            _ => StatisticKind::Variance,
        }
    }

    pub fn bootstrap_config(&self, model: ModelAssumption, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            statistic: self.statistic(),
            seed,
            ..BootstrapConfig::new(self.scatter(seed), model)
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(rest) = s.strip_prefix("scaui-shubi") {
            if rest.is_empty() {
                return Ok(Method::ScauiShubi { d: DEFAULT_INCOMPLETE_DEGREE });
            }
            let inner = rest
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .or_else(|| rest.strip_prefix(':'))
                .ok_or_else(|| Error::InvalidParameter(format!("cannot parse method '{s}'")))?;
            let d = inner
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad incomplete degree in '{s}'")))?;
            return Ok(Method::ScauiShubi { d });
        }
        match s.as_str() {
            "fobi" => Ok(Method::Fobi),
            "cov-cov4" => Ok(Method::CovCov4),
            "cau-hub" => Ok(Method::CauHub),
            "scau-shub" => Ok(Method::ScauShub),
            _ => Err(Error::InvalidParameter(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionExperiment {
    pub model: ModelSpec,
    pub n: usize,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    pub assumption: ModelAssumption,
    pub noise_strategy: NoiseStrategy,
    pub reps: usize,
    /// Bootstrap samples per test.
    pub replicates: usize,
    pub alpha: f64,
    #[serde(with = "crate::rng::seed_serde")]
    pub master_seed: u64,
}

impl RejectionExperiment {
    pub fn new(model: ModelName, n: usize, ks: Vec<usize>, methods: Vec<Method>) -> Self {
        Self {
            model: ModelSpec::new(model),
            n,
            ks,
            methods,
            assumption: ModelAssumption::Ngca,
            noise_strategy: NoiseStrategy::Parametric,
            reps: 200,
            replicates: BootstrapConfig::DEFAULT_REPLICATES,
            alpha: 0.05,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub model: ModelName,
    pub n: usize,
    pub method: String,
    pub assumption: ModelAssumption,
    pub k: usize,
    pub rejection_rate: f64,
    pub rejections: usize,
    pub repetitions: usize,
    pub replicates: usize,
}

/// One test in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    #[serde(with = "crate::rng::seed_serde")]
    pub seed: u64,
    pub method: String,
    pub k: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub rows: Vec<RateRow>,
    pub records: Vec<RepRecord>,
    pub failures: usize,
    pub attempted: usize,
    #[serde(with = "crate::rng::seed_serde")]
    pub master_seed: u64,
    pub generator: String,
    pub alpha: f64,
}

impl SimulationReport {
    pub fn rate(&self, method: &str, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method && r.k == k).map(|r| r.rejection_rate)
    }
}

fn rep_seed(master: u64, rep: usize) -> u64 {
    rng::derive_path(master, &[rep as u64])
}

fn data_stream(rep_seed: u64) -> StreamRng {
    rng::stream(rng::derive_seed(rep_seed, 0))
}

fn method_seed(rep_seed: u64, method: usize, k: usize) -> u64 {
    rng::derive_path(rep_seed, &[1, method as u64, k as u64])
}

fn check_common(reps: usize, alpha: f64, methods: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::InvalidParameter("at least one repetition is required".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if methods == 0 {
        return Err(Error::InvalidParameter("at least one method is required".into()));
    }
    Ok(())
}

fn check_failures(failures: usize, attempted: usize) -> Result<()> {
    if failures as f64 > MAX_FAILURE_SHARE * attempted as f64 {
        return Err(Error::TooManyFailures { failures, attempted });
    }
    Ok(())
}

/// Rejection rates of bootstrap tests over repeated draws from a model.
pub fn rejection_rate_experiment(exp: &RejectionExperiment) -> Result<SimulationReport> {
    check_common(exp.reps, exp.alpha, exp.methods.len())?;
    exp.model.validate()?;
    let p = exp.model.p;
    for &k in &exp.ks {
        for m in &exp.methods {
            if k > m.bootstrap_config(exp.assumption, 0).max_testable_k(p) {
                return Err(Error::InvalidParameter(format!("k = {k} is not testable with {m} in p = {p}")));
            }
        }
    }

    let outcomes: Vec<Result<Vec<RepRecord>>> = (0..exp.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(exp.master_seed, rep);
            let sample = sample_model(&exp.model, exp.n, &mut data_stream(seed))?;
            let mut records = Vec::new();
            for (mi, method) in exp.methods.iter().enumerate() {
                for &k in &exp.ks {
                    let test_seed = method_seed(seed, mi, k);
                    let mut cfg = method.bootstrap_config(exp.assumption, test_seed);
                    cfg.replicates = exp.replicates;
                    cfg.noise_strategy = exp.noise_strategy;
                    let out = bootstrap_test(&sample.x, k, &cfg)?;
                    records.push(RepRecord {
                        rep,
                        seed: test_seed,
                        method: method.label(),
                        k,
                        statistic: out.statistic,
                        p_value: out.p_value,
                        rejected: out.rejects(exp.alpha),
                    });
                }
            }
            Ok(records)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = 0;
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => records.extend(r),
            Err(e) => {
                log::warn!("repetition {rep} failed: {e}");
                failures += 1;
            }
        }
    }
    check_failures(failures, exp.reps)?;

    let mut rows = Vec::new();
    for method in &exp.methods {
        let label = method.label();
        for &k in &exp.ks {
            let hits: Vec<&RepRecord> = records.iter().filter(|r| r.method == label && r.k == k).collect();
            let rejections = hits.iter().filter(|r| r.rejected).count();
            let repetitions = hits.len();
            rows.push(RateRow {
                model: exp.model.name,
                n: exp.n,
                method: label.clone(),
                assumption: exp.assumption,
                k,
                rejection_rate: if repetitions == 0 { 0.0 } else { rejections as f64 / repetitions as f64 },
                rejections,
                repetitions,
                replicates: exp.replicates,
            });
        }
    }
    Ok(SimulationReport {
        rows,
        records,
        failures,
        attempted: exp.reps,
        master_seed: exp.master_seed,
        generator: rng::GENERATOR_NAME.into(),
        alpha: exp.alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorExperiment {
    pub model: ModelSpec,
    pub n: usize,
    pub strategies: Vec<Strategy>,
    pub methods: Vec<Method>,
    pub assumption: ModelAssumption,
    pub noise_strategy: NoiseStrategy,
    pub reps: usize,
    pub replicates: usize,
    pub alpha: f64,
    #[serde(with = "crate::rng::seed_serde")]
    pub master_seed: u64,
}

impl EstimatorExperiment {
    pub fn new(model: ModelName, n: usize, strategies: Vec<Strategy>, methods: Vec<Method>) -> Self {
        Self {
            model: ModelSpec::new(model),
            n,
            strategies,
            methods,
            assumption: ModelAssumption::Ngca,
            noise_strategy: NoiseStrategy::Parametric,
            reps: 100,
            replicates: BootstrapConfig::DEFAULT_REPLICATES,
            alpha: 0.05,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub model: ModelName,
    pub n: usize,
    pub method: String,
    pub strategy: Strategy,
    /// counts[q] = number of repetitions with q̂ = q, for q in 0..p.
    pub counts: Vec<usize>,
    pub repetitions: usize,
    pub mode: usize,
}

impl FrequencyRow {
    pub fn frequency(&self, q: usize) -> f64 {
        self.counts.get(q).copied().unwrap_or(0) as f64 / self.repetitions.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub rep: usize,
    #[serde(with = "crate::rng::seed_serde")]
    pub seed: u64,
    pub method: String,
    pub strategy: Strategy,
    pub q_hat: usize,
    pub saturated: bool,
    pub tests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub rows: Vec<FrequencyRow>,
    pub records: Vec<EstimateRecord>,
    pub failures: usize,
    pub attempted: usize,
    #[serde(with = "crate::rng::seed_serde")]
    pub master_seed: u64,
    pub generator: String,
    pub alpha: f64,
}

impl EstimatorReport {
    pub fn row(&self, method: &str, strategy: Strategy) -> Option<&FrequencyRow> {
        self.rows.iter().find(|r| r.method == method && r.strategy == strategy)
    }
}

/// Distribution of q̂ over repeated draws. All strategies and methods see
/// the same data in a given repetition, and strategies share per-k seeds.
pub fn estimator_experiment(exp: &EstimatorExperiment) -> Result<EstimatorReport> {
    check_common(exp.reps, exp.alpha, exp.methods.len())?;
    if exp.strategies.is_empty() {
        return Err(Error::InvalidParameter("at least one strategy is required".into()));
    }
    exp.model.validate()?;
    let p = exp.model.p;

    let outcomes: Vec<Result<Vec<EstimateRecord>>> = (0..exp.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(exp.master_seed, rep);
            let sample = sample_model(&exp.model, exp.n, &mut data_stream(seed))?;
            let mut records = Vec::new();
            for (mi, method) in exp.methods.iter().enumerate() {
                let master = method_seed(seed, mi, 0);
                let mut cfg = method.bootstrap_config(exp.assumption, master);
                cfg.replicates = exp.replicates;
                cfg.noise_strategy = exp.noise_strategy;
                for &strategy in &exp.strategies {
                    let (est, _) = estimator::estimate(&sample.x, &cfg, exp.alpha, strategy)?;
                    records.push(EstimateRecord {
                        rep,
                        seed: master,
                        method: method.label(),
                        strategy,
                        q_hat: est.q_hat,
                        saturated: est.saturated,
                        tests: est.visited.len(),
                    });
                }
            }
            Ok(records)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = 0;
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => records.extend(r),
            Err(e) => {
                log::warn!("repetition {rep} failed: {e}");
                failures += 1;
            }
        }
    }
    check_failures(failures, exp.reps)?;

    let mut rows = Vec::new();
    for method in &exp.methods {
        let label = method.label();
        for &strategy in &exp.strategies {
            let mut counts = vec![0usize; p];
            let mut repetitions = 0;
            for r in records.iter().filter(|r| r.method == label && r.strategy == strategy) {
                counts[r.q_hat] += 1;
                repetitions += 1;
            }
            // ties go to the smaller q̂
            let mode = (0..p).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
            rows.push(FrequencyRow {
                model: exp.model.name,
                n: exp.n,
                method: label.clone(),
                strategy,
                counts,
                repetitions,
                mode,
            });
        }
    }
    Ok(EstimatorReport {
        rows,
        records,
        failures,
        attempted: exp.reps,
        master_seed: exp.master_seed,
        generator: rng::GENERATOR_NAME.into(),
        alpha: exp.alpha,
    })
}

/// The full simulation grid for one model and assumption: n ∈ {500, 1000,
/// 2000, 4000}, all five methods, 1000 repetitions, M = 200, k ∈ {2, 3, 4}.
/// The complete symmetrized pair is left out at n = 4000.
pub fn full_grid(model: ModelName, assumption: ModelAssumption, master_seed: u64) -> Vec<RejectionExperiment> {
    [500, 1000, 2000, 4000]
        .into_iter()
        .map(|n| {
            let methods = Method::ALL
                .into_iter()
                .filter(|m| !(n == 4000 && *m == Method::ScauShub))
                .collect();
            RejectionExperiment {
                assumption,
                reps: 1000,
                master_seed: rng::derive_seed(master_seed, n as u64),
                ..RejectionExperiment::new(model, n, vec![2, 3, 4], methods)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn in_glyph(x: f64, y: f64) -> bool {
        let top = (0.0..=GLYPH_ARM).contains(&x) && (1.0 - GLYPH_STROKE..=1.0).contains(&y);
        let stem = (0.0..=GLYPH_STROKE).contains(&x) && (0.0..=1.0).contains(&y);
        top || stem
    }

    #[test]
    fn glyph_support() {
        let g = sample_gamma_glyph(20_000, &mut stream(1));
        assert!(g.column_iter().all(|c| in_glyph(c[0], c[1])));
    }

    #[test]
    fn glyph_top_bar_share() {
        let exact = 0.045 / (0.045 + 0.1 * 0.9);
        assert!((glyph_top_probability() - exact).abs() < 1e-15);
        let n = 100_000;
        let g = sample_gamma_glyph(n, &mut stream(2));
        let share = g.row(1).iter().filter(|&&y| y > 0.9).count() as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((share - exact).abs() < 3.0 * se, "{share} vs {exact}");
    }

    #[test]
    fn glyph_coordinates_are_dependent() {
        let n = 10_000;
        let g = sample_gamma_glyph(n, &mut stream(3));
        let bin = |v: f64| ((v * 4.0) as usize).min(3);
        let mut table = [[0.0f64; 4]; 4];
        for c in g.column_iter() {
            table[bin(c[0] / GLYPH_ARM)][bin(c[1])] += 1.0;
        }
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..4).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let mut stat = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let e = rows[i] * cols[j] / n as f64;
                if e > 0.0 {
                    stat += (table[i][j] - e).powi(2) / e;
                }
            }
        }
        let pv = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
        assert!(pv < 1e-6, "{stat}");
    }

    #[test]
    fn glyph_moments_match_sample() {
        let g = glyph_geometry();
        let n = 400_000;
        let s = sample_gamma_glyph(n, &mut stream(4));
        let mean = s.column_mean();
        assert!((mean[0] - g.mean[0]).abs() < 0.005 && (mean[1] - g.mean[1]).abs() < 0.005);
        let c = DMatrix::from_fn(2, n, |r, j| s[(r, j)] - mean[r]);
        let cov = &c * c.transpose() / n as f64;
        for i in 0..2 {
            for j in 0..2 {
                assert!((cov[(i, j)] - g.cov[(i, j)]).abs() < 0.003);
            }
        }
    }

    #[test]
    fn kurtosis3_weight_value() {
        assert!((kurtosis3_weight() - 0.21132).abs() < 1e-5);
        assert!((kurtosis3_weight() - (3.0 - 3f64.sqrt()) / 6.0).abs() < 1e-15);
    }

    fn excess_kurtosis(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        m4 / (m2 * m2) - 3.0
    }

    #[test]
    fn first_mixture_has_gaussian_kurtosis() {
        let mix = m2_mixtures()[0];
        let mut rng = stream(5);
        let v: Vec<f64> = (0..1_000_000).map(|_| mix.sample(&mut rng)).collect();
        assert!(excess_kurtosis(&v).abs() < 0.1);
    }

    #[test]
    fn chi2_component_skewness() {
        let mut rng = stream(6);
        let v: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * g
            })
            .collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
        assert!((m3 / m2.powf(1.5) - 8f64.sqrt()).abs() < 0.1);
    }

    #[test]
    fn mixture_moments_closed_form() {
        let mix = Mixture { weight: 0.7, first: (10.0, 2.0), second: (15.0, 5.0) };
        assert!((mix.mean() - 11.5).abs() < 1e-12);
        // 0.7(4 + 100) + 0.3(25 + 225) − 11.5²
        assert!((mix.variance() - (72.8 + 75.0 - 132.25)).abs() < 1e-12);
    }

    #[test]
    fn latent_sample_is_standardized() {
        for name in ModelName::ALL {
            let n = 20_000;
            let s = ModelSpec::new(name).with_seed(7).sample(n).unwrap();
            let z = &s.z;
            let mean = z.column_mean();
            let bound = 4.0 / (n as f64).sqrt();
            assert!(mean.amax() < bound, "{name}: {mean}");
            let c = DMatrix::from_fn(z.nrows(), n, |r, j| z[(r, j)] - mean[r]);
            let cov = &c * c.transpose() / n as f64;
            let err = (cov - DMatrix::identity(z.nrows(), z.nrows())).amax();
            assert!(err < 6.0 / (n as f64).sqrt() * 2.5, "{name}: {err}");
            assert_eq!(s.x.p(), ModelSpec::new(name).p);
        }
    }

    #[test]
    fn model_dimensions() {
        assert_eq!((ModelSpec::new(ModelName::M1).p, ModelSpec::new(ModelName::M1).q), (6, 3));
        assert_eq!((ModelSpec::new(ModelName::M2star).p, ModelSpec::new(ModelName::M2star).q), (9, 3));
        let mut bad = ModelSpec::new(ModelName::M1x);
        bad.contamination.as_mut().unwrap().fraction = 0.2;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = ModelSpec::new(ModelName::M2x).with_seed(11);
        assert_eq!(spec.sample(300).unwrap(), spec.sample(300).unwrap());
    }

    #[test]
    fn contamination_counts_and_shift() {
        let spec = ModelSpec::new(ModelName::M1).with_seed(3);
        let x = spec.sample(1000).unwrap().x;
        let shift = vec![10.0; 6];
        let (y, idx) = contaminate_with_indices(&x, 0.005, &shift, &mut stream(9)).unwrap();
        assert_eq!(idx.len(), 5);
        for j in 0..1000 {
            let diff = y.as_matrix().column(j) - x.as_matrix().column(j);
            if idx.contains(&j) {
                assert!(diff.iter().all(|d| (d - 10.0).abs() < 1e-12));
            } else {
                assert!(diff.iter().all(|&d| d == 0.0));
            }
        }
        assert_eq!(contaminate(&x, 0.0, &shift, &mut stream(1)).unwrap(), x);
        assert_eq!(contaminate_with_indices(&x, 0.0011, &shift, &mut stream(1)).unwrap().1.len(), 2);
    }

    #[test]
    fn contaminated_model_records_shifted_columns() {
        let s = ModelSpec::new(ModelName::M1x).with_seed(5).sample(1000).unwrap();
        assert_eq!(s.contaminated.len(), 5);
        let clean = &s.mixing * &s.z;
        for j in 0..1000 {
            let shifted = (s.x.as_matrix().column(j) - clean.column(j)).amax() > 1.0;
            assert_eq!(shifted, s.contaminated.contains(&j));
        }
    }

    #[test]
    fn mixing_entries_look_standard_normal() {
        let mut all = Vec::new();
        for seed in 0..200 {
            let s = ModelSpec::new(ModelName::M2).with_seed(seed).sample(20).unwrap();
            all.extend(s.mixing.iter().copied());
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 6.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn method_labels_round_trip() {
        for m in Method::ALL.into_iter().chain([Method::ScauiShubi { d: 20 }]) {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
        assert_eq!("M1*".parse::<ModelName>().unwrap(), ModelName::M1star);
        assert_eq!("m2star".parse::<ModelName>().unwrap(), ModelName::M2star);
    }

    #[test]
    fn single_repetition_estimator_is_a_point_mass() {
        let exp = EstimatorExperiment {
            reps: 1,
            replicates: 19,
            ..EstimatorExperiment::new(ModelName::M2star, 400, vec![Strategy::Incremental], vec![Method::CovCov4])
        };
        let rep = estimator_experiment(&exp).unwrap();
        let row = &rep.rows[0];
        assert_eq!(row.counts.iter().sum::<usize>(), 1);
        assert_eq!(row.counts[row.mode], 1);
    }

    #[test]
    fn rejection_experiment_is_thread_independent() {
        let exp = RejectionExperiment {
            reps: 4,
            replicates: 19,
            master_seed: 5,
            ..RejectionExperiment::new(ModelName::M1, 300, vec![2, 3], vec![Method::CovCov4, Method::Fobi])
        };
        let a = rejection_rate_experiment(&exp).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| rejection_rate_experiment(&exp).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.rejection_rate) && r.repetitions == 4));
    }

    #[test]
    fn full_grid_skips_complete_symmetrization_at_largest_n() {
        let grid = full_grid(ModelName::M1, ModelAssumption::Ngca, 0);
        assert_eq!(grid.len(), 4);
        assert_eq!(grid[3].methods.len(), 4);
        assert!(grid.iter().all(|e| e.reps == 1000 && e.replicates == 200));
    }
}
