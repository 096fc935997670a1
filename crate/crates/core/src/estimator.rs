//! Sequential estimation of the signal dimension q from tests of H₀ₖ.
//!
//! Both strategies are written against a decision oracle `k -> p-value` so
//! they can be traced with fixed decisions as well as run on data.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{bootstrap_test, BootstrapConfig, TestOutcome};
use crate::rng;
use crate::scatter::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Incremental,
    DivideConquer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
    /// The statistic cannot test this k (noise block too small); counted
    /// as not rejected.
    Untestable,
}

impl Decision {
    fn rejected(self) -> bool {
        self == Decision::Reject
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitedTest {
    pub k: usize,
    pub p_value: Option<f64>,
    pub statistic: Option<f64>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub q_hat: usize,
    /// Tests in the order they were made; each k appears once.
    pub visited: Vec<VisitedTest>,
    pub strategy: Strategy,
    pub alpha: f64,
    /// The estimate sits at p − 1 without H₀₍ₚ₋₁₎ having been tested, so it
    /// only says q̂ ≥ p − 1.
    pub saturated: bool,
}

impl DimensionEstimate {
    /// Re-run the strategy on the recorded decisions.
    pub fn replay(&self, p: usize) -> Result<usize> {
        let lookup = |k: usize| {
            self.visited
                .iter()
                .find(|v| v.k == k)
                .map(|v| v.decision)
                .ok_or_else(|| Error::InvalidInput(format!("no recorded decision for k = {k}")))
        };
        let replayed = match self.strategy {
            Strategy::Incremental => run_incremental(p, lookup)?,
            Strategy::DivideConquer => run_divide_conquer(p, lookup)?,
        };
        Ok(replayed.0)
    }
}

/// Answer for one k from a test oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleAnswer {
    pub p_value: f64,
    pub statistic: Option<f64>,
}

impl From<f64> for OracleAnswer {
    fn from(p_value: f64) -> Self {
        Self { p_value, statistic: None }
    }
}

/// Records oracle calls, caches them by k and turns p-values into decisions.
struct Recorder<F> {
    oracle: F,
    alpha: f64,
    max_testable: usize,
    visited: Vec<VisitedTest>,
    cache: BTreeMap<usize, Decision>,
}

impl<F, A> Recorder<F>
where
    F: FnMut(usize) -> Result<A>,
    A: Into<OracleAnswer>,
{
    fn decide(&mut self, k: usize) -> Result<Decision> {
        if let Some(&d) = self.cache.get(&k) {
            return Ok(d);
        }
        let entry = if k > self.max_testable {
            VisitedTest { k, p_value: None, statistic: None, decision: Decision::Untestable }
        } else {
            let answer: OracleAnswer = (self.oracle)(k)
                .map_err(|e| Error::EstimationAborted {
                    k,
                    visited: self.visited.clone(),
                    source: Box::new(e),
                })?
                .into();
            let decision = if answer.p_value <= self.alpha { Decision::Reject } else { Decision::Accept };
            VisitedTest { k, p_value: Some(answer.p_value), statistic: answer.statistic, decision }
        };
        self.cache.insert(k, entry.decision);
        self.visited.push(entry);
        Ok(self.cache[&k])
    }

    fn finish(self, q_hat: usize, p: usize, strategy: Strategy) -> DimensionEstimate {
        let tested_top = self
            .visited
            .iter()
            .any(|v| v.k == p - 1 && v.decision != Decision::Untestable);
        DimensionEstimate {
            q_hat,
            saturated: q_hat == p - 1 && !tested_top,
            visited: self.visited,
            strategy,
            alpha: self.alpha,
        }
    }
}

/// Incremental scan over k = p − 2, …, 0 with decisions from `decide`.
/// Returns q̂ = min{k : H₀ₖ not rejected}, or p − 1 if H₀₍ₚ₋₂₎ is rejected.
fn run_incremental(p: usize, mut decide: impl FnMut(usize) -> Result<Decision>) -> Result<(usize, usize)> {
    if p < 2 {
        return Err(Error::InvalidParameter(format!("incremental estimation needs p >= 2, got {p}")));
    }
    let mut tests = 0;
    let mut k = p - 2;
    loop {
        tests += 1;
        if decide(k)?.rejected() {
            return Ok((k + 1, tests));
        }
        if k == 0 {
            return Ok((0, tests));
        }
        k -= 1;
    }
}

/// Bisection over [1, p − 1], testing H₀ₖ and H₀₍ₖ₋₁₎ each round.
fn run_divide_conquer(p: usize, mut decide: impl FnMut(usize) -> Result<Decision>) -> Result<(usize, usize)> {
    if p < 3 {
        return Err(Error::InvalidParameter(format!("divide and conquer needs p >= 3, got {p}")));
    }
    let (mut q_min, mut q_max) = (1usize, p - 1);
    let mut k = p.div_ceil(2);
    let mut rounds = 0;
    while q_min < q_max {
        rounds += 1;
        let here = decide(k)?;
        let below = decide(k - 1)?;
        match (here.rejected(), below.rejected()) {
            (false, true) => return Ok((k, rounds)),
            (false, false) => q_max = k - 1,
            (true, _) => q_min = k + 1,
        }
        k = (q_min + q_max).div_ceil(2);
    }
    // the interval can also close past its end; stay within [1, p − 1]
    Ok((q_min.min(p - 1), rounds))
}

/// Incremental strategy driven by an arbitrary test oracle.
pub fn estimate_incremental_with<F, A>(p: usize, alpha: f64, max_testable: usize, oracle: F) -> Result<DimensionEstimate>
where
    F: FnMut(usize) -> Result<A>,
    A: Into<OracleAnswer>,
{
    check_alpha(alpha)?;
    let mut rec = Recorder { oracle, alpha, max_testable, visited: Vec::new(), cache: BTreeMap::new() };
    let (q_hat, _) = run_incremental(p, |k| rec.decide(k))?;
    Ok(rec.finish(q_hat, p, Strategy::Incremental))
}

/// Divide-and-conquer strategy driven by an arbitrary test oracle.
pub fn estimate_divide_conquer_with<F, A>(
    p: usize,
    alpha: f64,
    max_testable: usize,
    oracle: F,
) -> Result<DimensionEstimate>
where
    F: FnMut(usize) -> Result<A>,
    A: Into<OracleAnswer>,
{
    check_alpha(alpha)?;
    let mut rec = Recorder { oracle, alpha, max_testable, visited: Vec::new(), cache: BTreeMap::new() };
    let (q_hat, _) = run_divide_conquer(p, |k| rec.decide(k))?;
    Ok(rec.finish(q_hat, p, Strategy::DivideConquer))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Seed used for the test of H₀ₖ under a master seed. Depends only on k,
/// so both strategies see the same p-value for the same k.
pub fn seed_for_k(master_seed: u64, k: usize) -> u64 {
    rng::derive_seed(master_seed, k as u64)
}

fn bootstrap_oracle<'a>(
    x: &'a DataMatrix,
    cfg: &'a BootstrapConfig,
    outcomes: &'a mut Vec<TestOutcome>,
) -> impl FnMut(usize) -> Result<OracleAnswer> + 'a {
    move |k| {
        let test_cfg = cfg.with_seed(seed_for_k(cfg.seed, k));
        let outcome = bootstrap_test(x, k, &test_cfg)?;
        let answer = OracleAnswer { p_value: outcome.p_value, statistic: Some(outcome.statistic) };
        log::info!("H0 k = {k}: statistic {:.6}, p-value {:.4}", outcome.statistic, outcome.p_value);
        outcomes.push(outcome);
        Ok(answer)
    }
}

/// Incremental estimate of q with bootstrap tests. The full test outcomes
/// are returned alongside, in test order.
pub fn estimate_incremental(
    x: &DataMatrix,
    cfg: &BootstrapConfig,
    alpha: f64,
) -> Result<(DimensionEstimate, Vec<TestOutcome>)> {
    cfg.validate()?;
    let mut outcomes = Vec::new();
    let est = estimate_incremental_with(x.p(), alpha, cfg.max_testable_k(x.p()), bootstrap_oracle(x, cfg, &mut outcomes))?;
    Ok((est, outcomes))
}

/// Divide-and-conquer estimate of q with bootstrap tests.
pub fn estimate_divide_conquer(
    x: &DataMatrix,
    cfg: &BootstrapConfig,
    alpha: f64,
) -> Result<(DimensionEstimate, Vec<TestOutcome>)> {
    cfg.validate()?;
    let mut outcomes = Vec::new();
    let est =
        estimate_divide_conquer_with(x.p(), alpha, cfg.max_testable_k(x.p()), bootstrap_oracle(x, cfg, &mut outcomes))?;
    Ok((est, outcomes))
}

pub fn estimate(
    x: &DataMatrix,
    cfg: &BootstrapConfig,
    alpha: f64,
    strategy: Strategy,
) -> Result<(DimensionEstimate, Vec<TestOutcome>)> {
    match strategy {
        Strategy::Incremental => estimate_incremental(x, cfg, alpha),
        Strategy::DivideConquer => estimate_divide_conquer(x, cfg, alpha),
    }
}
