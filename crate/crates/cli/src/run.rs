use std::path::Path;

use ngdim_core::estimator;
use ngdim_core::hypothesis::{self, BootstrapConfig, StatisticKind, TestOutcome};
use ngdim_core::scatter::{DataMatrix, ScatterPairSpec, ScatterSpec, Symmetrization};
use ngdim_core::simulation::{self, EstimatorExperiment, Method, ModelSpec, RejectionExperiment};
use ngdim_core::unmixing::{self, ModelAssumption};
use serde::Serialize;

use crate::args::{
    BootstrapArgs, Command, DataArgs, EstimateArgs, ExperimentArg, MethodChoice, PairArgs, RunConfig, SimulateArgs,
    TestArgs, UnmixArgs,
};
use crate::error::CliError;
use crate::ingest::{csv_write_error, ingest_csv, write_matrix_csv};
use crate::report::{self, table, EstimateResult, InputEcho, Report, SimulateResult, TestEntry, TestResult, UnmixReport};

/// Run one command inside a pool of the configured size and return the
/// text written to standard output.
pub fn run_command(cfg: &RunConfig) -> Result<String, CliError> {
    let threads = match cfg.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cfg.command {
        Command::Test(a) => run_test(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Unmix(a) => run_unmix(a),
    })
}

fn load_data(data: &DataArgs, seed: u64) -> Result<(DataMatrix, InputEcho), CliError> {
    match (&data.input, data.data_model) {
        (Some(path), None) => {
            let x = ingest_csv(path)?;
            let echo = InputEcho {
                source: "csv",
                path: Some(path.display().to_string()),
                data_model: None,
                data_seed: None,
                n: x.n(),
                p: x.p(),
            };
            Ok((x, echo))
        }
        (None, Some(model)) => {
            let n = data.n.ok_or_else(|| CliError::Usage("--data-model needs --n".into()))?;
            let data_seed = data.data_seed.unwrap_or(seed);
            let x = ModelSpec::new(model).with_seed(data_seed).sample(n)?.x;
            let echo = InputEcho {
                source: "model",
                path: None,
                data_model: Some(model),
                data_seed: Some(data_seed.to_string()),
                n: x.n(),
                p: x.p(),
            };
            Ok((x, echo))
        }
        _ => Err(CliError::Usage("exactly one of --input or --data-model is required".into())),
    }
}

/// Scatter pair and statistic for a method selection.
fn resolve_pair(pair: &PairArgs, seed: u64) -> Result<(ScatterPairSpec, StatisticKind), CliError> {
    let (mut spec, statistic) = match pair.method {
        MethodChoice::Named(m) => (m.scatter(seed), m.statistic()),
        MethodChoice::Custom => {
            let need = |s: Option<ScatterSpec>, flag: &str| {
                s.ok_or_else(|| CliError::Usage(format!("--method custom needs {flag}")))
            };
            let seeded = |mut s: ScatterSpec| {
                if let Symmetrization::Incomplete { d, .. } = s.symmetrization {
                    s.symmetrization = Symmetrization::Incomplete { d, seed };
                }
                s
            };
            let s1 = seeded(need(pair.s1, "--s1")?);
            let s2 = seeded(need(pair.s2, "--s2")?);
            (ScatterPairSpec::new(s1, s2), StatisticKind::Variance)
        }
    };
    spec.location = pair.location.into();
    Ok((spec, statistic))
}

fn bootstrap_config(pair: &PairArgs, boot: &BootstrapArgs) -> Result<BootstrapConfig, CliError> {
    check_alpha(boot.alpha)?;
    let (scatter, statistic) = resolve_pair(pair, boot.seed)?;
    let cfg = BootstrapConfig {
        model: boot.model.into(),
        noise_strategy: boot.noise.into(),
        replicates: boot.replicates as usize,
        seed: boot.seed,
        scatter,
        statistic,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ngdim_core::Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")).into())
    }
}

fn strategy_label(s: estimator::Strategy) -> &'static str {
    match s {
        estimator::Strategy::Incremental => "incremental",
        estimator::Strategy::DivideConquer => "divide-conquer",
    }
}

fn decision(rejected: bool) -> &'static str {
    if rejected {
        "reject"
    } else {
        "accept"
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_write_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct ReplicateRow {
    k: usize,
    replicate: usize,
    statistic: f64,
}

fn replicate_rows(outcomes: &[TestOutcome]) -> Vec<ReplicateRow> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.replicates
                .iter()
                .enumerate()
                .map(move |(i, &statistic)| ReplicateRow { k: o.k, replicate: i + 1, statistic })
        })
        .collect()
}

#[derive(Serialize)]
struct TestEcho {
    input: InputEcho,
    method: String,
    k: usize,
    alpha: f64,
    asymptotic: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    tk_split: Option<hypothesis::TkSplit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelAssumption>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapConfig>,
}

fn run_test(a: &TestArgs) -> Result<String, CliError> {
    let (x, input) = load_data(&a.data, a.boot.seed)?;
    check_alpha(a.boot.alpha)?;
    let model: ModelAssumption = a.boot.model.into();

    let (outcomes, bootstrap, tk_split) = if a.asymptotic {
        if !matches!(a.pair.method, MethodChoice::Named(Method::Fobi | Method::CovCov4)) {
            return Err(CliError::Usage("--asymptotic applies to the fobi and cov-cov4 methods only".into()));
        }
        let split = a.tk_split.into();
        let tk = hypothesis::asymptotic_test_fobi(&x, a.k, model, a.boot.seed)?;
        let (t1, t2) = hypothesis::chi2_tests_tk1_tk2(&x, a.k, model, split)?;
        (vec![tk, t1, t2], None, Some(split))
    } else {
        let cfg = bootstrap_config(&a.pair, &a.boot)?;
        (vec![hypothesis::bootstrap_test(&x, a.k, &cfg)?], Some(cfg), None)
    };

    let alpha = a.boot.alpha;
    let mut text = format!(
        "H0: signal dimension k = {} (method {}, n = {}, p = {}, seed {})\n\n",
        a.k,
        a.pair.method,
        x.n(),
        x.p(),
        a.boot.seed
    );
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                report::method_label(o.method).to_string(),
                format!("{:.6}", o.statistic),
                format!("{:.4}", o.p_value),
                decision(o.rejects(alpha)).to_string(),
            ]
        })
        .collect();
    text += &table(&["test", "statistic", "p-value", &format!("decision (alpha {alpha})")], &rows);
    if let Some(s) = outcomes[0].sigma1_hat {
        text += &format!("\nsigma1 estimate: {s:.6}\n");
    }
    if outcomes[0].failures > 0 {
        text += &format!("\nredrawn replicates: {}\n", outcomes[0].failures);
    }

    if let Some(path) = &a.out.csv {
        write_csv(path, replicate_rows(&outcomes))?;
    }
    if let Some(path) = &a.out.report {
        let config = TestEcho {
            input,
            method: a.pair.method.to_string(),
            k: a.k,
            alpha,
            asymptotic: a.asymptotic,
            tk_split,
            model: a.asymptotic.then_some(model),
            bootstrap,
        };
        let tests = outcomes.into_iter().map(|o| TestEntry { rejected: o.rejects(alpha), outcome: o }).collect();
        Report::new("test", a.boot.seed, config, TestResult { alpha, tests }).write(path)?;
    }
    Ok(text)
}

#[derive(Serialize)]
struct EstimateEcho {
    input: InputEcho,
    method: String,
    strategy: estimator::Strategy,
    alpha: f64,
    bootstrap: BootstrapConfig,
}

fn run_estimate(a: &EstimateArgs) -> Result<String, CliError> {
    let (x, input) = load_data(&a.data, a.boot.seed)?;
    let cfg = bootstrap_config(&a.pair, &a.boot)?;
    let strategy = a.strategy.into();
    let (est, outcomes) = estimator::estimate(&x, &cfg, a.boot.alpha, strategy)?;

    let mut text = format!(
        "estimated signal dimension: {}{} (method {}, {} strategy, alpha {}, n = {}, p = {})\n\n",
        est.q_hat,
        if est.saturated { " or more" } else { "" },
        a.pair.method,
        strategy_label(strategy),
        a.boot.alpha,
        x.n(),
        x.p()
    );
    let rows: Vec<Vec<String>> = est
        .visited
        .iter()
        .map(|v| {
            vec![
                v.k.to_string(),
                v.statistic.map_or("-".into(), |s| format!("{s:.6}")),
                v.p_value.map_or("-".into(), |p| format!("{p:.4}")),
                format!("{:?}", v.decision).to_lowercase(),
            ]
        })
        .collect();
    text += &table(&["k", "statistic", "p-value", "decision"], &rows);

    if let Some(path) = &a.out.csv {
        write_csv(path, replicate_rows(&outcomes))?;
    }
    if let Some(path) = &a.out.report {
        let config = EstimateEcho {
            input,
            method: a.pair.method.to_string(),
            strategy,
            alpha: a.boot.alpha,
            bootstrap: cfg,
        };
        Report::new("estimate", a.boot.seed, config, EstimateResult { estimate: est, tests: outcomes }).write(path)?;
    }
    Ok(text)
}

#[derive(Serialize)]
#[serde(untagged)]
enum SimulateEcho {
    Rejection { experiments: Vec<RejectionExperiment> },
    Estimator { experiments: Vec<EstimatorExperiment> },
}

#[derive(Serialize)]
struct RecordRow<'a> {
    model: String,
    n: usize,
    rep: usize,
    seed: u64,
    method: &'a str,
    k: usize,
    statistic: f64,
    p_value: f64,
    decision: &'static str,
}

#[derive(Serialize)]
struct EstimateRow<'a> {
    model: String,
    n: usize,
    rep: usize,
    seed: u64,
    method: &'a str,
    strategy: estimator::Strategy,
    q_hat: usize,
    saturated: bool,
    tests: usize,
}

fn run_simulate(a: &SimulateArgs) -> Result<String, CliError> {
    check_alpha(a.alpha)?;
    let assumption = a.assumption.into();
    let noise = a.noise.into();
    let experiment = if a.full { ExperimentArg::Rejection } else { a.experiment };

    match experiment {
        ExperimentArg::Rejection => {
            let exps: Vec<RejectionExperiment> = if a.full {
                log::warn!(
                    "--full runs 1000 repetitions at n = 500, 1000, 2000 and 4000 for every method; expect days of compute"
                );
                simulation::full_grid(a.model, assumption, a.seed)
                    .into_iter()
                    .map(|e| RejectionExperiment { noise_strategy: noise, alpha: a.alpha, ..e })
                    .collect()
            } else {
                vec![RejectionExperiment {
                    assumption,
                    noise_strategy: noise,
                    reps: a.reps,
                    replicates: a.replicates as usize,
                    alpha: a.alpha,
                    master_seed: a.seed,
                    ..RejectionExperiment::new(a.model, a.n, a.ks.clone(), a.methods.clone())
                }]
            };
            let reports = exps
                .iter()
                .map(simulation::rejection_rate_experiment)
                .collect::<Result<Vec<_>, _>>()?;

            let mut rows = Vec::new();
            for (exp, rep) in exps.iter().zip(&reports) {
                for r in &rep.rows {
                    rows.push(vec![
                        r.model.to_string(),
                        r.n.to_string(),
                        r.method.clone(),
                        r.k.to_string(),
                        format!("{:.3}", r.rejection_rate),
                        format!("{}/{}", r.rejections, r.repetitions),
                        r.replicates.to_string(),
                    ]);
                }
                if rep.failures > 0 {
                    log::warn!("{} of {} repetitions failed at n = {}", rep.failures, rep.attempted, exp.n);
                }
            }
            let mut text = format!("rejection rates at alpha {} (seed {})\n\n", a.alpha, a.seed);
            text += &table(&["model", "n", "method", "k", "rate", "rejections", "M"], &rows);

            if let Some(path) = &a.out.csv {
                let rows = exps.iter().zip(&reports).flat_map(|(exp, rep)| {
                    rep.records.iter().map(move |r| RecordRow {
                        model: exp.model.name.to_string(),
                        n: exp.n,
                        rep: r.rep,
                        seed: r.seed,
                        method: &r.method,
                        k: r.k,
                        statistic: r.statistic,
                        p_value: r.p_value,
                        decision: decision(r.rejected),
                    })
                });
                write_csv(path, rows)?;
            }
            if let Some(path) = &a.out.report {
                Report::new(
                    "simulate",
                    a.seed,
                    SimulateEcho::Rejection { experiments: exps.clone() },
                    SimulateResult::Rejection { experiments: reports },
                )
                .write(path)?;
            }
            Ok(text)
        }
        ExperimentArg::Estimator => {
            let exp = EstimatorExperiment {
                assumption,
                noise_strategy: noise,
                reps: a.reps,
                replicates: a.replicates as usize,
                alpha: a.alpha,
                master_seed: a.seed,
                ..EstimatorExperiment::new(
                    a.model,
                    a.n,
                    a.strategies.iter().map(|&s| s.into()).collect(),
                    a.methods.clone(),
                )
            };
            let rep = simulation::estimator_experiment(&exp)?;
            let p = exp.model.p;
            let mut header = vec!["model".to_string(), "n".into(), "method".into(), "strategy".into()];
            header.extend((0..p).map(|q| format!("q={q}")));
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| {
                    let mut row = vec![r.model.to_string(), r.n.to_string(), r.method.clone(), strategy_label(r.strategy).into()];
                    row.extend((0..p).map(|q| format!("{:.2}", r.frequency(q))));
                    row
                })
                .collect();
            let mut text = format!(
                "frequencies of the estimated dimension over {} repetitions, alpha {} (seed {})\n\n",
                exp.reps, a.alpha, a.seed
            );
            text += &table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows);
            if rep.failures > 0 {
                log::warn!("{} of {} repetitions failed", rep.failures, rep.attempted);
            }

            if let Some(path) = &a.out.csv {
                let rows = rep.records.iter().map(|r| EstimateRow {
                    model: exp.model.name.to_string(),
                    n: exp.n,
                    rep: r.rep,
                    seed: r.seed,
                    method: &r.method,
                    strategy: r.strategy,
                    q_hat: r.q_hat,
                    saturated: r.saturated,
                    tests: r.tests,
                });
                write_csv(path, rows)?;
            }
            if let Some(path) = &a.out.report {
                Report::new(
                    "simulate",
                    a.seed,
                    SimulateEcho::Estimator { experiments: vec![exp] },
                    SimulateResult::Estimator { experiments: vec![rep] },
                )
                .write(path)?;
            }
            Ok(text)
        }
    }
}

#[derive(Serialize)]
struct UnmixEcho {
    input: InputEcho,
    method: String,
    scatter: ScatterPairSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    output: String,
}

fn run_unmix(a: &UnmixArgs) -> Result<String, CliError> {
    let (x, input) = load_data(&a.data, a.seed)?;
    let (scatter, _) = resolve_pair(&a.pair, a.seed)?;
    let mut fit = unmixing::two_scatter_unmixing(&x, &scatter)?;
    if let Some(k) = a.k {
        fit = fit.partitioned(k)?;
    }
    let z = unmixing::latent_components(&x, &fit)?;
    write_matrix_csv(&a.output, &z, "z")?;

    let rows: Vec<Vec<String>> = fit
        .d
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let block = match fit.noise_index {
                Some(j) if i >= j => "noise",
                Some(_) => "signal",
                None => "",
            };
            vec![format!("z{}", i + 1), format!("{d:.6}"), block.to_string()]
        })
        .collect();
    let mut text = format!("unmixing with {} (n = {}, p = {})\n\n", a.pair.method, x.n(), x.p());
    text += &table(&["component", "eigenvalue", "block"], &rows);
    text += &format!("\nlatent components written to {}\n", a.output.display());

    if let Some(path) = &a.report {
        let config = UnmixEcho {
            input,
            method: a.pair.method.to_string(),
            scatter,
            k: a.k,
            output: a.output.display().to_string(),
        };
        let result = UnmixReport {
            w: fit.w.row_iter().map(|r| r.iter().copied().collect()).collect(),
            d: fit.d.iter().copied().collect(),
            location: fit.location.as_vector().iter().copied().collect(),
            ordering: fit.ordering.clone(),
            noise_index: fit.noise_index,
        };
        Report::new("unmix", a.seed, config, result).write(path)?;
    }
    Ok(text)
}
