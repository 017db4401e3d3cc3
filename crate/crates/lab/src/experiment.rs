//! Matched (finite-N simulation, state evolution, order-parameter) runs.
//!
//! All three tracks apply the same denoiser list whenever the `tau` source is
//! a prediction: the list is realized once along the chosen prediction's
//! `tau_t` and then handed unchanged to the other two. With the empirical
//! source each track builds its denoisers from its own `tau_t`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sparsedyn_core::rng::split_seed;
use sparsedyn_core::schedule::realize;
use sparsedyn_core::{
    generate_instance, gfa_run, run_amp, run_ist, run_oamp, se_run, Denoiser, DenoiserSchedule,
    FixedSchedule, GfaModel, McConfig, OrderParameters, SeModel, SeTrace, TauSource,
    TrajectoryRecord,
};

use crate::config::{AlgorithmChoice, ExperimentConfig, SweepAxis, TauChoice};
use crate::error::{LabError, Result};
use crate::executor::RayonExecutor;

/// Index passed to [`split_seed`] for the order-parameter Monte Carlo seed;
/// trial `i` uses index `i`.
pub const GFA_SEED_INDEX: u64 = 1 << 63;

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    split_seed(master, trial as u64)
}

pub fn gfa_seed(master: u64) -> u64 {
    split_seed(master, GFA_SEED_INDEX)
}

/// One iteration of the comparison. Gaps are relative to the state-evolution
/// prediction; `gfa_z` is `|EMP - GFA|` in units of the combined stderr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: usize,
    pub emp_mse: f64,
    /// Trial-to-trial standard error of `emp_mse`.
    pub emp_stderr: f64,
    /// Mean residual energy `||z^(t)||^2 / M`.
    pub emp_tau2: f64,
    pub se_sigma2: f64,
    pub se_tau2: f64,
    pub gfa_mse: Option<f64>,
    pub gfa_stderr: Option<f64>,
    pub gfa_tau2: Option<f64>,
    pub rel_gap_se: f64,
    pub gfa_rel_gap_se: Option<f64>,
    pub gfa_z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub version: String,
    pub wall_time_seconds: f64,
    pub workers: usize,
    pub trial_seeds: Vec<u64>,
    pub gfa_seeds: Vec<u64>,
    pub succeeded_trials: usize,
    pub failed_trials: Vec<FailedTrial>,
    /// Why the order-parameter track is absent, if it is.
    pub gfa_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ComparisonRow>,
    pub metadata: Metadata,
    pub se: SeTrace,
    pub gfa: Option<GfaEnsemble>,
    /// The shared denoiser list (absent for the empirical `tau` source).
    pub denoisers: Option<Vec<Denoiser>>,
}

/// Outcome of one declared acceptance threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl ComparisonReport {
    pub fn max_rel_gap_se(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_gap_se).fold(0.0, f64::max)
    }

    pub fn max_gfa_z(&self) -> Option<f64> {
        self.rows
            .iter()
            .map(|r| r.gfa_z)
            .try_fold(0.0f64, |acc, z| z.map(|z| acc.max(z)))
    }

    /// The thresholds declared in the configuration, evaluated.
    pub fn thresholds(&self) -> Vec<ThresholdCheck> {
        let mut out = Vec::new();
        if let Some(limit) = self.config.max_rel_gap_se {
            let value = self.max_rel_gap_se();
            out.push(ThresholdCheck {
                name: "max_rel_gap_se".into(),
                value,
                limit,
                passed: value <= limit,
            });
        }
        if let Some(limit) = self.config.max_gfa_z {
            let value = self.max_gfa_z().unwrap_or(f64::INFINITY);
            out.push(ThresholdCheck {
                name: "max_gfa_z".into(),
                value,
                limit,
                passed: value <= limit,
            });
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.thresholds().iter().all(|c| c.passed)
    }

    /// The report as CSV with header `t,source,mse,stderr,tau2,extra`; `extra`
    /// is the relative gap to the state-evolution prediction.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            push_row(
                &mut out,
                r.t,
                "EMP",
                r.emp_mse,
                r.emp_stderr,
                r.emp_tau2,
                r.rel_gap_se,
            );
            push_row(&mut out, r.t, "SE", r.se_sigma2, 0.0, r.se_tau2, 0.0);
            if let (Some(m), Some(s), Some(t2), Some(g)) =
                (r.gfa_mse, r.gfa_stderr, r.gfa_tau2, r.gfa_rel_gap_se)
            {
                push_row(&mut out, r.t, "GFA", m, s, t2, g);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes to JSON")
    }
}

pub const CSV_HEADER: &str = "t,source,mse,stderr,tau2,extra";

fn push_row(
    out: &mut String,
    t: usize,
    source: &str,
    mse: f64,
    stderr: f64,
    tau2: f64,
    extra: f64,
) {
    use std::fmt::Write;
    let _ = writeln!(out, "{t},{source},{mse},{stderr},{tau2},{extra}");
}

/// State-evolution trace in the harness CSV schema.
pub fn se_csv(trace: &SeTrace) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (t, (s, t2)) in trace.sigma2.iter().zip(&trace.tau2).enumerate() {
        push_row(&mut out, t, "SE", *s, 0.0, *t2, 0.0);
    }
    out
}

/// Order-parameter MSE sequence in the harness CSV schema; `extra` holds the
/// direct estimate `mean((x0 - x)^2)` of the same batch.
pub fn gfa_csv(op: &OrderParameters) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for t in 0..op.mse.len() {
        push_row(
            &mut out,
            t,
            "GFA",
            op.mse[t],
            op.mse_stderr[t],
            op.tau2[t],
            op.mse_direct[t],
        );
    }
    out
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

pub fn se_trace<S: DenoiserSchedule + ?Sized>(
    config: &ExperimentConfig,
    schedule: &S,
) -> Result<SeTrace> {
    let prior = config.prior()?;
    let rule = config.quadrature_rule()?;
    let model = SeModel {
        prior: &prior,
        delta: config.effective_delta(),
        sigma0_2: config.sigma0_2,
        rule: &rule,
    };
    Ok(se_run(&model, schedule, config.iterations)?)
}

pub fn gfa_trace<S: DenoiserSchedule + ?Sized>(
    config: &ExperimentConfig,
    schedule: &S,
    executor: &RayonExecutor,
) -> Result<OrderParameters> {
    let model = GfaModel {
        prior: config.prior()?,
        delta: config.effective_delta(),
        sigma0_2: config.sigma0_2,
    };
    let mc = McConfig {
        chunks: config.mc_chunks,
        ..McConfig::new(config.mc_samples, gfa_seed(config.seed))
    };
    Ok(gfa_run(&model, schedule, config.iterations, &mc, executor)?)
}

/// Seed of order-parameter replicate `k`; replicate 0 uses [`gfa_seed`].
pub fn gfa_replicate_seed(master: u64, k: usize) -> u64 {
    match k {
        0 => gfa_seed(master),
        _ => split_seed(gfa_seed(master), k as u64),
    }
}

/// Independent runs of the order-parameter recursion.
///
/// Each run feeds its own Monte Carlo estimates back into `R`, so its error
/// at late iterations is mostly noise inherited from earlier horizons, which
/// the within-batch standard error does not see. The spread over replicates
/// does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfaEnsemble {
    pub seeds: Vec<u64>,
    pub replicate_mse: Vec<Vec<f64>>,
    pub mse: Vec<f64>,
    /// Replicate standard deviation over `sqrt(K)`; the within-batch error of
    /// the single run when `K = 1`.
    pub mse_stderr: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Full order parameters of replicate 0.
    pub first: OrderParameters,
}

pub fn gfa_ensemble<S: DenoiserSchedule + ?Sized>(
    config: &ExperimentConfig,
    schedule: &S,
    executor: &RayonExecutor,
) -> Result<GfaEnsemble> {
    let model = GfaModel {
        prior: config.prior()?,
        delta: config.effective_delta(),
        sigma0_2: config.sigma0_2,
    };
    let seeds: Vec<u64> = (0..config.gfa_replicates)
        .map(|k| gfa_replicate_seed(config.seed, k))
        .collect();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let mc = McConfig {
            chunks: config.mc_chunks,
            ..McConfig::new(config.mc_samples, seed)
        };
        runs.push(gfa_run(&model, schedule, config.iterations, &mc, executor)?);
    }
    let first = runs[0].clone();
    let per_t = |f: &dyn Fn(&OrderParameters) -> f64| -> (f64, f64) {
        mean_stderr(&runs.iter().map(f).collect::<Vec<_>>())
    };
    let mut mse = Vec::new();
    let mut mse_stderr = Vec::new();
    let mut tau2 = Vec::new();
    for t in 0..=config.iterations {
        let (m, se) = per_t(&|op| op.mse[t]);
        mse.push(m);
        mse_stderr.push(if runs.len() > 1 {
            se
        } else {
            first.mse_stderr[t]
        });
        tau2.push(per_t(&|op| op.tau2[t]).0);
    }
    Ok(GfaEnsemble {
        seeds,
        replicate_mse: runs.into_iter().map(|op| op.mse).collect(),
        mse,
        mse_stderr,
        tau2,
        first,
    })
}

/// Runs one finite-N trial.
pub fn run_trial(
    config: &ExperimentConfig,
    seed: u64,
    shared: Option<&[f64]>,
) -> Result<TrajectoryRecord> {
    let prior = config.prior()?;
    let inst = generate_instance(config.n, config.delta, config.sigma0_2, &prior, seed)?;
    let tau = match shared {
        Some(taus) => TauSource::Given(taus.to_vec()),
        None => TauSource::Empirical,
    };
    let t = config.iterations;
    let rec = match config.algorithm {
        AlgorithmChoice::Ist => run_ist(&inst, &config.applied_rule()?, &tau, t)?,
        AlgorithmChoice::Amp => run_amp(&inst, &config.applied_rule()?, &tau, t)?,
        AlgorithmChoice::Oamp => run_oamp(
            &inst,
            &config.base_rule()?,
            &tau,
            config.scale,
            &config.quadrature_rule()?,
            t,
        )?,
    };
    Ok(rec)
}

/// Runs `trials` seeded trajectories, one state-evolution trace and (unless
/// skipped or not applicable) one order-parameter recursion, and aggregates
/// them. Deterministic for a fixed configuration, whatever the worker count.
pub fn run_experiment(
    config: &ExperimentConfig,
    executor: &RayonExecutor,
) -> Result<ComparisonReport> {
    config.validate()?;
    let start = Instant::now();
    let applied = config.applied_rule()?;
    let horizon = config.iterations;
    let gfa_skipped = if config.skip_gfa {
        Some("skip_gfa is set".to_string())
    } else if config.algorithm == AlgorithmChoice::Amp {
        Some("the order-parameter recursion describes IST/OAMP, not AMP".to_string())
    } else {
        None
    };
    if config.tau_source == TauChoice::Gfa && gfa_skipped.is_some() {
        return Err(LabError::InvalidConfig {
            field: "tau_source",
            reason: "`gfa` is not available for this algorithm".into(),
        });
    }

    // `shared` holds the realized list and the `tau_t` it was built at.
    type Shared = Option<(FixedSchedule, Vec<f64>)>;
    let (se, gfa, shared): (SeTrace, Option<GfaEnsemble>, Shared) = match config.tau_source {
        TauChoice::Se => {
            let se = se_trace(config, &applied)?;
            let taus = se.taus()[..horizon].to_vec();
            let fixed = realize(&applied, &taus)?;
            let gfa = match gfa_skipped {
                None => Some(gfa_ensemble(config, &fixed, executor)?),
                Some(_) => None,
            };
            (se, gfa, Some((fixed, taus)))
        }
        TauChoice::Gfa => {
            let op = gfa_trace(config, &applied, executor)?;
            let taus: Vec<f64> = op.tau2[..horizon]
                .iter()
                .map(|t| t.max(0.0).sqrt())
                .collect();
            let fixed = realize(&applied, &taus)?;
            let se = se_trace(config, &fixed)?;
            let gfa = gfa_ensemble(config, &fixed, executor)?;
            (se, Some(gfa), Some((fixed, taus)))
        }
        TauChoice::Empirical => {
            let se = se_trace(config, &applied)?;
            let gfa = match gfa_skipped {
                None => Some(gfa_ensemble(config, &applied, executor)?),
                Some(_) => None,
            };
            (se, gfa, None)
        }
    };
    let shared_taus = shared.as_ref().map(|(_, taus)| taus.as_slice());

    let seeds: Vec<u64> = (0..config.trials)
        .map(|i| trial_seed(config.seed, i))
        .collect();
    let outcomes = executor.map(config.trials, |i| run_trial(config, seeds[i], shared_taus));
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(e) => failed.push(FailedTrial {
                trial: i,
                seed: seeds[i],
                error: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        return Err(LabError::AllTrialsFailed(config.trials));
    }

    let rows = (0..=horizon)
        .map(|t| {
            let mses: Vec<f64> = records.iter().map(|r| r.mse[t]).collect();
            let taus: Vec<f64> = records.iter().map(|r| r.residual_energy[t]).collect();
            let (emp_mse, emp_stderr) = mean_stderr(&mses);
            let emp_tau2 = mean_stderr(&taus).0;
            let se_sigma2 = se.sigma2[t];
            let gap = |v: f64| {
                if se_sigma2 > 0.0 {
                    (v - se_sigma2).abs() / se_sigma2
                } else {
                    (v - se_sigma2).abs()
                }
            };
            let (gfa_mse, gfa_stderr, gfa_tau2) = match &gfa {
                Some(g) => (Some(g.mse[t]), Some(g.mse_stderr[t]), Some(g.tau2[t])),
                None => (None, None, None),
            };
            let gfa_z = gfa_mse.zip(gfa_stderr).map(|(m, s)| {
                let combined = (emp_stderr * emp_stderr + s * s).sqrt();
                let d = (emp_mse - m).abs();
                if combined > 0.0 {
                    d / combined
                } else if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            });
            ComparisonRow {
                t,
                emp_mse,
                emp_stderr,
                emp_tau2,
                se_sigma2,
                se_tau2: se.tau2[t],
                gfa_mse,
                gfa_stderr,
                gfa_tau2,
                rel_gap_se: gap(emp_mse),
                gfa_rel_gap_se: gfa_mse.map(gap),
                gfa_z,
            }
        })
        .collect();

    Ok(ComparisonReport {
        config: config.clone(),
        rows,
        metadata: Metadata {
            config_hash: config.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: start.elapsed().as_secs_f64(),
            workers: executor.workers(),
            trial_seeds: seeds,
            gfa_seeds: gfa.as_ref().map(|g| g.seeds.clone()).unwrap_or_default(),
            succeeded_trials: records.len(),
            failed_trials: failed,
            gfa_skipped,
        },
        se,
        gfa,
        denoisers: shared.map(|(f, _)| f.0),
    })
}

/// Writes the CSV and JSON artifacts named in the configuration, plus a
/// `failed-trials` manifest next to the CSV (or JSON) when any trial failed.
pub fn write_outputs(report: &ComparisonReport) -> Result<()> {
    if let Some(path) = &report.config.csv {
        write_file(path, &report.to_csv())?;
    }
    if let Some(path) = &report.config.json {
        write_file(path, &report.to_json())?;
    }
    if !report.metadata.failed_trials.is_empty() {
        if let Some(base) = report.config.csv.as_ref().or(report.config.json.as_ref()) {
            let manifest = base.with_extension("failed-trials.json");
            let text = serde_json::to_string_pretty(&report.metadata.failed_trials)
                .expect("manifest serializes");
            write_file(&manifest, &text)?;
        }
    }
    Ok(())
}

pub fn write_file(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

/// One point of a sweep; failures are kept per point.
#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub config: ExperimentConfig,
    pub outcome: Result<ComparisonReport>,
}

/// Configuration of point `index` of a sweep: the axis set to `value` and
/// the seed derived from the master seed.
pub fn sweep_point_config(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
    index: usize,
) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.set_axis(axis, value);
    cfg.seed = split_seed(base.seed, index as u64);
    cfg.csv = None;
    cfg.json = None;
    cfg
}

pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    executor: &RayonExecutor,
) -> Vec<SweepPoint> {
    values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let config = sweep_point_config(base, axis, value, i);
            let outcome = run_experiment(&config, executor);
            SweepPoint {
                value,
                config,
                outcome,
            }
        })
        .collect()
}

pub const SWEEP_HEADER: &str =
    "axis,value,seed,t,emp_mse,emp_stderr,se_mse,gfa_mse,gfa_stderr,rel_gap_se,status";

/// Final-iteration summary, one line per sweep point.
pub fn sweep_summary_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    use std::fmt::Write;
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        match &p.outcome {
            Ok(rep) => {
                let r = rep.rows.last().expect("at least one row");
                let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{axis},{},{},{},{},{},{},{},{},{},ok",
                    p.value,
                    p.config.seed,
                    r.t,
                    r.emp_mse,
                    r.emp_stderr,
                    r.se_sigma2,
                    opt(r.gfa_mse),
                    opt(r.gfa_stderr),
                    r.rel_gap_se
                );
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(
                    out,
                    "{axis},{},{},,,,,,,,error: {msg}",
                    p.value, p.config.seed
                );
            }
        }
    }
    out
}
