use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparsedyn::config::{
    AlgorithmChoice, ExperimentConfig, QuadratureChoice, SweepAxis, TauChoice,
};
use sparsedyn::error::{LabError, Result};
use sparsedyn::executor::RayonExecutor;
use sparsedyn::experiment::{
    gfa_csv, gfa_seed, gfa_trace, run_experiment, se_csv, se_trace, sweep, sweep_summary_csv,
    trial_seed, write_file, write_outputs,
};
use sparsedyn::instance_io;
use sparsedyn_core::denoiser::expected_derivative;
use sparsedyn_core::{
    check_divergence_free, generate_instance, verify_lemma2, DenoiserKind, GfaModel, McConfig,
    ScaleMode,
};

/// Numerical laboratory for IST, AMP and OAMP: finite-N simulation, state
/// evolution and the order-parameter recursion, side by side.
///
/// Exit status: 0 when every declared threshold passes, 1 when one fails,
/// 2 on errors. The worker count is read from SPARSE_DYN_WORKERS.
#[derive(Parser)]
#[command(name = "sparsedyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trials, state evolution and the order-parameter recursion; write CSV/JSON.
    Run(ConfigArgs),
    /// Repeat `run` over values of one parameter and write a summary CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// delta, epsilon, sigma0_2 or kappa.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Summary CSV (final-iteration MSE per value); stdout if absent.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Directory for per-point CSV and JSON reports.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// State-evolution trace only.
    Se(ConfigArgs),
    /// Order-parameter recursion only.
    Gfa(ConfigArgs),
    /// Residual E[eta'] of the divergence-free wrapper on a grid of tau.
    VerifyDf {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 1.0, 2.0])]
        tau: Vec<f64>,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
    },
    /// Response, k and R - D of the recursion under a divergence-free schedule.
    VerifyLemma2 {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = sparsedyn_core::gfa::DEFAULT_REPLICATES)]
        replicates: usize,
        /// Largest allowed |G| in standard errors.
        #[arg(long, default_value_t = 4.0)]
        max_z: f64,
    },
    /// Binary instance files.
    #[command(subcommand)]
    Instance(InstanceCommand),
}

#[derive(Subcommand)]
enum InstanceCommand {
    /// Generate the instance of one trial and write it.
    Dump {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the header and summary statistics of an instance file.
    Info {
        path: PathBuf,
        /// Prior assumed for the signal (not stored in the file).
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        amp_variance: f64,
    },
}

/// A config file plus per-field overrides; flags win over the file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "sigma0-2")]
    sigma0_2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    amp_variance: Option<f64>,
    #[arg(long)]
    algorithm: Option<AlgorithmChoice>,
    /// soft, mmse_bg, df(soft) or df(mmse_bg).
    #[arg(long)]
    denoiser: Option<DenoiserKind>,
    #[arg(long)]
    kappa: Option<f64>,
    /// unit, normalized or a number.
    #[arg(long)]
    scale: Option<ScaleMode>,
    /// se, gfa or empirical.
    #[arg(long)]
    tau_source: Option<TauChoice>,
    #[arg(long, short = 'T')]
    iterations: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    mc_chunks: Option<usize>,
    #[arg(long)]
    gfa_replicates: Option<usize>,
    #[arg(long)]
    skip_gfa: bool,
    #[arg(long)]
    quadrature: Option<QuadratureChoice>,
    #[arg(long)]
    quadrature_order: Option<usize>,
    #[arg(long)]
    quadrature_tolerance: Option<f64>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    max_rel_gap_se: Option<f64>,
    #[arg(long)]
    max_gfa_z: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        apply!(
            n,
            delta,
            sigma0_2,
            epsilon,
            amp_variance,
            algorithm,
            denoiser,
            kappa,
            scale,
            tau_source,
            iterations,
            trials,
            seed,
            mc_samples,
            mc_chunks,
            gfa_replicates,
            quadrature,
            quadrature_order,
            quadrature_tolerance
        );
        if self.skip_gfa {
            cfg.skip_gfa = true;
        }
        if self.csv.is_some() {
            cfg.csv = self.csv.clone();
        }
        if self.json.is_some() {
            cfg.json = self.json.clone();
        }
        if self.max_rel_gap_se.is_some() {
            cfg.max_rel_gap_se = self.max_rel_gap_se;
        }
        if self.max_gfa_z.is_some() {
            cfg.max_gfa_z = self.max_gfa_z;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn verdict(name: &str, passed: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn run(cli: Cli) -> Result<bool> {
    let executor = RayonExecutor::from_env();
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let report = run_experiment(&cfg, &executor)?;
            write_outputs(&report)?;
            if cfg.csv.is_none() {
                print!("{}", report.to_csv());
            }
            for f in &report.metadata.failed_trials {
                eprintln!("trial {} (seed {}) failed: {}", f.trial, f.seed, f.error);
            }
            let mut ok = true;
            for check in report.thresholds() {
                ok &= verdict(
                    &check.name,
                    check.passed,
                    format!("{} (limit {})", check.value, check.limit),
                );
            }
            Ok(ok)
        }
        Command::Sweep {
            config,
            axis,
            values,
            summary,
            out_dir,
        } => {
            let cfg = config.resolve()?;
            let points = sweep(&cfg, axis, &values, &executor);
            emit(summary.as_deref(), &sweep_summary_csv(axis, &points))?;
            let mut ok = true;
            for (i, p) in points.iter().enumerate() {
                match &p.outcome {
                    Ok(rep) => {
                        if let Some(dir) = &out_dir {
                            write_file(&dir.join(format!("point_{i}.csv")), &rep.to_csv())?;
                            write_file(&dir.join(format!("point_{i}.json")), &rep.to_json())?;
                        }
                        for check in rep.thresholds() {
                            ok &= verdict(
                                &format!("{axis}={} {}", p.value, check.name),
                                check.passed,
                                format!("{} (limit {})", check.value, check.limit),
                            );
                        }
                    }
                    Err(e) => {
                        eprintln!("{axis}={}: {e}", p.value);
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
        Command::Se(args) => {
            let cfg = args.resolve()?;
            let trace = se_trace(&cfg, &cfg.applied_rule()?)?;
            emit(cfg.csv.as_deref(), &se_csv(&trace))?;
            if let Some(p) = &cfg.json {
                write_file(
                    p,
                    &serde_json::to_string_pretty(&trace).expect("trace serializes"),
                )?;
            }
            Ok(true)
        }
        Command::Gfa(args) => {
            let cfg = args.resolve()?;
            let op = gfa_trace(&cfg, &cfg.applied_rule()?, &executor)?;
            emit(cfg.csv.as_deref(), &gfa_csv(&op))?;
            if let Some(p) = &cfg.json {
                write_file(
                    p,
                    &serde_json::to_string_pretty(&op).expect("order parameters serialize"),
                )?;
            }
            Ok(true)
        }
        Command::VerifyDf {
            config,
            tau,
            tolerance,
        } => {
            let cfg = config.resolve()?;
            let prior = cfg.prior()?;
            let rule = cfg.quadrature_rule()?;
            let base = cfg.base_rule()?;
            let df = base.divergence_free();
            let mut ok = true;
            println!("tau,denoiser,alpha,residual");
            for &t in &tau {
                let alpha = expected_derivative(&base.base_denoiser(t)?, &prior, t, &rule)?;
                let den = sparsedyn_core::DenoiserSchedule::denoiser(&df, 0, t)?;
                let residual = check_divergence_free(&den, &prior, t, &rule)?;
                println!("{t},{},{alpha:e},{residual:e}", den.name());
                ok &= residual.abs() <= tolerance;
            }
            verdict("verify-df", ok, format!("max |E[eta']| <= {tolerance:e}"));
            Ok(ok)
        }
        Command::VerifyLemma2 {
            config,
            replicates,
            max_z,
        } => {
            let cfg = config.resolve()?;
            let model = GfaModel {
                prior: cfg.prior()?,
                delta: cfg.effective_delta(),
                sigma0_2: cfg.sigma0_2,
            };
            let rule = cfg.base_rule()?.divergence_free();
            let mc = McConfig {
                chunks: cfg.mc_chunks,
                ..McConfig::new(cfg.mc_samples, gfa_seed(cfg.seed))
            };
            let rep = verify_lemma2(&model, &rule, cfg.iterations, &mc, replicates, &executor)?;
            if let Some(p) = &cfg.json {
                write_file(
                    p,
                    &serde_json::to_string_pretty(&rep).expect("report serializes"),
                )?;
            }
            let k_dev = rep
                .k_hat_values
                .iter()
                .map(|k| (k - 1.0).abs())
                .fold(0.0, f64::max);
            let a = verdict(
                "response",
                rep.max_abs_g_over_stderr <= max_z,
                format!(
                    "max |G|/stderr = {} (inductive {}, free {}), max |G| = {}",
                    rep.max_abs_g_over_stderr,
                    rep.inductive_g_over_stderr,
                    rep.free_g_over_stderr,
                    rep.max_abs_g
                ),
            );
            let b = verdict(
                "k_hat",
                k_dev <= 1e-10,
                format!("max |k - 1| = {k_dev}, free run {:?}", rep.k_hat_free),
            );
            let c = verdict(
                "R - D",
                rep.r_minus_d_norm <= 3.0 * rep.r_minus_d_bound,
                format!(
                    "max |R - D| = {} vs 3 x {} (first-order {})",
                    rep.r_minus_d_norm, rep.r_minus_d_bound, rep.r_minus_d_first_order
                ),
            );
            Ok(a && b && c)
        }
        Command::Instance(InstanceCommand::Dump { config, trial, out }) => {
            let cfg = config.resolve()?;
            let inst = generate_instance(
                cfg.n,
                cfg.delta,
                cfg.sigma0_2,
                &cfg.prior()?,
                trial_seed(cfg.seed, trial),
            )?;
            instance_io::dump(&inst, &out)?;
            println!(
                "wrote {} ({} x {}, seed {})",
                out.display(),
                inst.m(),
                inst.n(),
                inst.seed()
            );
            Ok(true)
        }
        Command::Instance(InstanceCommand::Info {
            path,
            epsilon,
            amp_variance,
        }) => {
            let prior = sparsedyn_core::Prior::bernoulli_gaussian(epsilon, amp_variance)?;
            let inst = instance_io::load(&path, prior)?;
            let h = instance_io::read_header_from(&path)?;
            println!("version  {}", h.version);
            println!("M x N    {} x {}", h.m, h.n);
            println!("delta    {}", inst.delta());
            println!("seed     {}", h.seed);
            println!("sigma0_2 {}", h.sigma0_2);
            println!("|x0|^2/N {}", inst.signal_power());
            println!(
                "nonzeros {}",
                inst.x0().iter().filter(|v| **v != 0.0).count()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if let LabError::InvalidConfig { field, .. } = &e {
                eprintln!("(offending field: {field})");
            }
            ExitCode::from(2)
        }
    }
}
