//! Command-line interface: `run`, `oracle` and `sweep` subcommands.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::density::{BandwidthBase, BandwidthRule, KernelKind};
use crate::divergence::{EstimatorConfig, FloorParams};
use crate::error::{AuditError, Result};
use crate::harness::{
    emit, run_experiment, run_sweep, summaries_to_json, ExperimentPlan, SummaryStats,
};
use crate::mechanisms::{default_adjacent_pair, MechanismSpec};
use crate::oracles::{true_divergence, SubsampleFormula};

#[derive(Parser)]
#[command(
    name = "rdp-audit",
    version,
    about = "Estimate statistical lower bounds on the Rényi differential privacy parameter of a mechanism from paired output samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated lower-bound experiments against the closed-form
    /// divergence and report coverage statistics.
    Run(RunArgs),
    /// Print the closed-form divergence for a mechanism and order.
    Oracle(OracleArgs),
    /// Repeat `run` over a list of (tau, beta) floor settings.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct MechanismArgs {
    /// laplace | gaussian | sub-laplace | sub-gaussian | rr | rr-shuffled | ngd
    #[arg(long)]
    mechanism: String,
    /// Database dimension.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Noise scale (laplace/gaussian families) or noise sd (ngd).
    #[arg(long, default_value_t = 5.0)]
    b: f64,
    /// Subsampling inclusion probability.
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Local randomized-response privacy parameter.
    #[arg(long, default_value_t = 1.5)]
    eps0: f64,
    /// Gradient-descent learning rate.
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    /// Gradient-descent iteration count.
    #[arg(long, default_value_t = 10)]
    iters: u32,
    /// Gradient-descent initial parameter.
    #[arg(long, default_value_t = 0.0)]
    theta0: f64,
    /// Normalization for subsampled mechanisms: paper | order-j.
    #[arg(long, default_value = "order-j")]
    subsample_formula: String,
}

impl MechanismArgs {
    fn spec(&self) -> Result<MechanismSpec> {
        let spec = match self.mechanism.as_str() {
            "laplace" => MechanismSpec::Laplace { b: self.b },
            "gaussian" => MechanismSpec::Gaussian { b: self.b },
            "sub-laplace" => MechanismSpec::SubsampledLaplace { b: self.b, gamma: self.gamma },
            "sub-gaussian" => MechanismSpec::SubsampledGaussian { b: self.b, gamma: self.gamma },
            "rr" => MechanismSpec::RandomizedResponse { eps0: self.eps0 },
            "rr-shuffled" => MechanismSpec::ShuffledRandomizedResponse { eps0: self.eps0 },
            "ngd" => MechanismSpec::NoisyGradientDescent {
                eta: self.eta,
                b: self.b,
                iterations: self.iters,
                theta0: self.theta0,
            },
            other => {
                return Err(AuditError::InvalidArgument(format!(
                    "unknown mechanism '{other}' (expected laplace, gaussian, sub-laplace, sub-gaussian, rr, rr-shuffled or ngd)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    fn formula(&self) -> Result<SubsampleFormula> {
        match self.subsample_formula.as_str() {
            "paper" => Ok(SubsampleFormula::Paper),
            "order-j" => Ok(SubsampleFormula::OrderJ),
            other => Err(AuditError::InvalidArgument(format!(
                "unknown subsample formula '{other}' (expected paper or order-j)"
            ))),
        }
    }

    fn params_json(&self, spec: &MechanismSpec) -> serde_json::Value {
        serde_json::to_value(spec).expect("mechanism spec serializes")
    }
}

#[derive(Args)]
struct EstimatorArgs {
    /// Comma-separated Rényi orders, each > 1.
    #[arg(long, default_value = "2")]
    lambda: String,
    /// Draws per database and replication.
    #[arg(long, default_value_t = 5_000_000)]
    n: usize,
    /// One minus the confidence of each bound.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Density floor level.
    #[arg(long, default_value_t = 1e-5)]
    tau: f64,
    /// Softmax sharpness.
    #[arg(long, default_value_t = 1e5)]
    beta: f64,
    /// Replications per order.
    #[arg(long, default_value_t = 1000)]
    reps: u32,
    /// Master seed for the replication substreams.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Grid points for the continuous path.
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    /// Bandwidth rule: rot | plugin | fixed:<h>.
    #[arg(long, default_value = "rot")]
    bandwidth: String,
    /// Undersmoothing exponent applied to the selected bandwidth.
    #[arg(long, default_value_t = 1.1)]
    undersmooth: f64,
    /// Smoothing kernel: gaussian | silverman.
    #[arg(long, default_value = "gaussian")]
    kernel: String,
}

impl EstimatorArgs {
    fn lambdas(&self) -> Result<Vec<f64>> {
        self.lambda
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<f64>()
                    .map_err(|_| AuditError::InvalidArgument(format!("bad lambda '{part}'")))
            })
            .collect()
    }

    fn bandwidth_rule(&self) -> Result<BandwidthRule> {
        let base = match self.bandwidth.as_str() {
            "rot" => BandwidthBase::RuleOfThumb,
            "plugin" => BandwidthBase::DirectPlugIn,
            other => match other.strip_prefix("fixed:") {
                Some(h) => BandwidthBase::Fixed(h.parse::<f64>().map_err(|_| {
                    AuditError::InvalidArgument(format!("bad fixed bandwidth '{h}'"))
                })?),
                None => {
                    return Err(AuditError::InvalidArgument(format!(
                        "unknown bandwidth rule '{other}' (expected rot, plugin or fixed:<h>)"
                    )))
                }
            },
        };
        BandwidthRule::new(base, self.undersmooth)
    }

    fn kernel(&self) -> Result<KernelKind> {
        match self.kernel.as_str() {
            "gaussian" => Ok(KernelKind::Gaussian),
            "silverman" => Ok(KernelKind::Silverman),
            other => Err(AuditError::InvalidArgument(format!(
                "unknown kernel '{other}' (expected gaussian or silverman)"
            ))),
        }
    }

    fn config(&self, lambda: f64) -> Result<EstimatorConfig> {
        EstimatorConfig::new(
            lambda,
            self.alpha,
            FloorParams::new(self.tau, self.beta)?,
            self.bandwidth_rule()?,
            self.kernel()?,
            self.grid,
        )
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    mechanism: MechanismArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    mechanism: MechanismArgs,
    /// Single Rényi order.
    #[arg(long)]
    lambda: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    mechanism: MechanismArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Comma-separated floor levels; paired with --beta-list, or beta
    /// defaults to 1/tau.
    #[arg(long)]
    tau_list: String,
    /// Comma-separated sharpness values matching --tau-list.
    #[arg(long)]
    beta_list: Option<String>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

/// Run the CLI and return the process exit status: 0 on success, 2 on
/// argument errors, 1 on runtime errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => command_run(&args),
        Command::Oracle(args) => command_oracle(&args),
        Command::Sweep(args) => command_sweep(&args),
    };
    match outcome {
        Ok(()) => 0,
        Err(AuditError::InvalidArgument(msg)) => {
            eprintln!("error: invalid argument: {msg}");
            2
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn build_plan(mechanism: &MechanismArgs, estimator: &EstimatorArgs) -> Result<ExperimentPlan> {
    let spec = mechanism.spec()?;
    let lambdas = estimator.lambdas()?;
    let lambda0 = *lambdas
        .first()
        .ok_or_else(|| AuditError::InvalidArgument("no Renyi orders given".into()))?;
    let mut plan = ExperimentPlan::new(
        spec,
        lambdas,
        estimator.config(lambda0)?,
        estimator.reps,
        estimator.seed,
        default_adjacent_pair(mechanism.m)?,
        estimator.n,
    )?;
    plan.subsample_formula = mechanism.formula()?;
    Ok(plan)
}

fn command_run(args: &RunArgs) -> Result<()> {
    let plan = build_plan(&args.mechanism, &args.estimator)?;
    let (records, stats) = run_experiment(&plan)?;
    let name = plan.mechanism.cli_name();
    let params = params_with_estimator(&args.mechanism, &args.estimator, &plan)?;
    println!("{}", summaries_to_json(name, &stats, &params));
    emit(
        name,
        &records,
        &stats,
        &params,
        args.out_csv.as_deref(),
        args.out_json.as_deref(),
    )
}

fn command_oracle(args: &OracleArgs) -> Result<()> {
    let spec = args.mechanism.spec()?;
    let value = true_divergence(
        &spec,
        args.mechanism.m,
        args.lambda,
        args.mechanism.formula()?,
    )?;
    println!("{value}");
    Ok(())
}

fn command_sweep(args: &SweepArgs) -> Result<()> {
    let plan = build_plan(&args.mechanism, &args.estimator)?;
    let taus: Vec<f64> = args
        .tau_list
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| AuditError::InvalidArgument(format!("bad tau '{part}'")))
        })
        .collect::<Result<_>>()?;
    let betas: Vec<f64> = match &args.beta_list {
        Some(list) => list
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<f64>()
                    .map_err(|_| AuditError::InvalidArgument(format!("bad beta '{part}'")))
            })
            .collect::<Result<_>>()?,
        None => taus.iter().map(|t| 1.0 / t).collect(),
    };
    if betas.len() != taus.len() {
        return Err(AuditError::InvalidArgument(format!(
            "{} tau values but {} beta values",
            taus.len(),
            betas.len()
        )));
    }
    let floors: Vec<FloorParams> = taus
        .iter()
        .zip(&betas)
        .map(|(&t, &b)| FloorParams::new(t, b))
        .collect::<Result<_>>()?;

    let swept = run_sweep(&plan, &floors)?;
    let name = plan.mechanism.cli_name();
    let mut all_records = Vec::new();
    let mut all_stats: Vec<SummaryStats> = Vec::new();
    for (floor, records, stats) in swept {
        let mut params = params_with_estimator(&args.mechanism, &args.estimator, &plan)?;
        params["tau"] = floor.tau.into();
        params["beta"] = floor.beta.into();
        println!("{}", summaries_to_json(name, &stats, &params));
        all_records.extend(records);
        all_stats.extend(stats);
    }
    let params = params_with_estimator(&args.mechanism, &args.estimator, &plan)?;
    emit(
        name,
        &all_records,
        &all_stats,
        &params,
        args.out_csv.as_deref(),
        args.out_json.as_deref(),
    )
}

fn params_with_estimator(
    mechanism: &MechanismArgs,
    estimator: &EstimatorArgs,
    plan: &ExperimentPlan,
) -> Result<serde_json::Value> {
    let spec = mechanism.spec()?;
    let mut params = mechanism.params_json(&spec);
    params["m"] = mechanism.m.into();
    params["n"] = plan.samples_per_side.into();
    params["alpha"] = plan.config.alpha.into();
    params["tau"] = plan.config.floor.tau.into();
    params["beta"] = plan.config.floor.beta.into();
    params["reps"] = plan.replications.into();
    params["seed"] = plan.master_seed.into();
    params["grid"] = plan.config.grid_points.into();
    params["bandwidth"] = estimator.bandwidth.clone().into();
    params["undersmooth"] = estimator.undersmooth.into();
    params["kernel"] = estimator.kernel.clone().into();
    Ok(params)
}
