//! Experiment orchestration: seeded replication loops, coverage statistics
//! against the closed-form oracles, and CSV/JSON result emission.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::divergence::{lower_bound, BoundResult, EstimatorConfig, FloorParams};
use crate::error::{AuditError, Result};
use crate::mechanisms::{default_adjacent_pair, sample, AdjacentPair, MechanismSpec};
use crate::oracles::{true_divergence, SubsampleFormula};

/// One full experiment: a mechanism audited at several Rényi orders over
/// `replications` independent sample pairs.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub mechanism: MechanismSpec,
    pub lambdas: Vec<f64>,
    pub config: EstimatorConfig,
    pub replications: u32,
    pub master_seed: u64,
    pub pair: AdjacentPair,
    /// Draws per database and replication.
    pub samples_per_side: usize,
    /// Normalization used for the subsampled mechanisms' true value. The
    /// order-j form is their exact divergence; both forms agree at
    /// lambda = 2.
    pub subsample_formula: SubsampleFormula,
}

impl ExperimentPlan {
    pub fn new(
        mechanism: MechanismSpec,
        lambdas: Vec<f64>,
        config: EstimatorConfig,
        replications: u32,
        master_seed: u64,
        pair: AdjacentPair,
        samples_per_side: usize,
    ) -> Result<Self> {
        mechanism.validate()?;
        if lambdas.is_empty() {
            return Err(AuditError::InvalidArgument("no Renyi orders given".into()));
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l > 1.0)) {
            return Err(AuditError::InvalidArgument(format!(
                "Renyi order lambda must exceed 1, got {l}"
            )));
        }
        if replications == 0 {
            return Err(AuditError::InvalidArgument(
                "need at least one replication".into(),
            ));
        }
        if samples_per_side == 0 {
            return Err(AuditError::InvalidArgument(
                "need at least one sample per side".into(),
            ));
        }
        Ok(Self {
            mechanism,
            lambdas,
            config,
            replications,
            master_seed,
            pair,
            samples_per_side,
            subsample_formula: SubsampleFormula::OrderJ,
        })
    }

    /// The experimental protocol defaults: n = 5e6 draws on the furthest
    /// adjacent pair in dimension 10.
    pub fn with_defaults(mechanism: MechanismSpec, lambdas: Vec<f64>, seed: u64) -> Result<Self> {
        let lambda0 = *lambdas
            .first()
            .ok_or_else(|| AuditError::InvalidArgument("no Renyi orders given".into()))?;
        Self::new(
            mechanism,
            lambdas,
            EstimatorConfig::with_defaults(lambda0)?,
            1000,
            seed,
            default_adjacent_pair(10)?,
            5_000_000,
        )
    }
}

/// One replication's outcome at one Rényi order.
#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub lambda_index: usize,
    pub replication: u32,
    pub lambda: f64,
    pub bound: BoundResult,
    pub true_value: f64,
    /// `lower_bound / true_value`; coverage means this is at most 1.
    pub ratio: f64,
    pub covered: bool,
    pub seconds: f64,
}

/// Aggregate over the replications at a single Rényi order.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryStats {
    pub lambda: f64,
    pub replications: u32,
    /// Fraction of replications whose bound exceeded the true divergence.
    pub alpha_hat: f64,
    pub ratio_median: f64,
    pub ratio_q25: f64,
    pub ratio_q75: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub mean_seconds: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic substream seed from the master seed and a path of indices
/// (replication, side, ...); independent of scheduling.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &part in path {
        state = splitmix64(state ^ part.wrapping_mul(0xff51_afd7_ed55_8ccd));
    }
    state
}

/// Run a single replication at `plan.lambdas[lambda_index]`.
pub fn run_replication(
    plan: &ExperimentPlan,
    lambda_index: usize,
    replication: u32,
) -> Result<ReplicationRecord> {
    let lambda = *plan.lambdas.get(lambda_index).ok_or_else(|| {
        AuditError::InvalidArgument(format!("lambda index {lambda_index} out of range"))
    })?;
    let started = Instant::now();

    let mut rng_p = ChaCha8Rng::seed_from_u64(derive_seed(
        plan.master_seed,
        &[lambda_index as u64, replication as u64, 0],
    ));
    let mut rng_q = ChaCha8Rng::seed_from_u64(derive_seed(
        plan.master_seed,
        &[lambda_index as u64, replication as u64, 1],
    ));
    let samples_p = sample(
        &plan.mechanism,
        plan.pair.left(),
        plan.samples_per_side,
        &mut rng_p,
    )?;
    let samples_q = sample(
        &plan.mechanism,
        plan.pair.right(),
        plan.samples_per_side,
        &mut rng_q,
    )?;

    let config = EstimatorConfig {
        lambda,
        ..plan.config
    };
    let bound = lower_bound(&samples_p, &samples_q, &config)?;
    let true_value = true_divergence(
        &plan.mechanism,
        plan.pair.dimension(),
        lambda,
        plan.subsample_formula,
    )?;
    let ratio = bound.lower_bound / true_value;
    Ok(ReplicationRecord {
        lambda_index,
        replication,
        lambda,
        covered: bound.lower_bound <= true_value,
        bound,
        true_value,
        ratio,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Run every (order, replication) cell of the plan, parallelized over a
/// worker pool; results are independent of worker count and schedule.
/// `threads = None` defers to the `RDP_AUDIT_THREADS` environment variable.
pub fn run_experiment_with_threads(
    plan: &ExperimentPlan,
    threads: Option<usize>,
) -> Result<(Vec<ReplicationRecord>, Vec<SummaryStats>)> {
    let cells: Vec<(usize, u32)> = (0..plan.lambdas.len())
        .flat_map(|li| (0..plan.replications).map(move |r| (li, r)))
        .collect();
    let work = || -> Result<Vec<ReplicationRecord>> {
        cells
            .par_iter()
            .map(|&(li, r)| run_replication(plan, li, r))
            .collect()
    };
    let mut records = match threads.or_else(env_thread_cap) {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| AuditError::NumericalFailure(format!("thread pool: {e}")))?;
            pool.install(work)?
        }
        None => work()?,
    };
    records.sort_by_key(|r| (r.lambda_index, r.replication));
    let stats = summarize(plan, &records);
    Ok((records, stats))
}

pub fn run_experiment(
    plan: &ExperimentPlan,
) -> Result<(Vec<ReplicationRecord>, Vec<SummaryStats>)> {
    run_experiment_with_threads(plan, None)
}

/// Repeat the experiment for each floor setting, reusing the same
/// substreams so settings are compared on identical samples.
pub fn run_sweep(
    plan: &ExperimentPlan,
    floors: &[FloorParams],
) -> Result<Vec<(FloorParams, Vec<ReplicationRecord>, Vec<SummaryStats>)>> {
    if floors.is_empty() {
        return Err(AuditError::InvalidArgument("empty sweep".into()));
    }
    floors
        .iter()
        .map(|&floor| {
            let mut swept = plan.clone();
            swept.config.floor = floor;
            let (records, stats) = run_experiment(&swept)?;
            Ok((floor, records, stats))
        })
        .collect()
}

fn env_thread_cap() -> Option<usize> {
    std::env::var("RDP_AUDIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&k| k > 0)
}

/// Per-order aggregation; a deterministic fold over the index-sorted
/// records.
fn summarize(plan: &ExperimentPlan, records: &[ReplicationRecord]) -> Vec<SummaryStats> {
    (0..plan.lambdas.len())
        .filter_map(|li| {
            let group: Vec<&ReplicationRecord> =
                records.iter().filter(|r| r.lambda_index == li).collect();
            if group.is_empty() {
                return None;
            }
            let n = group.len() as f64;
            let mut ratios: Vec<f64> = group.iter().map(|r| r.ratio).collect();
            ratios.sort_by(f64::total_cmp);
            let not_covered = group.iter().filter(|r| !r.covered).count() as f64;
            Some(SummaryStats {
                lambda: plan.lambdas[li],
                replications: group.len() as u32,
                alpha_hat: not_covered / n,
                ratio_median: sorted_quantile(&ratios, 0.5),
                ratio_q25: sorted_quantile(&ratios, 0.25),
                ratio_q75: sorted_quantile(&ratios, 0.75),
                ratio_min: ratios[0],
                ratio_max: ratios[ratios.len() - 1],
                mean_seconds: group.iter().map(|r| r.seconds).sum::<f64>() / n,
            })
        })
        .collect()
}

fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

pub const CSV_HEADER: &str = "rep,mechanism,lambda,n,alpha,tau,beta,lower_bound,plugin_divergence,sigma_hat,true_value,ratio,covered,seconds";

/// Render records as CSV (UTF-8, '.' decimal separator, LF terminators;
/// floats carry 17 significant digits so parsing reproduces them exactly).
pub fn records_to_csv(mechanism: &str, records: &[ReplicationRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 256);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}\n",
            r.replication,
            mechanism,
            r.lambda,
            r.bound.n,
            r.bound.alpha,
            r.bound.tau,
            r.bound.beta,
            r.bound.lower_bound,
            r.bound.plugin_divergence,
            r.bound.sigma_hat,
            r.true_value,
            r.ratio,
            r.covered,
            r.seconds,
        ));
    }
    out
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    mechanism: &'a str,
    lambda: Option<f64>,
    replications: u32,
    alpha_hat: Option<f64>,
    ratio_median: Option<f64>,
    ratio_q25: Option<f64>,
    ratio_q75: Option<f64>,
    mean_seconds: Option<f64>,
    params: &'a serde_json::Value,
}

/// Render per-order summaries as a JSON array; an experiment without
/// records yields a single row flagging zero replications.
pub fn summaries_to_json(
    mechanism: &str,
    stats: &[SummaryStats],
    params: &serde_json::Value,
) -> String {
    let rows: Vec<SummaryRow> = if stats.is_empty() {
        vec![SummaryRow {
            mechanism,
            lambda: None,
            replications: 0,
            alpha_hat: None,
            ratio_median: None,
            ratio_q25: None,
            ratio_q75: None,
            mean_seconds: None,
            params,
        }]
    } else {
        stats
            .iter()
            .map(|s| SummaryRow {
                mechanism,
                lambda: Some(s.lambda),
                replications: s.replications,
                alpha_hat: Some(s.alpha_hat),
                ratio_median: Some(s.ratio_median),
                ratio_q25: Some(s.ratio_q25),
                ratio_q75: Some(s.ratio_q75),
                mean_seconds: Some(s.mean_seconds),
                params,
            })
            .collect()
    };
    serde_json::to_string_pretty(&rows).expect("summaries serialize")
}

/// Write the CSV and JSON artifacts.
pub fn emit(
    mechanism: &str,
    records: &[ReplicationRecord],
    stats: &[SummaryStats],
    params: &serde_json::Value,
    csv_path: Option<&Path>,
    json_path: Option<&Path>,
) -> Result<()> {
    if let Some(path) = csv_path {
        write_file(path, &records_to_csv(mechanism, records))?;
    }
    if let Some(path) = json_path {
        write_file(path, &summaries_to_json(mechanism, stats, params))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io_err = |source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(contents.as_bytes())
        .map_err(|source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        })
}
