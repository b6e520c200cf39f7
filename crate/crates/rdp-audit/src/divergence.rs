//! The estimator core: softmax flooring, plug-in Rényi divergence, its
//! variance estimate and the resulting statistical lower bound.
//!
//! All softmax and logistic evaluations use shifted `log1p`/logistic forms:
//! with the default sharpness 1e5 the textbook expressions overflow for any
//! argument above ~0.007.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::density::{
    fit_kde, fit_rfe, make_joint_grid, select_bandwidth, BandwidthRule, DensityEstimate,
    DiscreteDensityTable, GridDensity, KernelKind,
};
use crate::error::{AuditError, Result};
use crate::mechanisms::SampleSet;

/// Floor level and softmax sharpness for the regularized denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloorParams {
    pub tau: f64,
    pub beta: f64,
}

impl FloorParams {
    pub fn new(tau: f64, beta: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(AuditError::InvalidArgument(format!(
                "floor tau must be positive, got {tau}"
            )));
        }
        if !(beta > 0.0) {
            return Err(AuditError::InvalidArgument(format!(
                "softmax sharpness beta must be positive, got {beta}"
            )));
        }
        Ok(Self { tau, beta })
    }

    /// The softmax overshoot above the hard maximum is of order 1/beta, so
    /// beta * tau < 1 means the floor approximation is loose relative to
    /// the floor level itself.
    pub fn is_loose(&self) -> bool {
        self.beta * self.tau < 1.0
    }
}

/// Smooth floor: `beta^-1 log(exp(t beta) + exp(tau beta))`, evaluated as
/// `max(t, tau) + beta^-1 log1p(exp(-beta |t - tau|))`.
pub fn softmax_floor(t: f64, floor: &FloorParams) -> f64 {
    let gap = -(floor.beta * (t - floor.tau).abs());
    t.max(floor.tau) + gap.exp().ln_1p() / floor.beta
}

/// Derivative of the softmax floor in `t`: a logistic of `beta (t - tau)`.
pub fn softmax_deriv(t: f64, floor: &FloorParams) -> f64 {
    let x = floor.beta * (t - floor.tau);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters governing one lower-bound computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub floor: FloorParams,
    pub bandwidth: BandwidthRule,
    pub kernel: KernelKind,
    pub grid_points: usize,
}

impl EstimatorConfig {
    pub fn new(
        lambda: f64,
        alpha: f64,
        floor: FloorParams,
        bandwidth: BandwidthRule,
        kernel: KernelKind,
        grid_points: usize,
    ) -> Result<Self> {
        if !(lambda > 1.0) {
            return Err(AuditError::InvalidArgument(format!(
                "Renyi order lambda must exceed 1, got {lambda}"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(AuditError::InvalidArgument(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if grid_points < 2 {
            return Err(AuditError::InvalidArgument(
                "grid needs at least two points".into(),
            ));
        }
        kernel.check_assumption_k()?;
        Ok(Self {
            lambda,
            alpha,
            floor,
            bandwidth,
            kernel,
            grid_points,
        })
    }

    /// The experimental defaults: alpha 0.05, tau 1e-5, beta 1e5,
    /// undersmoothed rule-of-thumb bandwidth, Gaussian kernel, 1000 grid
    /// points.
    pub fn with_defaults(lambda: f64) -> Result<Self> {
        Self::new(
            lambda,
            0.05,
            FloorParams::new(1e-5, 1e5)?,
            BandwidthRule::default(),
            KernelKind::Gaussian,
            1000,
        )
    }
}

/// `p^a * q^b` for positive `p`, `q`, evaluated in log space: in deep
/// density tails the factors overflow and underflow separately and their
/// direct product degenerates to `0 * inf`.
fn pow_product(p: f64, a: f64, q: f64, b: f64) -> f64 {
    (a * p.ln() + b * q.ln()).exp()
}

/// Rényi divergence of order `lambda` between two density estimates of the
/// same kind; `+inf` when some p-mass sits where q vanishes.
pub fn renyi_exact(p: &DensityEstimate, q: &DensityEstimate, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let (p_vals, q_vals, weight) = paired_values(p, q)?;
    let mut sum = 0.0;
    for (&pi, &qi) in p_vals.iter().zip(q_vals) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            sum += pow_product(pi, lambda, qi, 1.0 - lambda);
        }
    }
    Ok((weight * sum).ln() / (lambda - 1.0))
}

/// Plug-in divergence with the denominator estimate floored through the
/// softmax; the numerator estimate is left untouched.
pub fn renyi_plugin(
    p_hat: &DensityEstimate,
    q_hat: &DensityEstimate,
    lambda: f64,
    floor: &FloorParams,
) -> Result<f64> {
    check_lambda(lambda)?;
    let (p_vals, q_vals, weight) = paired_values(p_hat, q_hat)?;
    let mut sum = 0.0;
    for (&pi, &qi) in p_vals.iter().zip(q_vals) {
        if pi > 0.0 {
            sum += pow_product(pi, lambda, softmax_floor(qi, floor), 1.0 - lambda);
        }
    }
    Ok((weight * sum).ln() / (lambda - 1.0))
}

/// Variance estimate of the (scaled) plug-in divergence, with raw
/// components exposed for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    /// sqrt of the clamped variance.
    pub sigma_hat: f64,
    /// Numerator component from the p-sample, before clamping.
    pub first_component: f64,
    /// Numerator component from the q-sample, before clamping.
    pub second_component: f64,
    /// The integral `int p^lambda q_tau^(1-lambda)` entering the
    /// denominator.
    pub denominator_integral: f64,
    /// Whether negative roundoff was clamped away.
    pub clamped: bool,
}

pub fn variance_estimate(
    p_hat: &DensityEstimate,
    q_hat: &DensityEstimate,
    lambda: f64,
    floor: &FloorParams,
) -> Result<VarianceEstimate> {
    check_lambda(lambda)?;
    let (p_vals, q_vals, weight) = paired_values(p_hat, q_hat)?;

    // Four integral transforms of the density estimates, all over the same
    // alphabet / grid.
    let mut i1 = 0.0; // p^l qt^(1-l)
    let mut i2 = 0.0; // p^(2l-1) qt^(2-2l)
    let mut i3 = 0.0; // pi(q)^2 qt^(-2l) q p^(2l)
    let mut i4 = 0.0; // pi(q) qt^(-l) q p^l
    for (&pi, &qi) in p_vals.iter().zip(q_vals) {
        if pi <= 0.0 {
            continue;
        }
        let qt = softmax_floor(qi, floor);
        let deriv = softmax_deriv(qi, floor);
        i1 += pow_product(pi, lambda, qt, 1.0 - lambda);
        i2 += pow_product(pi, 2.0 * lambda - 1.0, qt, 2.0 - 2.0 * lambda);
        i3 += deriv * deriv * qi * pow_product(pi, 2.0 * lambda, qt, -2.0 * lambda);
        i4 += deriv * qi * pow_product(pi, lambda, qt, -lambda);
    }
    i1 *= weight;
    i2 *= weight;
    i3 *= weight;
    i4 *= weight;

    if i1 <= 0.0 {
        return Err(AuditError::DegenerateEstimate(
            "vanishing denominator integral".into(),
        ));
    }
    let first = lambda * lambda * (i2 - i1 * i1);
    let second = (1.0 - lambda) * (1.0 - lambda) * (i3 - i4 * i4);
    let denominator = (lambda - 1.0) * i1;
    let sigma_sq = (first + second) / (denominator * denominator);
    Ok(VarianceEstimate {
        sigma_hat: sigma_sq.max(0.0).sqrt(),
        first_component: first,
        second_component: second,
        denominator_integral: i1,
        clamped: sigma_sq < 0.0,
    })
}

/// Standard normal CDF through the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: rational approximation polished with one
/// Newton step against the erf-based CDF; absolute error below 1e-9.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AuditError::InvalidArgument(format!(
            "quantile level must lie in (0,1), got {alpha}"
        )));
    }
    let mut x = rational_quantile(alpha);
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        x -= (normal_cdf(x) - alpha) / pdf;
    }
    Ok(x)
}

/// Acklam's rational approximation of the inverse normal CDF.
fn rational_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -39.696_830_286_653_76,
        220.946_098_424_520_8,
        -275.928_510_446_968_9,
        138.357_751_867_269,
        -30.664_798_066_147_16,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -54.476_098_798_224_06,
        161.585_836_858_040_9,
        -155.698_979_859_886_7,
        66.801_311_887_719_72,
        -13.280_681_552_885_72,
    ];
    const C: [f64; 6] = [
        -0.007_784_894_002_430_293,
        -0.322_396_458_041_136_4,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        0.007_784_695_709_041_462,
        0.322_467_129_070_039_9,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// One computed lower bound with its ingredients and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundResult {
    pub lower_bound: f64,
    pub plugin_divergence: f64,
    pub sigma_hat: f64,
    pub n: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub tau: f64,
    pub beta: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl BoundResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bound result serializes")
    }
}

/// Statistical lower bound for the Rényi divergence of the two sampled
/// output distributions: plug-in divergence shifted down by the estimated
/// standard error times the normal alpha-quantile.
pub fn lower_bound(
    samples_p: &SampleSet,
    samples_q: &SampleSet,
    config: &EstimatorConfig,
) -> Result<BoundResult> {
    if samples_p.is_discrete() != samples_q.is_discrete() {
        return Err(AuditError::InvalidArgument(
            "sample sets must share a kind".into(),
        ));
    }
    if samples_p.len() != samples_q.len() {
        return Err(AuditError::InvalidArgument(format!(
            "sample sizes differ: {} vs {}",
            samples_p.len(),
            samples_q.len()
        )));
    }
    let n = samples_p.len();
    let mut diagnostics = BTreeMap::new();

    let (p_hat, q_hat) = if samples_p.is_discrete() {
        let p = DensityEstimate::Discrete(fit_rfe(samples_p)?);
        let q = DensityEstimate::Discrete(fit_rfe(samples_q)?);
        (p, q)
    } else {
        let h_p = select_bandwidth(samples_p, &config.bandwidth)?;
        let h_q = select_bandwidth(samples_q, &config.bandwidth)?;
        let grid = make_joint_grid(samples_p, samples_q, h_p.max(h_q), config.grid_points)?;
        let kde_p = fit_kde(samples_p, config.kernel, h_p, grid)?;
        let kde_q = fit_kde(samples_q, config.kernel, h_q, grid)?;
        diagnostics.insert("bandwidth_p".into(), h_p);
        diagnostics.insert("bandwidth_q".into(), h_q);
        diagnostics.insert("grid_start".into(), grid.start);
        diagnostics.insert("grid_step".into(), grid.step);
        diagnostics.insert("grid_points".into(), grid.points as f64);
        diagnostics.insert("grid_mass_p".into(), kde_p.mass());
        diagnostics.insert("grid_mass_q".into(), kde_q.mass());
        diagnostics.insert("clamped_points_p".into(), kde_p.clamped_points() as f64);
        diagnostics.insert("clamped_points_q".into(), kde_q.clamped_points() as f64);
        (DensityEstimate::Grid(kde_p), DensityEstimate::Grid(kde_q))
    };

    let plugin = renyi_plugin(&p_hat, &q_hat, config.lambda, &config.floor)?;
    let variance = variance_estimate(&p_hat, &q_hat, config.lambda, &config.floor)?;
    let quantile = normal_quantile(config.alpha)?;
    let lower = plugin + quantile * variance.sigma_hat / (n as f64).sqrt();

    let (p_vals, q_vals, weight) = paired_values(&p_hat, &q_hat)?;
    let below_floor: f64 = p_vals
        .iter()
        .zip(q_vals)
        .filter(|(_, q)| **q < config.floor.tau)
        .map(|(p, _)| p)
        .sum::<f64>()
        * weight;
    diagnostics.insert("p_mass_below_floor".into(), below_floor);
    // Most of the p-mass sitting where q falls under the floor means the
    // bound is dominated by the regularization, not the data.
    diagnostics.insert(
        "floored_region_warning".into(),
        (below_floor > 0.5) as u8 as f64,
    );
    diagnostics.insert("denominator".into(), variance.denominator_integral);
    diagnostics.insert("sigma_sq_first".into(), variance.first_component);
    diagnostics.insert("sigma_sq_second".into(), variance.second_component);
    diagnostics.insert("variance_clamped".into(), variance.clamped as u8 as f64);
    diagnostics.insert("floor_loose".into(), config.floor.is_loose() as u8 as f64);

    Ok(BoundResult {
        lower_bound: lower,
        plugin_divergence: plugin,
        sigma_hat: variance.sigma_hat,
        n,
        lambda: config.lambda,
        alpha: config.alpha,
        tau: config.floor.tau,
        beta: config.floor.beta,
        diagnostics,
    })
}

/// Best of several independent bounds at a common confidence level:
/// `(max_i lower_i, (1 - alpha)^N)`.
pub fn combine_bounds(bounds: &[BoundResult]) -> Result<(f64, f64)> {
    let first = bounds.first().ok_or_else(|| {
        AuditError::InvalidArgument("cannot combine an empty set of bounds".into())
    })?;
    if bounds.iter().any(|b| b.alpha != first.alpha) {
        return Err(AuditError::InvalidArgument(
            "bounds must share a common alpha".into(),
        ));
    }
    let max = bounds
        .iter()
        .map(|b| b.lower_bound)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((max, (1.0 - first.alpha).powi(bounds.len() as i32)))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 1.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(AuditError::InvalidArgument(format!(
            "Renyi order lambda must exceed 1, got {lambda}"
        )))
    }
}

/// Extract aligned value slices and the integration weight (1 for alphabet
/// sums, the grid step for Riemann sums).
fn paired_values<'a>(
    p: &'a DensityEstimate,
    q: &'a DensityEstimate,
) -> Result<(&'a [f64], &'a [f64], f64)> {
    match (p, q) {
        (DensityEstimate::Discrete(p), DensityEstimate::Discrete(q)) => {
            if p.alphabet_size() != q.alphabet_size() {
                return Err(AuditError::InvalidArgument(format!(
                    "alphabets differ: {} vs {}",
                    p.alphabet_size(),
                    q.alphabet_size()
                )));
            }
            Ok((p.masses(), q.masses(), 1.0))
        }
        (DensityEstimate::Grid(p), DensityEstimate::Grid(q)) => {
            if !p.same_grid(q) {
                return Err(AuditError::InvalidArgument(
                    "grid densities must share the evaluation grid".into(),
                ));
            }
            Ok((p.values(), q.values(), p.step()))
        }
        _ => Err(AuditError::InvalidArgument(
            "density estimates must share a kind".into(),
        )),
    }
}

/// Exact discrete density pair, used by tests and oracles.
pub fn discrete_pair(p: &[f64], q: &[f64]) -> Result<(DensityEstimate, DensityEstimate)> {
    Ok((
        DensityEstimate::Discrete(DiscreteDensityTable::from_masses(p.to_vec())?),
        DensityEstimate::Discrete(DiscreteDensityTable::from_masses(q.to_vec())?),
    ))
}

/// Evaluate an analytic density on a grid, for exact-density cross-checks.
pub fn grid_from_fn(
    start: f64,
    step: f64,
    points: usize,
    f: impl Fn(f64) -> f64,
) -> Result<GridDensity> {
    let values = (0..points).map(|i| f(start + i as f64 * step)).collect();
    GridDensity::new(start, step, values)
}
