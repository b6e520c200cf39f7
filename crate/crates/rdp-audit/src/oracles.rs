//! Closed-form divergence values for the audited mechanisms, plus an
//! independent quadrature reference used to cross-check them in tests.

use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::mechanisms::MechanismSpec;

/// Which base privacy parameter enters the subsampling amplification sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsampleFormula {
    /// `exp((j-1) eps0(lambda))`, the display as printed.
    #[default]
    Paper,
    /// `exp((j-1) eps0(j))`: the base parameter evaluated at order j, which
    /// makes the sum the exact divergence of the subsampled pair.
    OrderJ,
}

/// Rényi divergence of Lap(1, b) vs Lap(0, b) (unit sensitivity).
pub fn eps_laplace(lambda: f64, b: f64) -> Result<f64> {
    check_order(lambda)?;
    check_positive(b, "noise scale b")?;
    let value = lambda / (2.0 * lambda - 1.0) * ((lambda - 1.0) / b).exp()
        + (lambda - 1.0) / (2.0 * lambda - 1.0) * (-lambda / b).exp();
    Ok(value.ln() / (lambda - 1.0))
}

/// Rényi divergence of N(1, b^2) vs N(0, b^2): `lambda / (2 b^2)`.
pub fn eps_gaussian(lambda: f64, b: f64) -> Result<f64> {
    check_order(lambda)?;
    check_positive(b, "noise scale b")?;
    Ok(lambda / (2.0 * b * b))
}

/// Privacy parameter of a Poisson-subsampled additive-noise mechanism.
/// `base` yields the noise mechanism's own privacy parameter at a given
/// order; which order is used inside the sum depends on `variant`.
pub fn eps_subsampled(
    lambda: f64,
    gamma: f64,
    base: impl Fn(f64) -> Result<f64>,
    variant: SubsampleFormula,
) -> Result<f64> {
    let order = integer_order(lambda)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(AuditError::InvalidArgument(format!(
            "inclusion probability gamma must lie in (0,1), got {gamma}"
        )));
    }
    let mut total = (1.0 - gamma).powi(order - 1) * (lambda * gamma - gamma + 1.0);
    for j in 2..=order {
        let eps0 = match variant {
            SubsampleFormula::Paper => base(lambda)?,
            SubsampleFormula::OrderJ => base(j as f64)?,
        };
        total += binomial(order, j)
            * (1.0 - gamma).powi(order - j)
            * gamma.powi(j)
            * ((j - 1) as f64 * eps0).exp();
    }
    Ok(total.ln() / (lambda - 1.0))
}

/// Privacy parameter of bitwise randomized response with local parameter
/// `eps0` (per differing bit).
pub fn eps_rr(lambda: f64, eps0: f64) -> Result<f64> {
    check_order(lambda)?;
    if !(eps0 >= 0.0) {
        return Err(AuditError::InvalidArgument(format!(
            "local privacy parameter eps0 must be >= 0, got {eps0}"
        )));
    }
    let p1 = 1.0 / (1.0 + (-eps0).exp());
    let p0 = 1.0 - p1;
    let value = p1.powf(lambda) * p0.powf(1.0 - lambda) + p1.powf(1.0 - lambda) * p0.powf(lambda);
    Ok(value.ln() / (lambda - 1.0))
}

/// Central moment E[(Z - m p)^j] of Z ~ Bin(m, p) by exact summation over
/// the support.
pub fn binomial_central_moment(m: usize, p: f64, j: u32) -> f64 {
    let mean = m as f64 * p;
    let mut pmf = (1.0 - p).powi(m as i32);
    let mut total = 0.0;
    for z in 0..=m {
        total += pmf * (z as f64 - mean).powi(j as i32);
        if z < m {
            pmf *= (m - z) as f64 / (z + 1) as f64 * p / (1.0 - p);
        }
    }
    total
}

/// Divergence of shuffled randomized response on the furthest adjacent
/// pair, through the binomial-moment expansion.
pub fn div_shuffled_rr(lambda: f64, eps0: f64, m: usize) -> Result<f64> {
    let order = integer_order(lambda)?;
    if !(eps0 >= 0.0) {
        return Err(AuditError::InvalidArgument(format!(
            "local privacy parameter eps0 must be >= 0, got {eps0}"
        )));
    }
    if m == 0 {
        return Err(AuditError::InvalidArgument(
            "database dimension must be at least 1".into(),
        ));
    }
    let e = eps0.exp();
    let p = 1.0 / (e + 1.0);
    let mut total = 1.0 + binomial(order, 2) * (e - 1.0).powi(2) / (m as f64 * e);
    for j in 3..=order {
        total += binomial(order, j)
            * ((e * e - 1.0) / (m as f64 * e)).powi(j)
            * binomial_central_moment(m, p, j as u32);
    }
    Ok(total.ln() / (lambda - 1.0))
}

/// Divergence of noisy gradient descent under squared loss on the furthest
/// adjacent pair (unit total-gradient sensitivity).
pub fn div_ngd(lambda: f64, b: f64, m: usize, eta: f64, iterations: u32) -> Result<f64> {
    check_order(lambda)?;
    check_positive(b, "noise scale b")?;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(AuditError::InvalidArgument(format!(
            "learning rate eta must lie in (0,1), got {eta}"
        )));
    }
    if m == 0 || iterations == 0 {
        return Err(AuditError::InvalidArgument(
            "dimension and iteration count must be at least 1".into(),
        ));
    }
    let decay = (1.0 - eta).powi(iterations as i32);
    Ok(lambda / (4.0 * b * b * (m * m) as f64) * (2.0 - eta) / (1.0 + decay) * (1.0 - decay))
}

/// Closed-form divergence of the mechanism's output pair on the default
/// adjacent databases of dimension `m`.
///
/// For the subsampled mechanisms the order-j variant is the exact value;
/// pass `SubsampleFormula::Paper` to normalize by the printed display
/// instead (both coincide at lambda = 2).
pub fn true_divergence(
    spec: &MechanismSpec,
    m: usize,
    lambda: f64,
    variant: SubsampleFormula,
) -> Result<f64> {
    spec.validate()?;
    match *spec {
        MechanismSpec::Laplace { b } => eps_laplace(lambda, b),
        MechanismSpec::Gaussian { b } => eps_gaussian(lambda, b),
        MechanismSpec::SubsampledLaplace { b, gamma } => {
            eps_subsampled(lambda, gamma, |j| eps_laplace(j, b), variant)
        }
        MechanismSpec::SubsampledGaussian { b, gamma } => {
            eps_subsampled(lambda, gamma, |j| eps_gaussian(j, b), variant)
        }
        MechanismSpec::RandomizedResponse { eps0 } => eps_rr(lambda, eps0),
        MechanismSpec::ShuffledRandomizedResponse { eps0 } => div_shuffled_rr(lambda, eps0, m),
        MechanismSpec::NoisyGradientDescent {
            eta, b, iterations, ..
        } => div_ngd(lambda, b, m, eta, iterations),
    }
}

/// Independent quadrature reference for the Rényi divergence of two
/// analytic densities; used only to cross-check closed forms and grid code.
pub fn renyi_numeric_reference(
    p: impl Fn(f64) -> f64,
    q: impl Fn(f64) -> f64,
    lambda: f64,
) -> Result<f64> {
    check_order(lambda)?;
    let mut radius = 1.0f64;
    let mut evals = 0u64;
    // Grow the window until it captures all but ~1e-13 of both masses and
    // the integrand has died off at the endpoints.
    loop {
        let mass_p = piecewise_quadrature(&p, radius, &mut evals)?;
        let mass_q = piecewise_quadrature(&q, radius, &mut evals)?;
        let integrand_edge = integrand(&p, &q, lambda, -radius) + integrand(&p, &q, lambda, radius);
        if mass_p >= 1.0 - 1e-13 && mass_q >= 1.0 - 1e-13 && integrand_edge < 1e-16 {
            break;
        }
        radius *= 2.0;
        if radius > 1e9 {
            return Err(AuditError::NumericalFailure(
                "density mass not captured by any bounded window".into(),
            ));
        }
    }
    let total = piecewise_quadrature(&|t| integrand(&p, &q, lambda, t), radius, &mut evals)?;
    if !(total > 0.0) || !total.is_finite() {
        return Err(AuditError::NumericalFailure(format!(
            "quadrature produced non-positive integral {total}"
        )));
    }
    Ok(total.ln() / (lambda - 1.0))
}

fn integrand(p: &impl Fn(f64) -> f64, q: &impl Fn(f64) -> f64, lambda: f64, t: f64) -> f64 {
    let pv = p(t);
    if pv <= 0.0 {
        return 0.0;
    }
    pv.powf(lambda) * q(t).powf(1.0 - lambda)
}

/// Adaptive Simpson over [-radius, radius], split at dyadic anchors so
/// narrow bumps cannot hide between coarse nodes.
fn piecewise_quadrature(f: &impl Fn(f64) -> f64, radius: f64, evals: &mut u64) -> Result<f64> {
    let mut anchors = vec![0.0f64];
    let mut a = 1.0f64.min(radius);
    loop {
        anchors.push(a);
        anchors.push(-a);
        if a >= radius {
            break;
        }
        a = (a * 2.0).min(radius);
    }
    anchors.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for pair in anchors.windows(2) {
        total += adaptive_simpson(f, pair[0], pair[1], 1e-14, 48, evals)?;
    }
    Ok(total)
}

fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    depth: u32,
    evals: &mut u64,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    *evals += 3;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_refine(f, a, b, fa, fm, fb, whole, tol, depth, evals)
}

#[allow(clippy::too_many_arguments)]
fn simpson_refine(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    evals: &mut u64,
) -> Result<f64> {
    if *evals > 50_000_000 {
        return Err(AuditError::NumericalFailure(
            "quadrature did not converge within the evaluation budget".into(),
        ));
    }
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    *evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        Ok(left + right + delta / 15.0)
    } else {
        let l = simpson_refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, evals)?;
        let r = simpson_refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, evals)?;
        Ok(l + r)
    }
}

fn binomial(n: i32, k: i32) -> f64 {
    let k = k.min(n - k);
    let mut value = 1.0f64;
    for i in 0..k {
        value = value * (n - i) as f64 / (i + 1) as f64;
    }
    value
}

fn check_order(lambda: f64) -> Result<()> {
    if lambda > 1.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(AuditError::InvalidArgument(format!(
            "Renyi order lambda must exceed 1, got {lambda}"
        )))
    }
}

fn check_positive(value: f64, name: &str) -> Result<()> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(AuditError::InvalidArgument(format!(
            "{name} must be positive, got {value}"
        )))
    }
}

/// Integer Rényi order of at least 2, required where the closed form uses
/// binomial coefficients.
fn integer_order(lambda: f64) -> Result<i32> {
    if lambda.fract() == 0.0 && (2.0..=1e6).contains(&lambda) {
        Ok(lambda as i32)
    } else {
        Err(AuditError::InvalidArgument(format!(
            "this closed form needs an integer order >= 2, got {lambda}"
        )))
    }
}
