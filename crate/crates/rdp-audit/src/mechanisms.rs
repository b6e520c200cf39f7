//! Randomized mechanisms under audit: databases, adjacency and black-box
//! sampling for the seven mechanism families.
//!
//! Sampling is pure given an explicit random stream, so identical seeds
//! produce bit-identical sample sets regardless of scheduling.

use rand::distributions::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{AuditError, Result};

/// Largest database dimension for which plain randomized response output
/// vectors are tracked atom-by-atom (alphabet size 2^m).
pub const MAX_RR_BITS: usize = 20;

/// An input record: one real in the closed unit interval per individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    entries: Vec<f64>,
}

impl Database {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(AuditError::InvalidArgument(
                "database must contain at least one entry".into(),
            ));
        }
        if let Some(e) = entries.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(AuditError::InvalidArgument(format!(
                "database entry {e} outside the unit interval"
            )));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// True when every entry is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.entries.iter().all(|&e| e == 0.0 || e == 1.0)
    }
}

/// Two equal-length databases differing in exactly one coordinate.
#[derive(Debug, Clone)]
pub struct AdjacentPair {
    left: Database,
    right: Database,
}

impl AdjacentPair {
    pub fn new(left: Database, right: Database) -> Result<Self> {
        if left.len() != right.len() {
            return Err(AuditError::InvalidArgument(
                "adjacent databases must have equal length".into(),
            ));
        }
        let differing = left
            .entries()
            .iter()
            .zip(right.entries())
            .filter(|(a, b)| a != b)
            .count();
        if differing != 1 {
            return Err(AuditError::InvalidArgument(format!(
                "adjacent databases must differ in exactly one coordinate, found {differing}"
            )));
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &Database {
        &self.left
    }

    pub fn right(&self) -> &Database {
        &self.right
    }

    pub fn dimension(&self) -> usize {
        self.left.len()
    }
}

/// The furthest adjacent pair on the unit cube: (1,0,...,0) vs (0,...,0).
pub fn default_adjacent_pair(m: usize) -> Result<AdjacentPair> {
    if m == 0 {
        return Err(AuditError::InvalidArgument(
            "database dimension must be at least 1".into(),
        ));
    }
    let mut left = vec![0.0; m];
    left[0] = 1.0;
    AdjacentPair::new(Database::new(left)?, Database::new(vec![0.0; m])?)
}

/// Parametrized mechanism family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechanismSpec {
    Laplace {
        b: f64,
    },
    Gaussian {
        b: f64,
    },
    SubsampledLaplace {
        b: f64,
        gamma: f64,
    },
    SubsampledGaussian {
        b: f64,
        gamma: f64,
    },
    RandomizedResponse {
        eps0: f64,
    },
    ShuffledRandomizedResponse {
        eps0: f64,
    },
    NoisyGradientDescent {
        eta: f64,
        b: f64,
        iterations: u32,
        theta0: f64,
    },
}

impl MechanismSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(AuditError::InvalidArgument(msg));
        match *self {
            Self::Laplace { b } | Self::Gaussian { b } => {
                if !(b > 0.0) {
                    return fail(format!("noise scale b must be positive, got {b}"));
                }
            }
            Self::SubsampledLaplace { b, gamma } | Self::SubsampledGaussian { b, gamma } => {
                if !(b > 0.0) {
                    return fail(format!("noise scale b must be positive, got {b}"));
                }
                if !(gamma > 0.0 && gamma < 1.0) {
                    return fail(format!(
                        "inclusion probability gamma must lie in (0,1), got {gamma}"
                    ));
                }
            }
            Self::RandomizedResponse { eps0 } | Self::ShuffledRandomizedResponse { eps0 } => {
                if !(eps0 >= 0.0) {
                    return fail(format!(
                        "local privacy parameter eps0 must be >= 0, got {eps0}"
                    ));
                }
            }
            Self::NoisyGradientDescent {
                eta,
                b,
                iterations,
                theta0,
            } => {
                if !(eta > 0.0 && eta < 1.0) {
                    return fail(format!("learning rate eta must lie in (0,1), got {eta}"));
                }
                if !(b > 0.0) {
                    return fail(format!("noise scale b must be positive, got {b}"));
                }
                if iterations == 0 {
                    return fail("iteration count must be at least 1".into());
                }
                if !theta0.is_finite() {
                    return fail(format!("initial parameter must be finite, got {theta0}"));
                }
            }
        }
        Ok(())
    }

    /// Whether outputs live on a finite alphabet.
    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            Self::RandomizedResponse { .. } | Self::ShuffledRandomizedResponse { .. }
        )
    }

    /// Name used on the CLI and in emitted records.
    pub fn cli_name(&self) -> &'static str {
        match self {
            Self::Laplace { .. } => "laplace",
            Self::Gaussian { .. } => "gaussian",
            Self::SubsampledLaplace { .. } => "sub-laplace",
            Self::SubsampledGaussian { .. } => "sub-gaussian",
            Self::RandomizedResponse { .. } => "rr",
            Self::ShuffledRandomizedResponse { .. } => "rr-shuffled",
            Self::NoisyGradientDescent { .. } => "ngd",
        }
    }
}

/// A tagged collection of mechanism outputs.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleSet {
    /// Atoms from the finite alphabet `0..alphabet_size`.
    Discrete { atoms: Vec<u64>, alphabet_size: u64 },
    /// Real scalar outputs.
    Continuous { values: Vec<f64> },
}

impl SampleSet {
    pub fn len(&self) -> usize {
        match self {
            Self::Discrete { atoms, .. } => atoms.len(),
            Self::Continuous { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Discrete { .. })
    }
}

/// Draw `n` independent outputs of the mechanism on `db`.
pub fn sample<R: Rng + ?Sized>(
    spec: &MechanismSpec,
    db: &Database,
    n: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    spec.validate()?;
    if n == 0 {
        return Err(AuditError::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    match *spec {
        MechanismSpec::Laplace { b } => {
            let s = db.sum();
            Ok(SampleSet::Continuous {
                values: (0..n).map(|_| s + laplace_noise(b, rng)).collect(),
            })
        }
        MechanismSpec::Gaussian { b } => {
            let s = db.sum();
            Ok(SampleSet::Continuous {
                values: (0..n)
                    .map(|_| s + b * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            })
        }
        MechanismSpec::SubsampledLaplace { b, gamma } => Ok(SampleSet::Continuous {
            values: (0..n)
                .map(|_| subsampled_sum(db, gamma, rng) + laplace_noise(b, rng))
                .collect(),
        }),
        MechanismSpec::SubsampledGaussian { b, gamma } => Ok(SampleSet::Continuous {
            values: (0..n)
                .map(|_| subsampled_sum(db, gamma, rng) + b * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }),
        MechanismSpec::RandomizedResponse { eps0 } => {
            require_binary(db)?;
            if db.len() > MAX_RR_BITS {
                return Err(AuditError::InvalidArgument(format!(
                    "randomized response alphabet 2^{} exceeds the supported 2^{MAX_RR_BITS}",
                    db.len()
                )));
            }
            let keep = keep_probability(eps0);
            let atoms = (0..n)
                .map(|_| {
                    let mut encoded = 0u64;
                    for (i, &x) in db.entries().iter().enumerate() {
                        let bit = randomize_bit(x, keep, rng);
                        encoded |= (bit as u64) << i;
                    }
                    encoded
                })
                .collect();
            Ok(SampleSet::Discrete {
                atoms,
                alphabet_size: 1u64 << db.len(),
            })
        }
        MechanismSpec::ShuffledRandomizedResponse { eps0 } => {
            require_binary(db)?;
            let keep = keep_probability(eps0);
            // The shuffled multiset of binary responses is characterized by
            // its count of ones.
            let atoms = (0..n)
                .map(|_| {
                    db.entries()
                        .iter()
                        .map(|&x| randomize_bit(x, keep, rng) as u64)
                        .sum()
                })
                .collect();
            Ok(SampleSet::Discrete {
                atoms,
                alphabet_size: db.len() as u64 + 1,
            })
        }
        MechanismSpec::NoisyGradientDescent {
            eta,
            b,
            iterations,
            theta0,
        } => {
            let mean = db.mean();
            let step_noise = (2.0 * eta).sqrt() * b;
            let values = (0..n)
                .map(|_| {
                    let mut theta = theta0;
                    for _ in 0..iterations {
                        // Squared loss l(theta, x_i) = (theta - x_i)^2 / 2 on
                        // Theta = R, so the averaged gradient is theta - mean.
                        theta -= eta * (theta - mean);
                        theta += step_noise * rng.sample::<f64, _>(StandardNormal);
                    }
                    theta
                })
                .collect();
            Ok(SampleSet::Continuous { values })
        }
    }
}

fn require_binary(db: &Database) -> Result<()> {
    if db.is_binary() {
        Ok(())
    } else {
        Err(AuditError::InvalidArgument(
            "randomized response requires a binary database".into(),
        ))
    }
}

/// P(response = input) = exp(eps0) / (1 + exp(eps0)), computed without
/// overflow for large eps0.
fn keep_probability(eps0: f64) -> f64 {
    1.0 / (1.0 + (-eps0).exp())
}

fn randomize_bit<R: Rng + ?Sized>(x: f64, keep: f64, rng: &mut R) -> u8 {
    let bit = x as u8;
    if rng.gen_bool(keep) {
        bit
    } else {
        1 - bit
    }
}

fn subsampled_sum<R: Rng + ?Sized>(db: &Database, gamma: f64, rng: &mut R) -> f64 {
    db.entries().iter().filter(|_| rng.gen_bool(gamma)).sum()
}

/// Lap(0, b) noise via the inverse CDF of a uniform on (0,1).
fn laplace_noise<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let centered = u - 0.5;
    -b * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}
