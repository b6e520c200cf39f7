//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured values (visible with `--nocapture`).
//!
//! Criterion 5 reproduces paper-scale spot checks and is `#[ignore]`d as a
//! long-running CI tier; run it with `cargo test --test acceptance --
//! --ignored`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rdp_audit::density::{
    fit_kde, fit_rfe, make_joint_grid, select_bandwidth, BandwidthRule, DensityEstimate, KernelKind,
};
use rdp_audit::divergence::{
    discrete_pair, grid_from_fn, lower_bound, normal_cdf, normal_quantile, renyi_exact,
    renyi_plugin, softmax_deriv, softmax_floor, variance_estimate, EstimatorConfig, FloorParams,
};
use rdp_audit::harness::{records_to_csv, run_experiment_with_threads, run_sweep, ExperimentPlan};
use rdp_audit::mechanisms::{default_adjacent_pair, sample, MechanismSpec, SampleSet};
use rdp_audit::oracles::{
    div_shuffled_rr, eps_gaussian, eps_laplace, eps_rr, eps_subsampled, renyi_numeric_reference,
    SubsampleFormula,
};

const MASTER_SEED: u64 = 42;

fn laplace_pdf(mu: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |t| (-(t - mu).abs() / b).exp() / (2.0 * b)
}

fn desk_plan(mechanism: MechanismSpec, lambdas: Vec<f64>, n: usize, reps: u32) -> ExperimentPlan {
    let mut plan = ExperimentPlan::with_defaults(mechanism, lambdas, MASTER_SEED).unwrap();
    plan.samples_per_side = n;
    plan.replications = reps;
    plan
}

#[test]
fn criterion_1_oracle_cross_checks() {
    let started = Instant::now();

    assert_eq!(eps_gaussian(2.0, 5.0).unwrap(), 0.04);
    assert_eq!(eps_gaussian(5.0, 5.0).unwrap(), 0.1);

    let laplace_quad =
        renyi_numeric_reference(laplace_pdf(1.0, 5.0), laplace_pdf(0.0, 5.0), 2.0).unwrap();
    let laplace_closed = eps_laplace(2.0, 5.0).unwrap();
    assert!(
        (laplace_closed - laplace_quad).abs() < 1e-6,
        "laplace closed form {laplace_closed} vs quadrature {laplace_quad}"
    );

    // Independent straight-line re-derivation of the shuffled RR value at
    // lambda 2: log(1 + (e^1.5 - 1)^2 / (10 e^1.5)).
    let e = 1.5f64.exp();
    let rederived = ((e - 1.0) * (e - 1.0) / (10.0 * e)).ln_1p();
    let shuffled = div_shuffled_rr(2.0, 1.5, 10).unwrap();
    assert!(
        (shuffled - rederived).abs() < 1e-9,
        "shuffled rr {shuffled} vs re-derivation {rederived}"
    );
    assert!((shuffled - 0.239397).abs() < 1e-6);

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "criterion 1 took {elapsed:?}");
    println!(
        "criterion 1: PASS — gaussian 0.04/0.1 exact, laplace |closed-quad| = {:.2e}, shuffled |closed-rederived| = {:.2e}, {:?}",
        (laplace_closed - laplace_quad).abs(),
        (shuffled - rederived).abs(),
        elapsed
    );
}

#[test]
fn criterion_2_amplification_claims() {
    let started = Instant::now();

    // Poisson subsampling at gamma = 0.5 cuts the privacy parameter of
    // both base mechanisms by more than 70% at each studied order (exact
    // order-j normalization).
    for lambda in [2.0, 5.0, 7.0] {
        for (name, base) in [
            (
                "gaussian",
                &eps_gaussian as &dyn Fn(f64, f64) -> rdp_audit::Result<f64>,
            ),
            ("laplace", &eps_laplace),
        ] {
            let eps0 = base(lambda, 5.0).unwrap();
            let amplified =
                eps_subsampled(lambda, 0.5, |j| base(j, 5.0), SubsampleFormula::OrderJ).unwrap();
            assert!(
                amplified < 0.3 * eps0,
                "{name} lambda {lambda}: {amplified} not below 30% of {eps0}"
            );
        }
    }

    // Shuffling cuts the randomized-response divergence by more than 60%.
    for lambda in [2.0, 5.0, 7.0] {
        let shuffled = div_shuffled_rr(lambda, 1.5, 10).unwrap();
        let plain = eps_rr(lambda, 1.5).unwrap();
        assert!(
            shuffled < 0.4 * plain,
            "lambda {lambda}: {shuffled} not below 40% of {plain}"
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "criterion 2 took {elapsed:?}");
    println!("criterion 2: PASS — subsampling > 70% and shuffling > 60% reductions at lambda 2, 5, 7, {elapsed:?}");
}

#[test]
fn criterion_3_property_suites() {
    let started = Instant::now();

    // Softmax floor: dominates the hard max, overshoot at most 2/beta,
    // 1-Lipschitz, derivative matches finite differences to 1e-6.
    for (tau, beta) in [(1e-5, 1e5), (1e-3, 1e3), (0.5, 10.0)] {
        let floor = FloorParams::new(tau, beta).unwrap();
        let delta = 1e-6 / beta;
        for i in -300..=300 {
            let t = i as f64 * 0.01 + tau;
            let v = softmax_floor(t, &floor);
            assert!(v >= t.max(tau));
            assert!(v - t.max(tau) <= 2.0 / beta);
            let fd = (softmax_floor(t + delta, &floor) - softmax_floor(t - delta, &floor))
                / (2.0 * delta);
            assert!((fd - softmax_deriv(t, &floor)).abs() < 1e-6);
            let u = t + 0.37;
            assert!(
                (softmax_floor(t, &floor) - softmax_floor(u, &floor)).abs()
                    <= (t - u).abs() + 1e-12
            );
        }
    }

    // RFE normalization to 1e-12.
    let pair = default_adjacent_pair(10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let rr = sample(
        &MechanismSpec::RandomizedResponse { eps0: 1.5 },
        pair.left(),
        200_000,
        &mut rng,
    )
    .unwrap();
    let table = fit_rfe(&rr).unwrap();
    assert!((table.masses().iter().sum::<f64>() - 1.0).abs() <= 1e-12);

    // KDE grid mass within 0.02 of 1 for both kernels.
    let gauss_sample = SampleSet::Continuous {
        values: (0..100_000)
            .map(|_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal))
            .collect(),
    };
    let rule = BandwidthRule::default();
    let h = select_bandwidth(&gauss_sample, &rule).unwrap();
    let grid = make_joint_grid(&gauss_sample, &gauss_sample, h, 1000).unwrap();
    for kernel in [KernelKind::Gaussian, KernelKind::Silverman] {
        let kde = fit_kde(&gauss_sample, kernel, h, grid).unwrap();
        assert!(
            (kde.mass() - 1.0).abs() < 0.02,
            "{kernel:?} mass {}",
            kde.mass()
        );
    }

    // Variance components above -1e-9 before clamping, and the discrete
    // path within 1e-10 of a brute-force mirror, on a deterministic family
    // of tables over alphabets up to 16 atoms.
    let floor = FloorParams::new(1e-5, 1e5).unwrap();
    for size in 2..=16usize {
        let raw_p: Vec<f64> = (0..size).map(|i| 1.0 + ((i * 7 + 3) % 11) as f64).collect();
        let raw_q: Vec<f64> = (0..size).map(|i| 1.0 + ((i * 5 + 1) % 13) as f64).collect();
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let pm = norm(&raw_p);
        let qm = norm(&raw_q);
        let (p, q) = discrete_pair(&pm, &qm).unwrap();
        for lambda in [1.5, 2.0, 5.0, 7.0] {
            let var = variance_estimate(&p, &q, lambda, &floor).unwrap();
            assert!(var.first_component >= -1e-9);
            assert!(var.second_component >= -1e-9);

            let plugin = renyi_plugin(&p, &q, lambda, &floor).unwrap();
            let brute: f64 = pm
                .iter()
                .zip(&qm)
                .map(|(a, b)| a.powf(lambda) * softmax_floor(*b, &floor).powf(1.0 - lambda))
                .sum::<f64>()
                .ln()
                / (lambda - 1.0);
            assert!(
                (plugin - brute).abs() < 1e-10,
                "size {size} lambda {lambda}"
            );
        }
    }

    // Plug-in divergence monotone nonincreasing in tau on fixed samples.
    let mut rng_p = ChaCha8Rng::seed_from_u64(MASTER_SEED + 1);
    let mut rng_q = ChaCha8Rng::seed_from_u64(MASTER_SEED + 2);
    let spec = MechanismSpec::ShuffledRandomizedResponse { eps0: 1.5 };
    let sp = sample(&spec, pair.left(), 100_000, &mut rng_p).unwrap();
    let sq = sample(&spec, pair.right(), 100_000, &mut rng_q).unwrap();
    let p_hat = DensityEstimate::Discrete(fit_rfe(&sp).unwrap());
    let q_hat = DensityEstimate::Discrete(fit_rfe(&sq).unwrap());
    let mut last = f64::INFINITY;
    for tau in [1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2] {
        let v = renyi_plugin(&p_hat, &q_hat, 2.0, &FloorParams::new(tau, 1e5).unwrap()).unwrap();
        assert!(v <= last + 1e-12, "plug-in increased at tau {tau}");
        last = v;
    }

    // Rényi divergence monotone in lambda on exact densities.
    let start = -80.0;
    let points = 8000;
    let step = 162.0 / (points - 1) as f64;
    let lap_p =
        DensityEstimate::Grid(grid_from_fn(start, step, points, laplace_pdf(1.0, 5.0)).unwrap());
    let lap_q =
        DensityEstimate::Grid(grid_from_fn(start, step, points, laplace_pdf(0.0, 5.0)).unwrap());
    let (disc_p, disc_q) = discrete_pair(&[0.6, 0.3, 0.1], &[0.2, 0.5, 0.3]).unwrap();
    for (p, q) in [(&lap_p, &lap_q), (&disc_p, &disc_q)] {
        let mut lastv = f64::NEG_INFINITY;
        for lambda in [1.5, 2.0, 3.0, 5.0, 7.0] {
            let v = renyi_exact(p, q, lambda).unwrap();
            assert!(
                v >= lastv - 1e-12,
                "divergence decreased at lambda {lambda}"
            );
            lastv = v;
        }
    }

    // Normal quantile round-trips through the CDF to 1e-9.
    for alpha in [0.001, 0.01, 0.05, 0.5, 0.95] {
        let x = normal_quantile(alpha).unwrap();
        assert!((normal_cdf(x) - alpha).abs() < 1e-9);
    }

    // Bit-identical reruns under a fixed seed at 1, 2 and 4 worker
    // threads; the CSV is compared byte-for-byte after dropping the
    // hardware-dependent wall-time column.
    let plan = desk_plan(
        MechanismSpec::ShuffledRandomizedResponse { eps0: 1.5 },
        vec![2.0],
        20_000,
        6,
    );
    let strip_seconds = |csv: &str| -> String {
        csv.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let (rec1, _) = run_experiment_with_threads(&plan, Some(1)).unwrap();
    let baseline = strip_seconds(&records_to_csv("rr-shuffled", &rec1));
    for threads in [2usize, 4] {
        let (rec, _) = run_experiment_with_threads(&plan, Some(threads)).unwrap();
        assert_eq!(
            baseline,
            strip_seconds(&records_to_csv("rr-shuffled", &rec)),
            "csv differs at {threads} threads"
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "criterion 3 took {elapsed:?}");
    println!("criterion 3: PASS — softmax/RFE/KDE/variance/monotonicity/quantile/determinism properties hold, {elapsed:?}");
}

#[test]
fn criterion_4_desk_scale_coverage() {
    let started = Instant::now();
    let mechanisms = [
        MechanismSpec::Laplace { b: 5.0 },
        MechanismSpec::Gaussian { b: 5.0 },
        MechanismSpec::SubsampledLaplace { b: 5.0, gamma: 0.5 },
        MechanismSpec::SubsampledGaussian { b: 5.0, gamma: 0.5 },
        MechanismSpec::RandomizedResponse { eps0: 1.5 },
        MechanismSpec::ShuffledRandomizedResponse { eps0: 1.5 },
        MechanismSpec::NoisyGradientDescent {
            eta: 0.2,
            b: 1.0,
            iterations: 10,
            theta0: 0.0,
        },
    ];
    for mechanism in mechanisms {
        let plan = desk_plan(mechanism, vec![2.0], 1_000_000, 200);
        let (_, stats) = run_experiment_with_threads(&plan, None).unwrap();
        let s = &stats[0];
        assert!(
            s.alpha_hat <= 0.10,
            "{}: alpha_hat {} above 0.10",
            mechanism.cli_name(),
            s.alpha_hat
        );
        assert!(
            s.ratio_median >= 0.85,
            "{}: median ratio {} below 0.85",
            mechanism.cli_name(),
            s.ratio_median
        );
        println!(
            "criterion 4 [{}]: alpha_hat = {:.3}, median ratio = {:.4}",
            mechanism.cli_name(),
            s.alpha_hat,
            s.ratio_median
        );
    }
    println!(
        "criterion 4: PASS — all seven mechanisms within the desk-scale coverage band, {:?}",
        started.elapsed()
    );
}

/// Paper-scale spot reproduction; long-running, opt-in CI tier.
#[test]
#[ignore = "paper-scale statistical tier; run with --ignored"]
fn criterion_5_paper_scale_spot_reproduction() {
    let started = Instant::now();

    let plan = desk_plan(MechanismSpec::Laplace { b: 5.0 }, vec![2.0], 5_000_000, 200);
    let (_, stats) = run_experiment_with_threads(&plan, None).unwrap();
    let s = &stats[0];
    assert!(s.alpha_hat <= 0.03, "laplace alpha_hat {}", s.alpha_hat);
    assert!(s.ratio_median >= 0.95, "laplace median {}", s.ratio_median);
    println!(
        "criterion 5 [laplace]: alpha_hat = {:.3}, median ratio = {:.4}",
        s.alpha_hat, s.ratio_median
    );

    let plan = desk_plan(
        MechanismSpec::RandomizedResponse { eps0: 1.5 },
        vec![2.0],
        5_000_000,
        200,
    );
    let (_, stats) = run_experiment_with_threads(&plan, None).unwrap();
    let s = &stats[0];
    let iqr = s.ratio_q75 - s.ratio_q25;
    assert!(s.alpha_hat <= 0.02, "rr alpha_hat {}", s.alpha_hat);
    assert!(iqr < 0.01, "rr interquartile ratio width {iqr}");
    println!(
        "criterion 5 [rr]: alpha_hat = {:.3}, ratio IQR = {:.5}",
        s.alpha_hat, iqr
    );
    println!(
        "criterion 5: PASS — paper-scale Laplace and RR bands reproduced, {:?}",
        started.elapsed()
    );
}

#[test]
fn criterion_6_floor_sweep_reduces_bias() {
    let started = Instant::now();
    // Protocol-scale samples: the finer floor must improve the median
    // ratio at every studied order.
    let plan = desk_plan(
        MechanismSpec::ShuffledRandomizedResponse { eps0: 1.5 },
        vec![2.0, 5.0, 7.0],
        5_000_000,
        200,
    );
    let floors = [
        FloorParams::new(1e-5, 1e5).unwrap(),
        FloorParams::new(5e-6, 1.0 / 5e-6).unwrap(),
    ];
    let swept = run_sweep(&plan, &floors).unwrap();
    let coarse = &swept[0].2;
    let fine = &swept[1].2;
    for (c, f) in coarse.iter().zip(fine) {
        assert!(
            f.ratio_median > c.ratio_median,
            "lambda {}: fine floor median {} not above coarse {}",
            c.lambda,
            f.ratio_median,
            c.ratio_median
        );
        println!(
            "criterion 6 [lambda {}]: median {:.6} (tau 1e-5) -> {:.6} (tau 5e-6)",
            c.lambda, c.ratio_median, f.ratio_median
        );
    }
    println!("criterion 6: PASS — finer floor strictly improves the median ratio at lambda 2, 5, 7, {:?}", started.elapsed());
}

/// The dual-route check behind criterion 1's Gaussian values: the plug-in
/// pipeline on exact grids agrees with both the closed form and the
/// quadrature reference.
#[test]
fn exact_grid_pipeline_agrees_with_oracles() {
    let normal_pdf = |mu: f64, sd: f64| {
        move |t: f64| {
            (-0.5 * ((t - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        }
    };
    let start = -60.0;
    let points = 6000;
    let step = 122.0 / (points - 1) as f64;
    let p = DensityEstimate::Grid(grid_from_fn(start, step, points, normal_pdf(1.0, 5.0)).unwrap());
    let q = DensityEstimate::Grid(grid_from_fn(start, step, points, normal_pdf(0.0, 5.0)).unwrap());
    let grid_value = renyi_exact(&p, &q, 2.0).unwrap();
    assert!((grid_value - 0.04).abs() < 1e-4, "{grid_value}");
}

/// End-to-end smoke check that a single continuous lower bound lands near
/// its target at modest sample size.
#[test]
fn single_bound_smoke_check() {
    let pair = default_adjacent_pair(10).unwrap();
    let spec = MechanismSpec::Laplace { b: 5.0 };
    let mut rng_p = ChaCha8Rng::seed_from_u64(MASTER_SEED + 10);
    let mut rng_q = ChaCha8Rng::seed_from_u64(MASTER_SEED + 11);
    let sp = sample(&spec, pair.left(), 200_000, &mut rng_p).unwrap();
    let sq = sample(&spec, pair.right(), 200_000, &mut rng_q).unwrap();
    let config = EstimatorConfig::with_defaults(2.0).unwrap();
    let bound = lower_bound(&sp, &sq, &config).unwrap();
    let truth = eps_laplace(2.0, 5.0).unwrap();
    assert!(bound.lower_bound > 0.5 * truth && bound.lower_bound < 1.1 * truth);
    assert!(bound.lower_bound <= bound.plugin_divergence);
}
