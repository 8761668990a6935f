//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use rbme::adaptive::{adaptive_estimate, AdaptiveConfig};
use rbme::estimators::{estimate_mean_shift, estimate_two_level, EstimatorKind};
use rbme::hardness::{build_h0_h1, build_h2_h3, indistinguishability_check, symmetrize};
use rbme::harness::{fit_scaling, median, rows_to_csv, run_experiment, ExperimentConfig, ExperimentRow};
use rbme::linalg::{self, truncate, Points};
use rbme::model::{
    apply_mean_shift, budget_ceil, sample_clean, Adversary, BatchDataset, CleanSpec, CorruptionPlan, PullMagnitude,
    Strategy, Variant,
};
use rbme::oracle::{brute_force_subset_mean, brute_force_two_level};
use rbme::rng::derive_seed;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(d: usize, users: usize, n: usize, seed: u64) -> BatchDataset {
    sample_clean(&CleanSpec::isotropic(d), users, n, seed).unwrap()
}

fn rate(d: usize, n: usize, users: usize) -> f64 {
    (d as f64 / (n * users) as f64).sqrt()
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).expect("acceptance config parses")
}

fn slope_check(rows: &[ExperimentRow], x: &str, estimator: EstimatorKind) -> (bool, String) {
    match fit_scaling(rows, x, estimator) {
        Ok(fit) => {
            let medians: Vec<String> = fit.points.iter().map(|(x, y)| format!("{x}:{y:.4}")).collect();
            (
                (0.35..=0.65).contains(&fit.slope),
                format!("{estimator} slope {:.3} (r2 {:.3}; medians {})", fit.slope, fit.r2, medians.join(" ")),
            )
        }
        Err(e) => (false, format!("{estimator} fit failed: {e}")),
    }
}

fn c1_clean_rate() -> Outcome {
    let (d, n, users) = (16, 16, 200);
    let bound = 3.0 * rate(d, n, users);
    let runs: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|t| {
            let ds = gaussian(d, users, n, derive_seed(101, t));
            let ms = estimate_mean_shift(&ds, 0.0, 0.0).unwrap();
            let tl = estimate_two_level(&ds, 0.0, 0.0).unwrap();
            (ms.error(&ds.target_mean), ms.weights.all_one(), tl.error(&ds.target_mean), tl.weights.all_one())
        })
        .collect();
    let med_ms = median(&mut runs.iter().map(|r| r.0).collect::<Vec<_>>());
    let med_tl = median(&mut runs.iter().map(|r| r.2).collect::<Vec<_>>());
    let ones_ms = runs.iter().filter(|r| r.1).count();
    let ones_tl = runs.iter().filter(|r| r.3).count();
    outcome(
        med_ms <= bound && med_tl <= bound && ones_ms >= 95 && ones_tl >= 95,
        format!(
            "median error mean-shift {med_ms:.4}, two-level {med_tl:.4} (bound {bound:.4}); untouched weights {ones_ms}/100, {ones_tl}/100"
        ),
    )
}

const EPS_SWEEP: &str = r#"
base_seed = 202
workers = 4
[grid]
d = 16
n = 16
N = 400
eps = [0.01, 0.02, 0.04, 0.08]
alpha = 0.0
variant = "two-level"
adversary = "mean-pull"
estimators = ["two-level"]
trials = 100
[data]
covariance_scale = 0.1
[adversary]
user_magnitude = "stealth:0.75"
"#;

fn c2_eps_scaling() -> Outcome {
    let rows = run_experiment(&config(EPS_SWEEP)).unwrap();
    let (pass, detail) = slope_check(&rows, "eps", EstimatorKind::TwoLevel);
    outcome(pass, detail)
}

const ALPHA_SWEEP_SHIFT: &str = r#"
base_seed = 303
workers = 4
[grid]
d = 16
n = 100
N = 100
eps = 0.0
alpha = [0.01, 0.02, 0.04, 0.08]
variant = "mean-shift"
adversary = "mean-pull"
estimators = ["mean-shift"]
trials = 100
[adversary]
shift_pattern = "aligned"
"#;

const ALPHA_SWEEP_TWO_LEVEL: &str = r#"
base_seed = 304
workers = 4
[grid]
d = 16
n = 100
N = 100
eps = 0.0
alpha = [0.01, 0.02, 0.04, 0.08]
variant = "two-level"
adversary = "mean-pull"
estimators = ["two-level"]
trials = 100
[adversary]
sample_magnitude = "stealth:0.6"
"#;

fn c3_alpha_scaling() -> Outcome {
    let shift = run_experiment(&config(ALPHA_SWEEP_SHIFT)).unwrap();
    let two = run_experiment(&config(ALPHA_SWEEP_TWO_LEVEL)).unwrap();
    let (p1, d1) = slope_check(&shift, "alpha", EstimatorKind::MeanShift);
    let (p2, d2) = slope_check(&two, "alpha", EstimatorKind::TwoLevel);
    outcome(p1 && p2, format!("{d1}; {d2}"))
}

const BATCH_ADVANTAGE: &str = r#"
base_seed = 404
workers = 4
[grid]
d = 16
n = 25
N = 400
eps = 0.08
alpha = 0.04
variant = "two-level"
adversary = "mean-pull"
estimators = ["pooled", "two-level"]
trials = 100
[adversary]
user_magnitude = "stealth:16.25"
sample_magnitude = "stealth:0.15"
"#;

/// `P[Bin(trials, 1/2) >= wins]`.
fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut coef = 1.0f64;
    let mut total = 0.0;
    for k in 0..=trials {
        if k > 0 {
            coef = coef * (trials - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            total += coef;
        }
    }
    total / 2f64.powi(trials as i32)
}

fn c4_batch_advantage() -> Outcome {
    let rows = run_experiment(&config(BATCH_ADVANTAGE)).unwrap();
    let pooled: Vec<&ExperimentRow> = rows.iter().filter(|r| r.estimator == EstimatorKind::Pooled).collect();
    let two: Vec<&ExperimentRow> = rows.iter().filter(|r| r.estimator == EstimatorKind::TwoLevel).collect();
    let wins = pooled
        .iter()
        .zip(&two)
        .filter(|(p, t)| {
            assert_eq!(p.seed, t.seed);
            t.error_l2 < p.error_l2
        })
        .count();
    let med_p = median(&mut pooled.iter().map(|r| r.error_l2).collect::<Vec<_>>());
    let med_t = median(&mut two.iter().map(|r| r.error_l2).collect::<Vec<_>>());
    let p = sign_test_p(wins, pooled.len());
    outcome(
        med_t < med_p && p < 0.05,
        format!("median two-level {med_t:.4} vs pooled {med_p:.4}; two-level better in {wins}/{} (sign test p = {p:.2e})", pooled.len()),
    )
}

fn c5_oracle_equivalence() -> Outcome {
    let within = |filter: f64, oracle: f64| filter <= 1.5 * oracle + 1e-6;

    let (users, n, d, eps, alpha) = (10, 4, 3, 0.1, 0.02);
    let shift_hits = (0..50u64)
        .into_par_iter()
        .filter(|&t| {
            let seed = derive_seed(505, t);
            let clean = gaussian(d, users, n, seed);
            let plan = CorruptionPlan::new(Variant::MeanShift, eps, alpha, Adversary::new(Strategy::MeanPull), seed + 1);
            let ds = plan.apply(&clean).unwrap();
            let filter = estimate_mean_shift(&ds, eps, alpha).unwrap().error(&ds.target_mean);
            let means = ds.batch_means();
            let k = budget_ceil(1.0 - eps, users);
            let oracle = brute_force_subset_mean(Points::new(&means, d).unwrap(), k).unwrap();
            within(filter, linalg::distance(&oracle.mean, &ds.target_mean))
        })
        .count();

    let (users, n, d, eps, alpha) = (8, 4, 3, 1.0 / 8.0, 1.0 / 4.0);
    let two_hits = (0..50u64)
        .into_par_iter()
        .filter(|&t| {
            let seed = derive_seed(506, t);
            let clean = gaussian(d, users, n, seed);
            let plan = CorruptionPlan::new(Variant::TwoLevel, eps, alpha, Adversary::new(Strategy::MeanPull), seed + 1);
            let ds = plan.apply(&clean).unwrap();
            let filter = estimate_two_level(&ds, eps, alpha).unwrap().error(&ds.target_mean);
            let oracle = brute_force_two_level(&ds, eps, alpha).unwrap();
            within(filter, linalg::distance(&oracle.mean, &ds.target_mean))
        })
        .count();
    outcome(
        shift_hits >= 45 && two_hits >= 45,
        format!("filter within 1.5x of oracle: mean-shift {shift_hits}/50, two-level {two_hits}/50"),
    )
}

fn c6_truncation() -> Outcome {
    let (d, eps, m) = (8, 0.1f64, 200);
    let radius = 2.0 * (d as f64 / eps).sqrt();
    let center = vec![0.0; d];
    let reps: Vec<(f64, f64)> = (0..1000u64)
        .into_par_iter()
        .map(|t| {
            let ds = gaussian(d, m, 1, derive_seed(606, t));
            let (kept, changed) = truncate(ds.points(), &center, radius).unwrap();
            let mean = linalg::empirical_mean(Points::new(&kept, d).unwrap(), None).unwrap();
            (changed as f64 / m as f64, linalg::norm(&mean))
        })
        .collect();
    let frac = reps.iter().map(|r| r.0).sum::<f64>() / reps.len() as f64;
    let worst = reps.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        frac <= eps / 3.0 && worst <= 2.0 * eps.sqrt(),
        format!(
            "mean truncated fraction {frac:.2e} (bound {:.4}); largest mean shift {worst:.4} (bound {:.4})",
            eps / 3.0,
            2.0 * eps.sqrt()
        ),
    )
}

fn c7_certificates() -> Outcome {
    let (d, n, users, eps, alpha) = (16, 16, 1000, 0.05, 0.01);
    assert!((n * users) as f64 >= 10.0 * d as f64 / alpha);
    let user_target = 1.0 / n as f64 + rbme::estimators::tau_rule(eps, alpha, users);
    let hits = (0..100u64)
        .into_par_iter()
        .filter(|&t| {
            let ds = gaussian(d, users, n, derive_seed(707, t));
            let r = rbme::estimators::estimate_naive(&ds).unwrap();
            r.certificate_sample.unwrap() <= 2.0 && r.certificate_user.unwrap() <= user_target
        })
        .count();
    outcome(hits >= 95, format!("both certificates hold in {hits}/100 clean datasets"))
}

fn c8_hardness() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..5u64 {
        let (eps, n) = (0.04, 16);
        let user_pair = build_h0_h1(eps, n, 200, 16, derive_seed(808, seed)).unwrap();
        let (alpha, m) = (0.04, 100);
        let sample_pair = build_h2_h3(alpha, m, 100, 16, derive_seed(809, seed)).unwrap();
        for (pair, expected) in [(&user_pair, (eps / n as f64).sqrt()), (&sample_pair, alpha.sqrt())] {
            let identical = pair
                .dataset_a
                .data
                .iter()
                .zip(&pair.dataset_b.data)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            ok &= identical && pair.coupled;
            ok &= (pair.separation - expected).abs() <= f64::EPSILON * expected;
            for kind in EstimatorKind::ALL {
                let r = indistinguishability_check(pair, kind).unwrap();
                if r.max_error < pair.separation / 2.0 {
                    ok = false;
                    notes.push(format!("{kind} max error {:.4}", r.max_error));
                }
            }
        }
    }
    outcome(
        ok,
        if notes.is_empty() {
            "5 user-level and 5 sample-level pairs: identical observations, exact separations, every estimator errs by at least half the separation".into()
        } else {
            notes.join("; ")
        },
    )
}

fn c9_adaptivity() -> Outcome {
    let (d, n, users, eps, m) = (4, 16, 800, 0.04, 400);
    let cfg = AdaptiveConfig::default();
    let total = (n * users) as f64;
    let guess_bound = (cfg.eps0 * total).log2() + (cfg.alpha0 * total).log2() + 2.0;
    let runs: Vec<(bool, bool)> = (0..100u64)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(909, t);
            let clean = gaussian(d, users, n, seed);
            let plan = CorruptionPlan::new(Variant::TwoLevel, eps, 0.0, Adversary::new(Strategy::MeanPull), seed + 1);
            let ds = plan.apply(&clean).unwrap();
            let holdout = gaussian(d, m, 1, seed + 2).data;
            let out = adaptive_estimate(&ds, Points::new(&holdout, d).unwrap(), &cfg).unwrap();
            let known = estimate_two_level(&ds, eps, 0.0).unwrap().error(&ds.target_mean);
            let err = linalg::distance(&out.estimate, &ds.target_mean);
            let good = out.accepted && (eps / 2.0..=4.0 * eps).contains(&out.eps_hat) && err <= 2.0 * known;
            (good, out.guesses_tried as f64 <= guess_bound)
        })
        .collect();
    let hits = runs.iter().filter(|r| r.0).count();
    let bounded = runs.iter().all(|r| r.1);
    outcome(
        hits >= 80 && bounded,
        format!("eps_hat in range with error within 2x of the known-budget run: {hits}/100; guess budget respected: {bounded}"),
    )
}

const DETERMINISM: &str = r#"
base_seed = 1010
workers = 1
[grid]
d = 8
n = 10
N = 60
eps = [0.05, 0.1]
alpha = [0.0, 0.05]
variant = ["two-level", "mean-shift"]
adversary = ["mean-pull", "cluster", "zero-out"]
estimators = ["naive", "pooled", "mean-shift", "two-level"]
trials = 3
"#;

fn c10_determinism() -> Outcome {
    let mut cfg = config(DETERMINISM);
    let a = rows_to_csv(&run_experiment(&cfg).unwrap()).unwrap();
    let b = rows_to_csv(&run_experiment(&cfg).unwrap()).unwrap();
    cfg.workers = 4;
    let c = rows_to_csv(&run_experiment(&cfg).unwrap()).unwrap();
    let same = a == b && a == c;

    let worst = (0..20u64)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(1011, t);
            let clean = gaussian(6, 50, 12, seed);
            let variant = if t % 2 == 0 { Variant::TwoLevel } else { Variant::MeanShift };
            let strategy = [Strategy::MeanPull, Strategy::Cluster, Strategy::ZeroOut][t as usize % 3];
            let adversary = Adversary::new(strategy).with_magnitude(PullMagnitude::Fixed(5.0));
            let ds = CorruptionPlan::new(variant, 0.06, 0.05, adversary, seed + 1).apply(&clean).unwrap();
            let ds = if t % 4 == 1 { apply_mean_shift(&ds, 0.01, seed + 2).unwrap() } else { ds };
            let sym = symmetrize(&ds, seed + 3);
            EstimatorKind::ALL
                .iter()
                .map(|k| {
                    let x = k.run(&ds, 0.06, 0.05).unwrap().estimate;
                    let y = k.run(&sym, 0.06, 0.05).unwrap().estimate;
                    linalg::distance(&x, &y)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    outcome(
        same && worst <= 1e-6,
        format!("CSV byte-identical across runs and worker counts: {same}; largest symmetrization change {worst:.2e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 clean-data rate", c1_clean_rate),
        ("2 eps scaling", c2_eps_scaling),
        ("3 alpha scaling", c3_alpha_scaling),
        ("4 batch-structure advantage", c4_batch_advantage),
        ("5 oracle equivalence", c5_oracle_equivalence),
        ("6 truncation", c6_truncation),
        ("7 certificate satisfiability", c7_certificates),
        ("8 hardness coupling", c8_hardness),
        ("9 adaptivity", c9_adaptivity),
        ("10 determinism and invariance", c10_determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let started = Instant::now();
    let mut failed = 0;
    for (name, check) in criteria {
        let id = name.split_whitespace().next().unwrap();
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {failed} failed, total {:.1}s", started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
