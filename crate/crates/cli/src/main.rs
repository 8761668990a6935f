use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rbme::adaptive::{adaptive_estimate, AdaptiveConfig};
use rbme::estimators::EstimatorKind;
use rbme::hardness::{build_h0_h1, build_h2_h3, indistinguishability_check, HypothesisPair};
use rbme::harness::{emit_svg, fit_scaling, read_csv, run_experiment, write_csv, ExperimentConfig};
use rbme::io::{read_dataset, write_csv as write_dataset_csv, write_dataset};
use rbme::linalg::Points;
use rbme::model::{sample_clean, Adversary, CleanSpec, CorruptionPlan, PullMagnitude, ShiftPattern, Strategy, Variant};
use rbme::{Error, Result};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "rbme", version, about = "Robust mean estimation from untrusted batches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    /// Whole users are erased (separation sqrt(eps/n)).
    User,
    /// Individual samples are erased (separation sqrt(alpha)).
    Sample,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset, corrupt it and write it as an RBME file.
    Generate {
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long = "users", short = 'N', default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value = "two-level")]
        variant: Variant,
        #[arg(long, default_value = "mean-pull")]
        adversary: Strategy,
        /// "auto", a positive radius, or "stealth:<kappa>".
        #[arg(long, default_value = "auto")]
        user_magnitude: PullMagnitude,
        #[arg(long)]
        sample_magnitude: Option<PullMagnitude>,
        #[arg(long, default_value_t = 1.0)]
        covariance_scale: f64,
        #[arg(long)]
        aligned_shift: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also export the observed values as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run one estimator on a dataset file and print a JSON report.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "two-level")]
        estimator: EstimatorKind,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 3 when the filter does not certify its output.
        #[arg(long)]
        strict: bool,
    },
    /// Run a Monte Carlo grid from a TOML config and write CSV rows.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_path` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides `base_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also draw median error against this parameter.
        #[arg(long, requires = "x")]
        svg: Option<PathBuf>,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        strict: bool,
    },
    /// Search for unknown corruption levels using a clean holdout file.
    Adaptive {
        #[arg(long)]
        input: PathBuf,
        /// RBME file whose observations are trusted.
        #[arg(long)]
        holdout: PathBuf,
        #[arg(long, default_value_t = 1.0 / 18.0)]
        eps0: f64,
        #[arg(long, default_value_t = 1.0 / 90.0)]
        alpha0: f64,
        #[arg(long, default_value_t = 4.0)]
        c: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a coupled lower-bound pair and report every estimator's errors.
    Hardness {
        #[arg(long, value_enum, default_value = "user")]
        level: Level,
        /// eps for the user-level pair, alpha for the sample-level pair.
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long = "users", short = 'N', default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `a.rbme` and `b.rbme`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit log-log slopes of median error from an experiment CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "eps")]
        x: String,
        #[arg(long, default_value = "two-level")]
        estimator: EstimatorKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    match out {
        Some(path) => fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => match writeln!(std::io::stdout(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            }),
            _ => Ok(()),
        },
    }
}

#[derive(Serialize)]
struct HardnessReport {
    separation: f64,
    coupled: bool,
    attempts: usize,
    results: Vec<(EstimatorKind, rbme::hardness::Indistinguishability)>,
}

fn hardness_report(pair: &HypothesisPair) -> Result<HardnessReport> {
    let results = EstimatorKind::ALL
        .into_iter()
        .map(|k| indistinguishability_check(pair, k).map(|r| (k, r)))
        .collect::<Result<_>>()?;
    Ok(HardnessReport {
        separation: pair.separation,
        coupled: pair.coupled,
        attempts: pair.attempts,
        results,
    })
}

/// Returns whether every produced result was certified.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate {
            d,
            n,
            users,
            eps,
            alpha,
            variant,
            adversary,
            user_magnitude,
            sample_magnitude,
            covariance_scale,
            aligned_shift,
            seed,
            out,
            csv,
        } => {
            let spec = CleanSpec {
                covariance_scale,
                ..CleanSpec::isotropic(d)
            };
            let clean = sample_clean(&spec, users, n, seed)?;
            let mut plan = CorruptionPlan::new(
                variant,
                eps,
                alpha,
                Adversary::new(adversary).with_magnitude(user_magnitude),
                rbme::rng::derive_seed(seed, 1),
            );
            plan.sample_magnitude = sample_magnitude;
            if aligned_shift {
                plan.shift_pattern = ShiftPattern::Aligned;
            }
            if plan.precondition_warning() {
                eprintln!("warning: eps={eps}, alpha={alpha} lie outside the guaranteed regime for {variant}");
            }
            let ds = plan.apply(&clean)?;
            write_dataset(&ds, &out)?;
            if let Some(path) = csv {
                write_dataset_csv(&ds, &path)?;
            }
            Ok(true)
        }
        Command::Estimate {
            input,
            estimator,
            eps,
            alpha,
            out,
            strict,
        } => {
            let ds = read_dataset(&input)?;
            let report = estimator.run(&ds, eps, alpha)?;
            emit(&report, out.as_deref())?;
            Ok(!strict || report.converged)
        }
        Command::Experiment {
            config,
            out,
            workers,
            seed,
            svg,
            x,
            strict,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let path = out
                .or_else(|| cfg.output_path.clone())
                .ok_or_else(|| Error::Config("no output path: pass --out or set output_path".into()))?;
            let rows = run_experiment(&cfg)?;
            write_csv(&rows, &path)?;
            if let (Some(svg), Some(x)) = (svg, x) {
                emit_svg(&rows, &x, &svg)?;
            }
            Ok(!strict || rows.iter().all(|r| r.converged))
        }
        Command::Adaptive {
            input,
            holdout,
            eps0,
            alpha0,
            c,
            out,
        } => {
            let ds = read_dataset(&input)?;
            let held = read_dataset(&holdout)?;
            if held.dim != ds.dim {
                return Err(Error::Sizing(format!(
                    "holdout dimension {} differs from dataset dimension {}",
                    held.dim, ds.dim
                )));
            }
            let cfg = AdaptiveConfig { eps0, alpha0, c };
            let outcome = adaptive_estimate(&ds, Points::new(&held.data, held.dim)?, &cfg)?;
            emit(&outcome, out.as_deref())?;
            Ok(true)
        }
        Command::Hardness {
            level,
            budget,
            n,
            users,
            d,
            seed,
            out,
        } => {
            let pair = match level {
                Level::User => build_h0_h1(budget, n, users, d, seed)?,
                Level::Sample => build_h2_h3(budget, n, users, d, seed)?,
            };
            if let Some(dir) = &out {
                fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                write_dataset(&pair.dataset_a, &dir.join("a.rbme"))?;
                write_dataset(&pair.dataset_b, &dir.join("b.rbme"))?;
            }
            emit(&hardness_report(&pair)?, None)?;
            Ok(true)
        }
        Command::Fit {
            input,
            x,
            estimator,
            out,
        } => {
            let rows = read_csv(&input)?;
            let fit = fit_scaling(&rows, &x, estimator)?;
            emit(&fit, out.as_deref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: result not certified");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
