//! Exhaustive subset search on tiny instances.
//!
//! These solvers pick the low-covariance subsets that the filters only
//! approximate. Enumeration is lexicographic and only a strictly smaller
//! objective replaces the incumbent, so ties resolve to the
//! lexicographically first selection.

use itertools::Itertools;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Points;
use crate::model::{budget_ceil, BatchDataset};

pub const MAX_SUBSET_USERS: usize = 20;
pub const MAX_TWO_LEVEL_USERS: usize = 8;
pub const MAX_TWO_LEVEL_BATCH: usize = 6;
/// Upper limit on the number of joint selections the two-level search visits.
pub const MAX_TWO_LEVEL_SELECTIONS: u128 = 50_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub chosen_users: Vec<usize>,
    /// Per chosen user, the retained sample indices (two-level only).
    pub chosen_samples: Option<Vec<Vec<usize>>>,
    pub objective: f64,
    pub mean: Vec<f64>,
    /// False when no selection met the pooled constraint and the
    /// unconstrained minimizer is returned instead.
    pub feasible: bool,
}

/// Largest eigenvalue of a symmetric matrix.
pub(crate) fn max_eigenvalue(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn subset_moments(points: Points<'_>, subset: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
    let d = points.dim();
    let k = subset.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in subset {
        for (m, x) in mean.iter_mut().zip(points.get(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut cov = DMatrix::zeros(d, d);
    for &i in subset {
        let p = points.get(i);
        for r in 0..d {
            for c in 0..d {
                cov[(r, c)] += (p[r] - mean[r]) * (p[c] - mean[c]);
            }
        }
    }
    (mean, cov / k)
}

/// Covariance top eigenvalue and mean of `points` restricted to `subset`.
pub fn subset_objective(points: Points<'_>, subset: &[usize]) -> (f64, Vec<f64>) {
    let (mean, cov) = subset_moments(points, subset);
    (max_eigenvalue(cov), mean)
}

/// Minimizes the covariance top eigenvalue over all `k`-subsets.
pub fn brute_force_subset_mean(batch_means: Points<'_>, k: usize) -> Result<OracleResult> {
    let m = batch_means.len();
    if m > MAX_SUBSET_USERS {
        return Err(Error::SizeGuard(format!("{m} points exceeds the limit of {MAX_SUBSET_USERS}")));
    }
    if k == 0 || k > m {
        return Err(Error::Parameter(format!("subset size must lie in [1, {m}], got {k}")));
    }
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for subset in (0..m).combinations(k) {
        let (obj, mean) = subset_objective(batch_means, &subset);
        if best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, subset, mean));
        }
    }
    let (objective, chosen_users, mean) = best.expect("at least one subset");
    Ok(OracleResult {
        chosen_users,
        chosen_samples: None,
        objective,
        mean,
        feasible: true,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Steps a mixed-radix counter whose first digit is most significant.
/// Returns false after wrapping around to all zeros.
fn advance(digits: &mut [usize], radix: usize) -> bool {
    for digit in digits.iter_mut().rev() {
        *digit += 1;
        if *digit < radix {
            return true;
        }
        *digit = 0;
    }
    false
}

struct Candidate {
    users: Vec<usize>,
    samples: Vec<Vec<usize>>,
    objective: f64,
    mean: Vec<f64>,
}

/// Joint user and per-user sample selection.
///
/// Keeps `ceil((1 - eps) N)` users and `ceil((1 - alpha) n)` samples in
/// each, minimizing the top eigenvalue of the covariance of the cleaned
/// batch means among selections whose pooled covariance is at most `2`.
pub fn brute_force_two_level(ds: &BatchDataset, eps: f64, alpha: f64) -> Result<OracleResult> {
    let (users, n, d) = (ds.users, ds.batch_size, ds.dim);
    if users > MAX_TWO_LEVEL_USERS || n > MAX_TWO_LEVEL_BATCH {
        return Err(Error::SizeGuard(format!(
            "N={users}, n={n} exceeds the limit N <= {MAX_TWO_LEVEL_USERS}, n <= {MAX_TWO_LEVEL_BATCH}"
        )));
    }
    for (name, v) in [("eps", eps), ("alpha", alpha)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Parameter(format!("{name} must lie in [0, 1), got {v}")));
        }
    }
    let ku = budget_ceil(1.0 - eps, users).max(1);
    let ks = budget_ceil(1.0 - alpha, n).max(1);
    let sample_sets: Vec<Vec<usize>> = (0..n).combinations(ks).collect();
    let visits = binomial(users, ku) * (sample_sets.len() as u128).pow(ku as u32);
    if visits > MAX_TWO_LEVEL_SELECTIONS {
        return Err(Error::SizeGuard(format!("{visits} joint selections to enumerate")));
    }

    // Per (user, sample set): coordinate sums and second-moment sums.
    let s = sample_sets.len();
    let mut sums = vec![0.0; users * s * d];
    let mut squares = vec![0.0; users * s * d * d];
    for i in 0..users {
        for (c, set) in sample_sets.iter().enumerate() {
            let base = (i * s + c) * d;
            for &j in set {
                let x = ds.sample(i, j);
                for r in 0..d {
                    sums[base + r] += x[r];
                    for q in 0..d {
                        squares[base * d + r * d + q] += x[r] * x[q];
                    }
                }
            }
        }
    }

    let pooled_count = (ku * ks) as f64;
    let mut feasible_best: Option<Candidate> = None;
    let mut any_best: Option<Candidate> = None;
    let mut pooled = DMatrix::zeros(d, d);
    let mut user_cov = DMatrix::zeros(d, d);
    let mut total = vec![0.0; d];
    for chosen in (0..users).combinations(ku) {
        let mut odometer = vec![0usize; ku];
        loop {
            total.iter_mut().for_each(|t| *t = 0.0);
            pooled.fill(0.0);
            user_cov.fill(0.0);
            for (slot, &i) in chosen.iter().enumerate() {
                let base = (i * s + odometer[slot]) * d;
                let sum = &sums[base..base + d];
                for r in 0..d {
                    total[r] += sum[r];
                    for q in 0..d {
                        pooled[(r, q)] += squares[base * d + r * d + q];
                        user_cov[(r, q)] += sum[r] * sum[q];
                    }
                }
            }
            let mean: Vec<f64> = total.iter().map(|t| t / pooled_count).collect();
            let ksq = (ks * ks) as f64;
            for r in 0..d {
                for q in 0..d {
                    pooled[(r, q)] = pooled[(r, q)] / pooled_count - mean[r] * mean[q];
                    user_cov[(r, q)] = user_cov[(r, q)] / (ksq * ku as f64) - mean[r] * mean[q];
                }
            }
            let pooled_top = max_eigenvalue(pooled.clone());
            let objective = max_eigenvalue(user_cov.clone());
            let better = |b: &Option<Candidate>| b.as_ref().is_none_or(|c| objective < c.objective);
            let candidate = || Candidate {
                users: chosen.clone(),
                samples: odometer.iter().map(|&c| sample_sets[c].clone()).collect(),
                objective,
                mean: mean.clone(),
            };
            if pooled_top <= 2.0 && better(&feasible_best) {
                feasible_best = Some(candidate());
            }
            if better(&any_best) {
                any_best = Some(candidate());
            }
            if !advance(&mut odometer, s) {
                break;
            }
        }
    }
    let (best, feasible) = match feasible_best {
        Some(b) => (b, true),
        None => (any_best.expect("at least one selection"), false),
    };
    Ok(OracleResult {
        chosen_users: best.users,
        chosen_samples: Some(best.samples),
        objective: best.objective,
        mean: best.mean,
        feasible,
    })
}
