//! Coupled hypothesis pairs whose corrupted observations coincide.
//!
//! Under `H0` a rare spike lifts the mean off zero; under `H1` the data are
//! identically zero. The adversary erases every spike, so no estimator can
//! tell the hypotheses apart and one of them incurs at least half the mean
//! separation. The user-level pair has separation `sqrt(eps/n)`, the
//! sample-level pair `sqrt(alpha)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::linalg;
use crate::model::{budget_count, corrupt_users, sample_clean, Adversary, BatchDataset, CleanSpec, Family, Strategy};
use crate::rng::{derive_seed, rng_from_seed};

pub const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisPair {
    pub dataset_a: BatchDataset,
    pub dataset_b: BatchDataset,
    pub mean_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub separation: f64,
    pub coupled: bool,
    /// Budgets an estimator should be told when run on either dataset.
    pub eps: f64,
    pub alpha: f64,
    pub attempts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Indistinguishability {
    pub error_a: f64,
    pub error_b: f64,
    pub max_error: f64,
}

fn check_sizes(n: usize, users: usize, d: usize) -> Result<()> {
    if n == 0 || users == 0 || d == 0 {
        return Err(Error::Sizing(format!("need n, N, d >= 1, got n={n}, N={users}, d={d}")));
    }
    Ok(())
}

fn spike_spec(p: f64, d: usize) -> CleanSpec {
    let mut mean = vec![0.0; d];
    mean[0] = p.sqrt();
    CleanSpec {
        mean,
        family: Family::ScaledBernoulliSpike { p },
        covariance_scale: 1.0,
    }
}

fn zeros(users: usize, n: usize, d: usize, seed: u64) -> BatchDataset {
    let values = vec![0.0; users * n * d];
    BatchDataset {
        users,
        batch_size: n,
        dim: d,
        data: values.clone(),
        clean: values,
        good_user: vec![true; users],
        sample_clean: vec![true; users * n],
        user_means: None,
        target_mean: vec![0.0; d],
        seed,
    }
}

fn nonzero_in_user(ds: &BatchDataset, i: usize) -> usize {
    (0..ds.batch_size)
        .filter(|&j| ds.clean_sample(i, j).iter().any(|x| *x != 0.0))
        .count()
}

fn pair(a: BatchDataset, b: BatchDataset, eps: f64, alpha: f64, attempts: usize) -> HypothesisPair {
    let separation = linalg::distance(&a.target_mean, &b.target_mean);
    let coupled = a.data.len() == b.data.len()
        && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits());
    HypothesisPair {
        mean_a: a.target_mean.clone(),
        mean_b: b.target_mean.clone(),
        dataset_a: a,
        dataset_b: b,
        separation,
        coupled,
        eps,
        alpha,
        attempts,
    }
}

/// User-level pair: spike probability `eps/n`, at most `floor(eps N)` users
/// may contain a spike, and the adversary zeroes those users.
pub fn build_h0_h1(eps: f64, n: usize, users: usize, d: usize, seed: u64) -> Result<HypothesisPair> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Parameter(format!("eps must lie in (0, 1), got {eps}")));
    }
    check_sizes(n, users, d)?;
    let spec = spike_spec(eps / n as f64, d);
    let budget = budget_count(eps, users);
    for attempt in 0..MAX_ATTEMPTS {
        let clean = sample_clean(&spec, users, n, derive_seed(seed, attempt as u64))?;
        let spiked = (0..users).filter(|&i| nonzero_in_user(&clean, i) > 0).count();
        if spiked > budget {
            continue;
        }
        let a = corrupt_users(&clean, eps, &Adversary::new(Strategy::ZeroOut), seed)?;
        return Ok(pair(a, zeros(users, n, d, seed), eps, 0.0, attempt + 1));
    }
    Err(Error::Construction {
        attempts: MAX_ATTEMPTS,
        reason: format!("more than {budget} users drew a spike in every attempt"),
    })
}

/// Sample-level pair: spike probability `alpha`, at most `floor(3 alpha n)`
/// spikes per user, each replaced by zero.
pub fn build_h2_h3(alpha: f64, n: usize, users: usize, d: usize, seed: u64) -> Result<HypothesisPair> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    check_sizes(n, users, d)?;
    let spec = spike_spec(alpha, d);
    let budget = budget_count(3.0 * alpha, n);
    for attempt in 0..MAX_ATTEMPTS {
        let mut a = sample_clean(&spec, users, n, derive_seed(seed, attempt as u64))?;
        if (0..users).any(|i| nonzero_in_user(&a, i) > budget) {
            continue;
        }
        for k in 0..users * n {
            let cell = k * d..(k + 1) * d;
            if a.clean[cell.clone()].iter().any(|x| *x != 0.0) {
                a.sample_clean[k] = false;
                a.data[cell].iter_mut().for_each(|x| *x = 0.0);
            }
        }
        return Ok(pair(a, zeros(users, n, d, seed), 0.0, alpha, attempt + 1));
    }
    Err(Error::Construction {
        attempts: MAX_ATTEMPTS,
        reason: format!("some user drew more than {budget} spikes in every attempt"),
    })
}

/// Runs `estimator` on both datasets and measures each against its own
/// hypothesis mean.
pub fn indistinguishability_check(pair: &HypothesisPair, estimator: EstimatorKind) -> Result<Indistinguishability> {
    if !pair.coupled {
        return Err(Error::Parameter("hypothesis pair is not coupled".into()));
    }
    let a = estimator.run(&pair.dataset_a, pair.eps, pair.alpha)?;
    let b = estimator.run(&pair.dataset_b, pair.eps, pair.alpha)?;
    let error_a = a.error(&pair.mean_a);
    let error_b = b.error(&pair.mean_b);
    Ok(Indistinguishability {
        error_a,
        error_b,
        max_error: error_a.max(error_b),
    })
}

/// Relabels users by a seeded uniform permutation and shuffles each
/// user's samples independently. Flags travel with their samples.
pub fn symmetrize(ds: &BatchDataset, seed: u64) -> BatchDataset {
    let (users, n, d) = (ds.users, ds.batch_size, ds.dim);
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..users).collect();
    order.shuffle(&mut rng);
    let mut out = ds.clone();
    let mut within: Vec<usize> = (0..n).collect();
    for (dst, &src) in order.iter().enumerate() {
        within.shuffle(&mut rng);
        out.good_user[dst] = ds.good_user[src];
        if let (Some(to), Some(from)) = (out.user_means.as_mut(), ds.user_means.as_ref()) {
            to[dst * d..(dst + 1) * d].copy_from_slice(&from[src * d..(src + 1) * d]);
        }
        for (j, &sj) in within.iter().enumerate() {
            let (to, from) = (dst * n + j, src * n + sj);
            out.sample_clean[to] = ds.sample_clean[from];
            out.data[to * d..(to + 1) * d].copy_from_slice(&ds.data[from * d..(from + 1) * d]);
            out.clean[to * d..(to + 1) * d].copy_from_slice(&ds.clean[from * d..(from + 1) * d]);
        }
    }
    out
}
