//! Mean estimators for batched, partially adversarial data.
//!
//! All robust estimators are built on [`spectral_filter`], a multiplicative
//! reweighting loop that drives the top eigenvalue of a weighted covariance
//! below a target while keeping a minimum amount of mass:
//!
//! * [`estimate_pooled`] ignores batch structure and filters all `N n`
//!   samples at target `2`.
//! * [`estimate_mean_shift`] filters the `N` batch means at target
//!   `2 (1/n + alpha)`, discarding at most `2 eps'` of the users.
//! * [`estimate_two_level`] alternates a sample-level filter (target `2`)
//!   with a user-level filter over cleaned batch means (target
//!   `1/n + tau`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CovOperator, EigenOptions, Points};
use crate::model::BatchDataset;

/// Relative slack allowed when comparing a certificate against its target.
pub const CERTIFICATE_SLACK: f64 = 1e-6;

/// `min{max{eps, n alpha}, 1/10}`.
pub fn eps_prime(eps: f64, alpha: f64, n: usize) -> f64 {
    eps.max(n as f64 * alpha).min(0.1)
}

/// `alpha / max(eps, 1/N)`.
pub fn tau_rule(eps: f64, alpha: f64, users: usize) -> f64 {
    alpha / eps.max(1.0 / users as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterOptions {
    pub max_iter: usize,
    pub eigen: EigenOptions,
}

impl FilterOptions {
    pub fn for_dim(d: usize) -> Self {
        Self {
            max_iter: 1000,
            eigen: EigenOptions {
                tol: 1e-10,
                max_iter: 50 * d + 2000,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    /// Top eigenvalue of the weighted covariance at `weights`.
    pub certificate: f64,
    pub iterations: usize,
    pub converged: bool,
    pub mass: f64,
}

pub fn spectral_filter(
    points: Points<'_>,
    target: f64,
    min_mass: f64,
    initial_weights: Option<&[f64]>,
) -> Result<FilterOutcome> {
    spectral_filter_with(points, target, min_mass, initial_weights, FilterOptions::for_dim(points.dim()))
}

/// Multiplicative spectral filter.
///
/// Each round computes the weighted mean and top eigenpair `(lambda, v)`.
/// If `lambda <= target` the weights are certified. Otherwise every point
/// is scored by `<p - mean, v>^2` and its weight multiplied by
/// `1 - score / max_score`. A round that would leave less than `min_mass`
/// total weight is not taken; the previous weights are returned unconverged.
pub fn spectral_filter_with(
    points: Points<'_>,
    target: f64,
    min_mass: f64,
    initial_weights: Option<&[f64]>,
    opts: FilterOptions,
) -> Result<FilterOutcome> {
    let m = points.len();
    if !(target > 0.0) {
        return Err(Error::Parameter(format!("filter target must be positive, got {target}")));
    }
    if !(min_mass > 0.0 && min_mass <= m as f64 * (1.0 + 1e-12)) {
        return Err(Error::Parameter(format!(
            "min_mass must lie in (0, {m}], got {min_mass}"
        )));
    }
    let mut w = match initial_weights {
        Some(init) => {
            if init.len() != m {
                return Err(Error::Sizing(format!("{} initial weights for {m} points", init.len())));
            }
            if init.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Parameter("initial weights must lie in [0, 1]".into()));
            }
            init.to_vec()
        }
        None => vec![1.0; m],
    };
    let mut iterations = 0;
    let mut next = vec![0.0; m];
    loop {
        let cov = CovOperator::weighted(points, Some(&w))?;
        let eig = cov.top_eigen(opts.eigen)?;
        let mass: f64 = w.iter().sum();
        let done = |converged| FilterOutcome {
            mean: cov.center().to_vec(),
            certificate: eig.value,
            iterations,
            converged,
            mass,
            weights: w.clone(),
        };
        if eig.value <= target {
            return Ok(done(true));
        }
        if iterations >= opts.max_iter {
            return Ok(done(false));
        }
        let center = cov.center();
        let mut top = 0.0f64;
        for (k, p) in points.iter().enumerate() {
            let s = if w[k] > 0.0 {
                let proj: f64 = p.iter().zip(center).zip(&eig.vector).map(|((x, c), v)| (x - c) * v).sum();
                proj * proj
            } else {
                0.0
            };
            next[k] = s;
            top = top.max(s);
        }
        if !(top > 0.0) {
            return Ok(done(false));
        }
        for (nk, wk) in next.iter_mut().zip(&w) {
            *nk = wk * (1.0 - *nk / top);
        }
        if next.iter().sum::<f64>() < min_mass {
            return Ok(done(false));
        }
        std::mem::swap(&mut w, &mut next);
        iterations += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterWeights {
    pub user_weights: Vec<f64>,
    /// Row-major `N x n`.
    pub sample_weights: Vec<f64>,
    pub retained_user_mass: f64,
    pub retained_sample_mass: f64,
}

impl FilterWeights {
    fn new(user_weights: Vec<f64>, sample_weights: Vec<f64>) -> Self {
        Self {
            retained_user_mass: user_weights.iter().sum(),
            retained_sample_mass: sample_weights.iter().sum(),
            user_weights,
            sample_weights,
        }
    }

    fn uniform(users: usize, batch_size: usize) -> Self {
        Self::new(vec![1.0; users], vec![1.0; users * batch_size])
    }

    pub fn all_one(&self) -> bool {
        self.user_weights.iter().chain(&self.sample_weights).all(|w| *w == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    pub estimate: Vec<f64>,
    /// Top eigenvalue of the weighted covariance of (cleaned) batch means.
    pub certificate_user: Option<f64>,
    /// Top eigenvalue of the weighted covariance of all samples.
    pub certificate_sample: Option<f64>,
    pub target_user: Option<f64>,
    pub target_sample: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub precondition_warning: bool,
    pub weights: FilterWeights,
}

impl EstimateReport {
    pub fn error(&self, mean: &[f64]) -> f64 {
        linalg::distance(&self.estimate, mean)
    }
}

fn certified(cert: Option<f64>, target: Option<f64>) -> bool {
    match (cert, target) {
        (Some(c), Some(t)) => c <= t * (1.0 + CERTIFICATE_SLACK),
        _ => true,
    }
}

fn top_value(points: Points<'_>, weights: Option<&[f64]>) -> Result<f64> {
    let cov = CovOperator::weighted(points, weights)?;
    Ok(cov.top_eigen(FilterOptions::for_dim(points.dim()).eigen)?.value)
}

fn check_budgets(eps: f64, alpha: f64) -> Result<()> {
    for (name, v) in [("eps", eps), ("alpha", alpha)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Parameter(format!("{name} must lie in [0, 1), got {v}")));
        }
    }
    Ok(())
}

/// Grand mean of all observations.
pub fn estimate_naive(ds: &BatchDataset) -> Result<EstimateReport> {
    let means = ds.batch_means();
    let estimate = linalg::empirical_mean(ds.points(), None)?;
    Ok(EstimateReport {
        estimator: EstimatorKind::Naive,
        estimate,
        certificate_user: Some(top_value(Points::new(&means, ds.dim)?, None)?),
        certificate_sample: Some(top_value(ds.points(), None)?),
        target_user: None,
        target_sample: None,
        iterations: 0,
        converged: true,
        precondition_warning: false,
        weights: FilterWeights::uniform(ds.users, ds.batch_size),
    })
}

/// Treats every sample as an `eps + alpha` corrupted draw and filters the
/// pool. User weights report each user's average sample weight.
pub fn estimate_pooled(ds: &BatchDataset, eps: f64, alpha: f64) -> Result<EstimateReport> {
    check_budgets(eps, alpha)?;
    let budget = eps + alpha;
    if budget >= 0.5 {
        return Err(Error::Parameter(format!("pooled filter needs eps + alpha < 1/2, got {budget}")));
    }
    let total = (ds.users * ds.batch_size) as f64;
    let out = spectral_filter(ds.points(), 2.0, (1.0 - 2.0 * budget) * total, None)?;
    let n = ds.batch_size as f64;
    let users = out
        .weights
        .chunks(ds.batch_size)
        .map(|c| c.iter().sum::<f64>() / n)
        .collect();
    Ok(EstimateReport {
        estimator: EstimatorKind::Pooled,
        estimate: out.mean,
        certificate_user: None,
        certificate_sample: Some(out.certificate),
        target_user: None,
        target_sample: Some(2.0),
        iterations: out.iterations,
        converged: out.converged,
        precondition_warning: false,
        weights: FilterWeights::new(users, out.weights),
    })
}

/// Filters batch means at target `2 (1/n + alpha)`. Sample weights repeat
/// their user's weight.
pub fn estimate_mean_shift(ds: &BatchDataset, eps: f64, alpha: f64) -> Result<EstimateReport> {
    check_budgets(eps, alpha)?;
    let n = ds.batch_size;
    let means = ds.batch_means();
    let target = 2.0 * (1.0 / n as f64 + alpha);
    let floor = (1.0 - 2.0 * eps_prime(eps, alpha, n)) * ds.users as f64;
    let out = spectral_filter(Points::new(&means, ds.dim)?, target, floor, None)?;
    let samples = out.weights.iter().flat_map(|&u| std::iter::repeat_n(u, n)).collect();
    Ok(EstimateReport {
        estimator: EstimatorKind::MeanShift,
        estimate: out.mean,
        certificate_user: Some(out.certificate),
        certificate_sample: None,
        target_user: Some(target),
        target_sample: None,
        iterations: out.iterations,
        converged: out.converged,
        precondition_warning: !(eps < 0.1 && alpha < 0.1),
        weights: FilterWeights::new(out.weights, samples),
    })
}

pub const MAX_ROUNDS: usize = 25;

/// W-weighted mean of each batch; zero for batches with no mass left.
fn cleaned_means(ds: &BatchDataset, w: &[f64]) -> Vec<f64> {
    let (n, d) = (ds.batch_size, ds.dim);
    let mut out = vec![0.0; ds.users * d];
    for i in 0..ds.users {
        let wi = &w[i * n..(i + 1) * n];
        let mass: f64 = wi.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        let y = &mut out[i * d..(i + 1) * d];
        for (j, &wj) in wi.iter().enumerate() {
            for (yc, x) in y.iter_mut().zip(ds.sample(i, j)) {
                *yc += wj * x;
            }
        }
        y.iter_mut().for_each(|v| *v /= mass);
    }
    out
}

/// Alternating two-level filter.
///
/// Each round runs the pooled sample filter (target `2`), caps each user's
/// weight at its retained sample mass divided by `(1 - 2 alpha) n`, forms
/// cleaned batch means and filters those at `1/n + tau`. User downweighting
/// is pushed back onto the user's samples. Rounds repeat until no weight
/// moves or [`MAX_ROUNDS`] is reached.
pub fn estimate_two_level(ds: &BatchDataset, eps: f64, alpha: f64) -> Result<EstimateReport> {
    check_budgets(eps, alpha)?;
    let (users, n, d) = (ds.users, ds.batch_size, ds.dim);
    let total = (users * n) as f64;
    let sample_floor = (1.0 - 2.0 * eps) * (1.0 - 2.0 * alpha) * total;
    let user_floor = (1.0 - 2.0 * eps) * users as f64;
    let per_user_floor = (1.0 - 2.0 * alpha) * n as f64;
    if !(sample_floor > 0.0 && user_floor > 0.0) {
        return Err(Error::Parameter(format!(
            "two-level filter needs eps < 1/2 and alpha < 1/2, got eps={eps}, alpha={alpha}"
        )));
    }
    let target_user = 1.0 / n as f64 + tau_rule(eps, alpha, users);
    let target_sample = 2.0;

    let mut w = vec![1.0; users * n];
    let mut u = vec![1.0; users];
    let mut iterations = 0;
    for _ in 0..MAX_ROUNDS {
        let mut changed = false;
        let crude = spectral_filter(ds.points(), target_sample, sample_floor, Some(&w))?;
        iterations += crude.iterations;
        changed |= crude.weights != w;
        w = crude.weights;

        for i in 0..users {
            let mass: f64 = w[i * n..(i + 1) * n].iter().sum();
            let cap = (mass / per_user_floor).min(1.0);
            if cap < u[i] {
                u[i] = cap;
                changed = true;
            }
        }

        let y = cleaned_means(ds, &w);
        let refined = spectral_filter(Points::new(&y, d)?, target_user, user_floor, Some(&u))?;
        iterations += refined.iterations;
        for i in 0..users {
            let new = refined.weights[i];
            if new < u[i] {
                let factor = new / u[i];
                w[i * n..(i + 1) * n].iter_mut().for_each(|x| *x *= factor);
                changed = true;
            }
        }
        u = refined.weights;
        if !changed {
            break;
        }
    }

    let y = cleaned_means(ds, &w);
    let cert_user = top_value(Points::new(&y, d)?, Some(&u))?;
    let cert_sample = top_value(ds.points(), Some(&w))?;
    let estimate = linalg::empirical_mean(Points::new(&y, d)?, Some(&u))?;
    Ok(EstimateReport {
        estimator: EstimatorKind::TwoLevel,
        estimate,
        certificate_user: Some(cert_user),
        certificate_sample: Some(cert_sample),
        target_user: Some(target_user),
        target_sample: Some(target_sample),
        iterations,
        converged: certified(Some(cert_user), Some(target_user)) && certified(Some(cert_sample), Some(target_sample)),
        precondition_warning: !(eps + 5.0 * alpha < 1.0 / 18.0),
        weights: FilterWeights::new(u, w),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Naive,
    Pooled,
    MeanShift,
    TwoLevel,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Naive,
        EstimatorKind::Pooled,
        EstimatorKind::MeanShift,
        EstimatorKind::TwoLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Pooled => "pooled",
            EstimatorKind::MeanShift => "mean-shift",
            EstimatorKind::TwoLevel => "two-level",
        }
    }

    pub fn run(self, ds: &BatchDataset, eps: f64, alpha: f64) -> Result<EstimateReport> {
        match self {
            EstimatorKind::Naive => estimate_naive(ds),
            EstimatorKind::Pooled => estimate_pooled(ds, eps, alpha),
            EstimatorKind::MeanShift => estimate_mean_shift(ds, eps, alpha),
            EstimatorKind::TwoLevel => estimate_two_level(ds, eps, alpha),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown estimator {s:?}")))
    }
}
