//! Estimation when the corruption levels are unknown.
//!
//! Guesses for `(eps, alpha)` are halved from a conservative start until a
//! clean holdout set stops vouching for the result. `alpha` is swept first
//! at the starting `eps`, then `eps` at the chosen `alpha`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::estimate_two_level;
use crate::linalg::{self, Points};
use crate::model::BatchDataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub eps0: f64,
    pub alpha0: f64,
    /// Multiplier on the rate in the verifier's tolerance.
    pub c: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            eps0: 1.0 / 18.0,
            alpha0: 1.0 / 90.0,
            c: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOutcome {
    pub estimate: Vec<f64>,
    pub eps_hat: f64,
    pub alpha_hat: f64,
    pub guesses_tried: usize,
    pub accepted: bool,
}

/// Accepts when `candidate` lies within `tolerance + 3 sqrt(d/m)` of the
/// holdout mean.
pub fn holdout_verifier(candidate: &[f64], holdout: Points<'_>, tolerance: f64) -> Result<bool> {
    if holdout.is_empty() {
        return Err(Error::Parameter("holdout set is empty".into()));
    }
    if !(tolerance > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tolerance}")));
    }
    if candidate.len() != holdout.dim() {
        return Err(Error::Sizing(format!(
            "candidate has length {}, holdout has dimension {}",
            candidate.len(),
            holdout.dim()
        )));
    }
    let center = linalg::empirical_mean(holdout, None)?;
    let slack = 3.0 * (holdout.dim() as f64 / holdout.len() as f64).sqrt();
    Ok(linalg::distance(candidate, &center) <= tolerance + slack)
}

/// Smallest guess worth distinguishing: `max(sqrt(d / (N n)), 1 / (N n))`.
pub fn resolution(d: usize, n: usize, users: usize) -> f64 {
    let total = (n * users) as f64;
    (d as f64 / total).sqrt().max(1.0 / total)
}

/// `start, start/2, ...` while at least `floor`; `start` is always kept.
pub fn guess_ladder(start: f64, floor: f64) -> Vec<f64> {
    let mut out = vec![start];
    let mut g = start / 2.0;
    while g >= floor && g > 0.0 {
        out.push(g);
        g /= 2.0;
    }
    out
}

/// Verifier threshold for a guess: `c (sqrt(eps/n) + sqrt(alpha) + sqrt(d/(n N)))`.
pub fn guess_tolerance(c: f64, eps: f64, alpha: f64, d: usize, n: usize, users: usize) -> f64 {
    c * ((eps / n as f64).sqrt() + alpha.sqrt() + (d as f64 / (n * users) as f64).sqrt())
}

pub fn adaptive_estimate(ds: &BatchDataset, holdout: Points<'_>, cfg: &AdaptiveConfig) -> Result<AdaptiveOutcome> {
    if !(cfg.eps0 > 0.0 && cfg.eps0 < 0.5 && cfg.alpha0 > 0.0 && cfg.alpha0 < 0.5) {
        return Err(Error::Parameter(format!(
            "starting guesses must lie in (0, 1/2), got eps0={}, alpha0={}",
            cfg.eps0, cfg.alpha0
        )));
    }
    let (d, n, users) = (ds.dim, ds.batch_size, ds.users);
    let floor = resolution(d, n, users);
    let eps_ladder = guess_ladder(cfg.eps0, floor);
    let alpha_ladder = guess_ladder(cfg.alpha0, floor);

    let mut seen: HashMap<(usize, usize), (bool, Vec<f64>)> = HashMap::new();
    let mut check = |t: usize, s: usize| -> Result<bool> {
        if let Some((ok, _)) = seen.get(&(t, s)) {
            return Ok(*ok);
        }
        let (eps, alpha) = (eps_ladder[t], alpha_ladder[s]);
        let report = estimate_two_level(ds, eps, alpha)?;
        let tol = guess_tolerance(cfg.c, eps, alpha, d, n, users);
        let ok = holdout_verifier(&report.estimate, holdout, tol)?;
        seen.insert((t, s), (ok, report.estimate));
        Ok(ok)
    };

    if !check(0, 0)? {
        let (_, estimate) = seen.remove(&(0, 0)).expect("first guess recorded");
        return Ok(AdaptiveOutcome {
            estimate,
            eps_hat: cfg.eps0,
            alpha_hat: cfg.alpha0,
            guesses_tried: 1,
            accepted: false,
        });
    }
    let mut s_hat = 0;
    while s_hat + 1 < alpha_ladder.len() && check(0, s_hat + 1)? {
        s_hat += 1;
    }
    let mut t_hat = 0;
    while t_hat + 1 < eps_ladder.len() && check(t_hat + 1, s_hat)? {
        t_hat += 1;
    }
    let guesses_tried = seen.len();
    let (_, estimate) = seen.remove(&(t_hat, s_hat)).expect("accepted guess recorded");
    Ok(AdaptiveOutcome {
        estimate,
        eps_hat: eps_ladder[t_hat],
        alpha_hat: alpha_ladder[s_hat],
        guesses_tried,
        accepted: true,
    })
}
