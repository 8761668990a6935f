//! Batch data generation and the two corruption models.
//!
//! A [`BatchDataset`] holds `N` users with `n` samples each in `R^d`, the
//! latent clean tensor next to the observed one, and the bookkeeping flags
//! the tests and estimators' reports are checked against. Adversaries
//! always see the whole clean tensor before choosing what to write.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Points};
use crate::rng::{derive_seed, rng_from_seed};

/// `floor(budget * count)`, robust to representation error in `budget`.
pub fn budget_count(budget: f64, count: usize) -> usize {
    (budget * count as f64 + 1e-9).floor().max(0.0) as usize
}

/// `ceil(budget * count)`, robust to representation error in `budget`.
pub fn budget_ceil(budget: f64, count: usize) -> usize {
    (budget * count as f64 - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Family {
    IsotropicGaussian,
    /// One coordinate takes `p^{-1/2}` with probability `p` and `0`
    /// otherwise, re-centered on the requested mean.
    ScaledBernoulliSpike { p: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanSpec {
    pub mean: Vec<f64>,
    pub family: Family,
    pub covariance_scale: f64,
}

impl CleanSpec {
    pub fn isotropic(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            family: Family::IsotropicGaussian,
            covariance_scale: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<()> {
        if self.mean.is_empty() {
            return Err(Error::Sizing("dimension must be at least 1".into()));
        }
        if !(self.covariance_scale > 0.0 && self.covariance_scale <= 1.0) {
            return Err(Error::Parameter(format!(
                "covariance_scale must lie in (0, 1], got {}",
                self.covariance_scale
            )));
        }
        if let Family::ScaledBernoulliSpike { p } = self.family {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Parameter(format!("spike probability must lie in (0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Observed and latent batch tensors with ground-truth flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchDataset {
    pub users: usize,
    pub batch_size: usize,
    pub dim: usize,
    /// Observed `x_{i,j}`, row-major `N x n x d`.
    pub data: Vec<f64>,
    /// Latent `v_{i,j}`, same layout.
    pub clean: Vec<f64>,
    pub good_user: Vec<bool>,
    /// `N x n`; true when the observation equals the latent sample.
    pub sample_clean: Vec<bool>,
    /// Per-user means `mu_i` (`N x d`), set by the mean-shift model.
    pub user_means: Option<Vec<f64>>,
    pub target_mean: Vec<f64>,
    pub seed: u64,
}

impl BatchDataset {
    pub fn sample(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.batch_size + j) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn clean_sample(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.batch_size + j) * self.dim;
        &self.clean[o..o + self.dim]
    }

    /// All `n` observations of user `i`.
    pub fn batch(&self, i: usize) -> &[f64] {
        let w = self.batch_size * self.dim;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn points(&self) -> Points<'_> {
        Points::new(&self.data, self.dim).expect("dataset dimension is positive")
    }

    /// Unweighted empirical mean of each observed batch, `N x d`.
    pub fn batch_means(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.users * self.dim);
        for i in 0..self.users {
            let p = Points::new(self.batch(i), self.dim).expect("positive dimension");
            out.extend(linalg::empirical_mean(p, None).expect("batch is nonempty"));
        }
        out
    }

    pub fn bad_user_count(&self) -> usize {
        self.good_user.iter().filter(|g| !**g).count()
    }

    pub fn corrupted_in_user(&self, i: usize) -> usize {
        self.sample_clean[i * self.batch_size..(i + 1) * self.batch_size]
            .iter()
            .filter(|c| !**c)
            .count()
    }

    pub fn corrupted_sample_count(&self) -> usize {
        self.sample_clean.iter().filter(|c| !**c).count()
    }

    /// Every sample flagged clean is bit-identical to its latent value.
    pub fn clean_flags_consistent(&self) -> bool {
        self.sample_clean.iter().enumerate().all(|(k, &flag)| {
            !flag
                || self.data[k * self.dim..(k + 1) * self.dim]
                    .iter()
                    .zip(&self.clean[k * self.dim..(k + 1) * self.dim])
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }

    fn clean_mean(&self) -> Vec<f64> {
        let p = Points::new(&self.clean, self.dim).expect("positive dimension");
        linalg::empirical_mean(p, None).expect("dataset is nonempty")
    }
}

/// Draws `N` batches of `n` i.i.d. samples from `spec`.
pub fn sample_clean(spec: &CleanSpec, users: usize, batch_size: usize, seed: u64) -> Result<BatchDataset> {
    if users == 0 || batch_size == 0 {
        return Err(Error::Sizing(format!(
            "need N >= 1 and n >= 1, got N={users}, n={batch_size}"
        )));
    }
    spec.validate()?;
    let d = spec.dim();
    let total = users * batch_size;
    let mut rng = rng_from_seed(seed);
    let s = spec.covariance_scale.sqrt();
    let mut clean = Vec::with_capacity(total * d);
    match spec.family {
        Family::IsotropicGaussian => {
            for _ in 0..total {
                for mu in &spec.mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    clean.push(mu + s * z);
                }
            }
        }
        Family::ScaledBernoulliSpike { p } => {
            let root = p.sqrt();
            let high = 1.0 / root;
            for _ in 0..total {
                let spike = if rng.random::<f64>() < p { high } else { 0.0 };
                clean.push(spec.mean[0] + s * (spike - root));
                clean.extend_from_slice(&spec.mean[1..]);
            }
        }
    }
    Ok(BatchDataset {
        users,
        batch_size,
        dim: d,
        data: clean.clone(),
        clean,
        good_user: vec![true; users],
        sample_clean: vec![true; total],
        user_means: None,
        target_mean: spec.mean.clone(),
        seed,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftPattern {
    /// Independent uniform directions per user.
    #[default]
    Scattered,
    /// One common direction shared by every user.
    Aligned,
}

fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Moves every good user's distribution to `mu_i = mu + sqrt(alpha) u_i`
/// with uniformly random unit `u_i`.
pub fn apply_mean_shift(ds: &BatchDataset, alpha: f64, seed: u64) -> Result<BatchDataset> {
    apply_mean_shift_with(ds, alpha, ShiftPattern::Scattered, seed)
}

pub fn apply_mean_shift_with(
    ds: &BatchDataset,
    alpha: f64,
    pattern: ShiftPattern,
    seed: u64,
) -> Result<BatchDataset> {
    if !(alpha >= 0.0) {
        return Err(Error::Parameter(format!("alpha must be nonnegative, got {alpha}")));
    }
    let d = ds.dim;
    let mut rng = rng_from_seed(seed);
    let radius = alpha.sqrt();
    let common = unit_vector(&mut rng, d);
    let mut out = ds.clone();
    let mut means = Vec::with_capacity(ds.users * d);
    for i in 0..ds.users {
        let u = match pattern {
            ShiftPattern::Scattered => unit_vector(&mut rng, d),
            ShiftPattern::Aligned => common.clone(),
        };
        let shift: Vec<f64> = if ds.good_user[i] && radius > 0.0 {
            u.iter().map(|x| radius * x).collect()
        } else {
            vec![0.0; d]
        };
        means.extend(ds.target_mean.iter().zip(&shift).map(|(m, s)| m + s));
        if radius == 0.0 || !ds.good_user[i] {
            continue;
        }
        for j in 0..ds.batch_size {
            let k = i * ds.batch_size + j;
            for c in 0..d {
                out.clean[k * d + c] += shift[c];
            }
            if out.sample_clean[k] {
                let (dst, src) = (&mut out.data[k * d..(k + 1) * d], &out.clean[k * d..(k + 1) * d]);
                dst.copy_from_slice(src);
            }
        }
    }
    out.user_means = Some(means);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Every corrupted sample sits at `mean(clean) + r u`.
    MeanPull,
    /// Corrupted samples are their own clean values translated by `r u`.
    Cluster,
    /// Corrupted samples are set to the origin; the adversary picks the
    /// largest-norm users or samples.
    ZeroOut,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::MeanPull => "mean-pull",
            Strategy::Cluster => "cluster",
            Strategy::ZeroOut => "zero-out",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-pull" => Ok(Strategy::MeanPull),
            "cluster" => Ok(Strategy::Cluster),
            "zero-out" => Ok(Strategy::ZeroOut),
            other => Err(Error::Parameter(format!("unknown adversary strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PullDirection {
    /// `(1, ..., 1) / sqrt(d)`.
    #[default]
    Auto,
    Fixed(Vec<f64>),
}

impl PullDirection {
    fn resolve(&self, d: usize) -> Result<Vec<f64>> {
        match self {
            PullDirection::Auto => Ok(vec![1.0 / (d as f64).sqrt(); d]),
            PullDirection::Fixed(v) => {
                if v.len() != d {
                    return Err(Error::Parameter(format!(
                        "pull direction has length {}, data has dimension {d}",
                        v.len()
                    )));
                }
                let n = linalg::norm(v);
                if !(n > 0.0) {
                    return Err(Error::Parameter("pull direction must be nonzero".into()));
                }
                Ok(v.iter().map(|x| x / n).collect())
            }
        }
    }
}

/// Distance `r` at which pulled samples are placed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PullMagnitude {
    /// `10 sqrt(d)`.
    #[default]
    Auto,
    Fixed(f64),
    /// Chosen so the corrupted mass adds exactly `kappa` to the second
    /// moment along the pull direction, in units of the clean covariance
    /// at the level being corrupted: `r = sqrt(kappa / (n eps))` for users,
    /// `r = sqrt(kappa / alpha)` for samples.
    Stealth(f64),
}

impl fmt::Display for PullMagnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PullMagnitude::Auto => f.write_str("auto"),
            PullMagnitude::Fixed(r) => write!(f, "{r}"),
            PullMagnitude::Stealth(k) => write!(f, "stealth:{k}"),
        }
    }
}

impl FromStr for PullMagnitude {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("invalid pull magnitude {s:?}"));
        if s == "auto" {
            return Ok(PullMagnitude::Auto);
        }
        if let Some(k) = s.strip_prefix("stealth:") {
            let k: f64 = k.trim().parse().map_err(|_| bad())?;
            if !(k > 0.0) {
                return Err(bad());
            }
            return Ok(PullMagnitude::Stealth(k));
        }
        let r: f64 = s.parse().map_err(|_| bad())?;
        if !(r > 0.0) {
            return Err(bad());
        }
        Ok(PullMagnitude::Fixed(r))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    pub strategy: Strategy,
    #[serde(default)]
    pub direction: PullDirection,
    #[serde(default)]
    pub magnitude: PullMagnitude,
}

impl Adversary {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            direction: PullDirection::Auto,
            magnitude: PullMagnitude::Auto,
        }
    }

    pub fn with_magnitude(mut self, magnitude: PullMagnitude) -> Self {
        self.magnitude = magnitude;
        self
    }

    pub fn with_direction(mut self, direction: PullDirection) -> Self {
        self.direction = direction;
        self
    }

    /// `stealth_unit` is the clean second-moment scale at the level being
    /// corrupted times the corrupted fraction.
    fn radius(&self, d: usize, stealth_unit: f64) -> f64 {
        match self.magnitude {
            PullMagnitude::Auto => 10.0 * (d as f64).sqrt(),
            PullMagnitude::Fixed(r) => r,
            PullMagnitude::Stealth(kappa) if stealth_unit > 0.0 => (kappa / stealth_unit).sqrt(),
            PullMagnitude::Stealth(_) => 0.0,
        }
    }

    fn write(&self, out: &mut [f64], clean: &[f64], anchor: &[f64], u: &[f64], r: f64) {
        match self.strategy {
            Strategy::MeanPull => {
                for ((o, a), ui) in out.iter_mut().zip(anchor).zip(u) {
                    *o = a + r * ui;
                }
            }
            Strategy::Cluster => {
                for ((o, c), ui) in out.iter_mut().zip(clean).zip(u) {
                    *o = c + r * ui;
                }
            }
            Strategy::ZeroOut => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }
}

/// Descending by score, ascending index on ties.
fn top_by_score(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<usize> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<usize> = scored.into_iter().take(k).map(|(i, _)| i).collect();
    picked.sort_unstable();
    picked
}

/// Hands `floor(eps N)` currently good users to the adversary, which
/// rewrites all of their samples.
pub fn corrupt_users(ds: &BatchDataset, eps: f64, adversary: &Adversary, seed: u64) -> Result<BatchDataset> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Parameter(format!("eps must lie in [0, 1), got {eps}")));
    }
    let count = budget_count(eps, ds.users);
    if count == 0 {
        return Ok(ds.clone());
    }
    let good: Vec<usize> = (0..ds.users).filter(|&i| ds.good_user[i]).collect();
    if good.len() < count {
        return Err(Error::Parameter(format!(
            "user budget {count} exceeds the {} good users",
            good.len()
        )));
    }
    let (n, d) = (ds.batch_size, ds.dim);
    let mut rng = rng_from_seed(seed);
    let chosen = match adversary.strategy {
        Strategy::ZeroOut => {
            let scored = good
                .iter()
                .map(|&i| {
                    let s: f64 = (0..n).map(|j| linalg::norm(ds.clean_sample(i, j))).sum();
                    (i, s)
                })
                .collect();
            top_by_score(scored, count)
        }
        _ => {
            let mut picked: Vec<usize> = index::sample(&mut rng, good.len(), count)
                .into_iter()
                .map(|k| good[k])
                .collect();
            picked.sort_unstable();
            picked
        }
    };

    let anchor = ds.clean_mean();
    let u = adversary.direction.resolve(d)?;
    let r = adversary.radius(d, count as f64 / ds.users as f64 * n as f64);
    let mut out = ds.clone();
    for &i in &chosen {
        out.good_user[i] = false;
        for j in 0..n {
            let k = i * n + j;
            out.sample_clean[k] = false;
            let clean = &ds.clean[k * d..(k + 1) * d];
            adversary.write(&mut out.data[k * d..(k + 1) * d], clean, &anchor, &u, r);
        }
    }
    Ok(out)
}

/// Within every good user, hands `floor(alpha n)` clean samples to the
/// adversary.
pub fn corrupt_samples(ds: &BatchDataset, alpha: f64, adversary: &Adversary, seed: u64) -> Result<BatchDataset> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let (n, d) = (ds.batch_size, ds.dim);
    let per_user = budget_count(alpha, n);
    if per_user == 0 {
        return Ok(ds.clone());
    }
    let anchor = ds.clean_mean();
    let u = adversary.direction.resolve(d)?;
    let r = adversary.radius(d, per_user as f64 / n as f64);
    let mut rng = rng_from_seed(seed);
    let mut out = ds.clone();
    for i in (0..ds.users).filter(|&i| ds.good_user[i]) {
        let candidates: Vec<usize> = (0..n).filter(|&j| ds.sample_clean[i * n + j]).collect();
        if candidates.len() < per_user {
            return Err(Error::Parameter(format!(
                "user {i} has {} clean samples, budget is {per_user}",
                candidates.len()
            )));
        }
        let chosen = match adversary.strategy {
            Strategy::ZeroOut => top_by_score(
                candidates
                    .iter()
                    .map(|&j| (j, linalg::norm(ds.clean_sample(i, j))))
                    .collect(),
                per_user,
            ),
            _ => {
                let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), per_user)
                    .into_iter()
                    .map(|k| candidates[k])
                    .collect();
                picked.sort_unstable();
                picked
            }
        };
        for j in chosen {
            let k = i * n + j;
            out.sample_clean[k] = false;
            let clean = &ds.clean[k * d..(k + 1) * d];
            adversary.write(&mut out.data[k * d..(k + 1) * d], clean, &anchor, &u, r);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Good users are clean but their means drift within `sqrt(alpha)`.
    MeanShift,
    /// Good users share the mean but lose an `alpha` fraction of samples.
    TwoLevel,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::MeanShift => "mean-shift",
            Variant::TwoLevel => "two-level",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-shift" => Ok(Variant::MeanShift),
            "two-level" => Ok(Variant::TwoLevel),
            other => Err(Error::Parameter(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPlan {
    pub variant: Variant,
    pub eps: f64,
    pub alpha: f64,
    pub adversary: Adversary,
    /// Overrides the adversary's magnitude for sample-level corruption.
    #[serde(default)]
    pub sample_magnitude: Option<PullMagnitude>,
    #[serde(default)]
    pub shift_pattern: ShiftPattern,
    pub seed: u64,
}

impl CorruptionPlan {
    pub fn new(variant: Variant, eps: f64, alpha: f64, adversary: Adversary, seed: u64) -> Self {
        Self {
            variant,
            eps,
            alpha,
            adversary,
            sample_magnitude: None,
            shift_pattern: ShiftPattern::Scattered,
            seed,
        }
    }

    /// True when the parameters fall outside the regime the guarantees
    /// cover. Such plans still run.
    pub fn precondition_warning(&self) -> bool {
        match self.variant {
            Variant::MeanShift => !(self.eps < 0.1 && self.alpha < 0.1),
            Variant::TwoLevel => !(self.eps + 5.0 * self.alpha < 1.0 / 18.0),
        }
    }

    fn sample_adversary(&self) -> Adversary {
        let mut a = self.adversary.clone();
        if let Some(m) = self.sample_magnitude {
            a.magnitude = m;
        }
        a
    }

    pub fn apply(&self, ds: &BatchDataset) -> Result<BatchDataset> {
        match self.variant {
            Variant::MeanShift => {
                let shifted = apply_mean_shift_with(ds, self.alpha, self.shift_pattern, derive_seed(self.seed, 1))?;
                corrupt_users(&shifted, self.eps, &self.adversary, derive_seed(self.seed, 2))
            }
            Variant::TwoLevel => {
                let users = corrupt_users(ds, self.eps, &self.adversary, derive_seed(self.seed, 2))?;
                corrupt_samples(&users, self.alpha, &self.sample_adversary(), derive_seed(self.seed, 3))
            }
        }
    }
}
