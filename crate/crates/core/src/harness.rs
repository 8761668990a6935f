//! Seeded Monte Carlo experiments over parameter grids.
//!
//! A config names lists of values for each parameter; every combination is
//! a grid point, and each point runs `trials` independent datasets through
//! every listed estimator. Each `(point, trial)` unit gets its own seed, so
//! results do not depend on how units are spread over worker threads.
//!
//! ```toml
//! base_seed = 7
//! workers = 4
//!
//! [grid]
//! d = 16
//! n = 16
//! N = 400
//! eps = [0.01, 0.02, 0.04, 0.08]
//! alpha = 0.0
//! variant = "two-level"
//! adversary = "mean-pull"
//! estimators = ["naive", "two-level"]
//! trials = 100
//!
//! [data]
//! covariance_scale = 0.1
//!
//! [adversary]
//! user_magnitude = "stealth:0.75"
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::model::{
    sample_clean, Adversary, CleanSpec, CorruptionPlan, Family, PullDirection, PullMagnitude, ShiftPattern, Strategy,
    Variant,
};
use crate::rng::derive_seed;

pub const CSV_HEADER: [&str; 15] = [
    "d",
    "n",
    "N",
    "eps",
    "alpha",
    "variant",
    "adversary",
    "estimator",
    "trial",
    "seed",
    "error_l2",
    "certificate_user",
    "certificate_sample",
    "converged",
    "runtime_ms",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub d: OneOrMany<usize>,
    pub n: OneOrMany<usize>,
    #[serde(rename = "N")]
    pub users: OneOrMany<usize>,
    pub eps: OneOrMany<f64>,
    pub alpha: OneOrMany<f64>,
    pub variant: OneOrMany<Variant>,
    pub adversary: OneOrMany<Strategy>,
    pub estimators: Vec<EstimatorKind>,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "one")]
    pub covariance_scale: f64,
    /// When set, draws from the scaled Bernoulli spike family instead of a
    /// Gaussian.
    #[serde(default)]
    pub spike_p: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            covariance_scale: 1.0,
            spike_p: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    /// `"auto"`, a positive number, or `"stealth:<kappa>"`.
    #[serde(default)]
    pub user_magnitude: Option<String>,
    #[serde(default)]
    pub sample_magnitude: Option<String>,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default)]
    pub shift_pattern: ShiftPattern,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default = "one_worker")]
    pub workers: usize,
    /// Wall-clock timing makes the CSV nondeterministic; off by default, in
    /// which case `runtime_ms` is written as `0`.
    #[serde(default)]
    pub record_runtime: bool,
    pub grid: Grid,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub adversary: AdversarySection,
}

fn one_worker() -> usize {
    1
}

fn parse_magnitude(s: &Option<String>) -> Result<Option<PullMagnitude>> {
    s.as_deref()
        .map(|v| v.parse().map_err(|e: Error| Error::Config(e.to_string())))
        .transpose()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let g = &self.grid;
        if g.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if g.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        for (name, values) in [("d", g.d.values()), ("n", g.n.values()), ("N", g.users.values())] {
            if values.is_empty() || values.contains(&0) {
                return bad(format!("{name} must be a nonempty list of positive integers"));
            }
        }
        for (name, values) in [("eps", g.eps.values()), ("alpha", g.alpha.values())] {
            if values.is_empty() || values.iter().any(|v| !(0.0..1.0).contains(v)) {
                return bad(format!("{name} values must lie in [0, 1)"));
            }
        }
        if g.variant.values().is_empty() || g.adversary.values().is_empty() {
            return bad("variant and adversary lists must be nonempty".into());
        }
        let scale = self.data.covariance_scale;
        if !(scale > 0.0 && scale <= 1.0) {
            return bad(format!("covariance_scale must lie in (0, 1], got {scale}"));
        }
        if let Some(p) = self.data.spike_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("spike_p must lie in (0, 1], got {p}"));
            }
        }
        parse_magnitude(&self.adversary.user_magnitude)?;
        parse_magnitude(&self.adversary.sample_magnitude)?;
        Ok(())
    }

    /// Grid points in row-major order over `d, n, N, eps, alpha, variant,
    /// adversary`.
    pub fn points(&self) -> Vec<GridPoint> {
        let g = &self.grid;
        let mut out = Vec::new();
        for d in g.d.values() {
            for n in g.n.values() {
                for users in g.users.values() {
                    for eps in g.eps.values() {
                        for alpha in g.alpha.values() {
                            for variant in g.variant.values() {
                                for adversary in g.adversary.values() {
                                    out.push(GridPoint {
                                        d,
                                        n,
                                        users,
                                        eps,
                                        alpha,
                                        variant,
                                        adversary,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub d: usize,
    pub n: usize,
    pub users: usize,
    pub eps: f64,
    pub alpha: f64,
    pub variant: Variant,
    pub adversary: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "N")]
    pub users: usize,
    pub eps: f64,
    pub alpha: f64,
    pub variant: Variant,
    pub adversary: Strategy,
    pub estimator: EstimatorKind,
    pub trial: usize,
    pub seed: u64,
    pub error_l2: f64,
    pub certificate_user: Option<f64>,
    pub certificate_sample: Option<f64>,
    pub converged: bool,
    pub runtime_ms: f64,
}

impl ExperimentRow {
    pub fn param(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "d" => self.d as f64,
            "n" => self.n as f64,
            "N" => self.users as f64,
            "eps" => self.eps,
            "alpha" => self.alpha,
            other => return Err(Error::Parameter(format!("unknown x parameter {other:?}"))),
        })
    }
}

/// Seed for trial `trial` of grid point `point`.
pub fn unit_seed(base_seed: u64, point: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(base_seed, point as u64), trial as u64)
}

fn run_unit(cfg: &ExperimentConfig, p: &GridPoint, trial: usize, seed: u64) -> Result<Vec<ExperimentRow>> {
    let mut mean = vec![0.0; p.d];
    let family = match cfg.data.spike_p {
        Some(q) => {
            mean[0] = q.sqrt();
            Family::ScaledBernoulliSpike { p: q }
        }
        None => Family::IsotropicGaussian,
    };
    let spec = CleanSpec {
        mean,
        family,
        covariance_scale: cfg.data.covariance_scale,
    };
    let clean = sample_clean(&spec, p.users, p.n, derive_seed(seed, 0))?;
    let mut adversary = Adversary::new(p.adversary);
    if let Some(m) = parse_magnitude(&cfg.adversary.user_magnitude)? {
        adversary.magnitude = m;
    }
    if let Some(v) = &cfg.adversary.direction {
        adversary.direction = PullDirection::Fixed(v.clone());
    }
    let mut plan = CorruptionPlan::new(p.variant, p.eps, p.alpha, adversary, derive_seed(seed, 1));
    plan.sample_magnitude = parse_magnitude(&cfg.adversary.sample_magnitude)?;
    plan.shift_pattern = cfg.adversary.shift_pattern;
    let ds = plan.apply(&clean)?;

    let mut rows = Vec::with_capacity(cfg.grid.estimators.len());
    for &estimator in &cfg.grid.estimators {
        let start = Instant::now();
        let report = estimator.run(&ds, p.eps, p.alpha)?;
        let runtime_ms = if cfg.record_runtime {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        rows.push(ExperimentRow {
            d: p.d,
            n: p.n,
            users: p.users,
            eps: p.eps,
            alpha: p.alpha,
            variant: p.variant,
            adversary: p.adversary,
            estimator,
            trial,
            seed,
            error_l2: report.error(&spec.mean),
            certificate_user: report.certificate_user,
            certificate_sample: report.certificate_sample,
            converged: report.converged,
            runtime_ms,
        });
    }
    Ok(rows)
}

/// Runs every `(grid point, trial)` unit and returns rows ordered by point,
/// then trial, then estimator as listed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    let points = cfg.points();
    let trials = cfg.grid.trials;
    let mut units = Vec::with_capacity(points.len() * trials);
    let mut seen = HashSet::with_capacity(points.len() * trials);
    for (k, p) in points.iter().enumerate() {
        for t in 0..trials {
            let seed = unit_seed(cfg.base_seed, k, t);
            if !seen.insert(seed) {
                return Err(Error::Config(format!("seed collision at grid point {k}, trial {t}")));
            }
            units.push((p, t, seed));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let nested: Vec<Vec<ExperimentRow>> = pool.install(|| {
        units
            .par_iter()
            .map(|(p, t, seed)| run_unit(cfg, p, *t, *seed))
            .collect::<Result<_>>()
    })?;
    Ok(nested.into_iter().flatten().collect())
}

pub fn rows_to_csv(rows: &[ExperimentRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_csv(rows: &[ExperimentRow], path: &Path) -> Result<()> {
    fs::write(path, rows_to_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Median of a nonempty sample; the mean of the middle pair for even sizes.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// `(x, median error)` pairs for one estimator, sorted by `x`.
pub fn median_curve(rows: &[ExperimentRow], x_param: &str, estimator: EstimatorKind) -> Result<Vec<(f64, f64)>> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.estimator == estimator) {
        let x = r.param(x_param)?;
        match groups.iter_mut().find(|(gx, _)| *gx == x) {
            Some((_, ys)) => ys.push(r.error_l2),
            None => groups.push((x, vec![r.error_l2])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(groups.into_iter().map(|(x, mut ys)| (x, median(&mut ys))).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: Vec<(f64, f64)>,
}

/// Least-squares line through `(ln x, ln median error)`.
pub fn fit_scaling(rows: &[ExperimentRow], x_param: &str, estimator: EstimatorKind) -> Result<ScalingFit> {
    let points = median_curve(rows, x_param, estimator)?;
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 distinct {x_param} values for {estimator}, found {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Parameter("log-log fit needs positive x values and errors".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ScalingFit {
        slope,
        intercept,
        r2,
        points,
    })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-log chart of median error against `x_param`, one polyline per
/// estimator in first-appearance order.
pub fn render_svg(rows: &[ExperimentRow], x_param: &str) -> Result<String> {
    let mut estimators: Vec<EstimatorKind> = Vec::new();
    for r in rows {
        if !estimators.contains(&r.estimator) {
            estimators.push(r.estimator);
        }
    }
    let mut series = Vec::new();
    for &e in &estimators {
        let pts: Vec<(f64, f64)> = median_curve(rows, x_param, e)?
            .into_iter()
            .filter(|&(x, y)| x > 0.0 && y > 0.0)
            .collect();
        if !pts.is_empty() {
            series.push((e, pts));
        }
    }
    if series.is_empty() {
        return Err(Error::InsufficientData("no positive points to plot".into()));
    }
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 150.0, 30.0, 50.0);
    let px = |x: f64| left + (x.log10() - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| top + (y1 - y.log10()) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (ax, ay) = (h - bottom, w - right);
    let _ = writeln!(
        s,
        r#"<path d="M{left:.2} {top:.2} V{ax:.2} H{ay:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{x_param} (log scale)</text>"#,
        left + (w - left - right) / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">median error (log scale)</text>"#,
        top + (h - top - bottom) / 2.0,
        top + (h - top - bottom) / 2.0
    );
    for (label, v, x, y) in [
        ("x", 10f64.powf(x0), left, ax + 16.0),
        ("x", 10f64.powf(x1), ay, ax + 16.0),
        ("y", 10f64.powf(y0), left - 6.0, ax),
        ("y", 10f64.powf(y1), left - 6.0, top + 4.0),
    ] {
        let anchor = if label == "x" { "middle" } else { "end" };
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="11" text-anchor="{anchor}">{v:.4e}</text>"#
        );
    }
    for (k, (e, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = top + 16.0 * k as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="12" fill="{color}">{e}</text>"#,
            w - right + 12.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg(rows: &[ExperimentRow], x_param: &str, path: &Path) -> Result<()> {
    let svg = render_svg(rows, x_param)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
