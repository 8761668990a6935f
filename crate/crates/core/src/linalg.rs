//! Numeric kernels: weighted means, covariance operators, power iteration
//! and the radius truncation used by the satisfiability checks.
//!
//! Point sets are flat row-major `&[f64]` buffers viewed through [`Points`].
//! Covariances are never required in dense form; [`CovOperator`] applies
//! `v -> (1/Z) sum_k w_k <p_k - c, v> (p_k - c)` directly, and
//! [`top_eigen`] works on anything implementing [`SymmetricOperator`].

use crate::error::{Error, Result};

/// Borrowed view over `m` points of dimension `dim`, stored row-major.
#[derive(Clone, Copy, Debug)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Sizing("point dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Sizing(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize) -> &'a [f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'a, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `(sum_k w_k p_k) / (sum_k w_k)`; `None` weights means all ones.
pub fn empirical_mean(points: Points<'_>, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::Sizing("empirical mean of an empty point set".into()));
    }
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(Error::Sizing(format!(
                "{} weights for {} points",
                w.len(),
                points.len()
            )));
        }
    }
    let mut acc = vec![0.0; points.dim()];
    let mut total = 0.0;
    for (k, p) in points.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        if w == 0.0 {
            continue;
        }
        total += w;
        for (a, x) in acc.iter_mut().zip(p) {
            *a += w * x;
        }
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMass(total));
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(acc)
}

/// A symmetric linear map on `R^dim`.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    /// Writes `A v` into `out`.
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

/// Dense symmetric matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSymmetric {
    dim: usize,
    entries: Vec<f64>,
}

impl DenseSymmetric {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::Sizing(format!(
                "{} entries for a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.dim + c]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }
}

impl SymmetricOperator for DenseSymmetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (row, o) in self.entries.chunks_exact(self.dim).zip(out.iter_mut()) {
            *o = dot(row, v);
        }
    }
}

/// Weighted second-moment operator about a fixed center.
#[derive(Clone, Debug)]
pub struct CovOperator<'a> {
    points: Points<'a>,
    weights: Option<&'a [f64]>,
    center: Vec<f64>,
    normalization: f64,
}

impl<'a> CovOperator<'a> {
    pub fn new(
        points: Points<'a>,
        weights: Option<&'a [f64]>,
        center: Vec<f64>,
        normalization: f64,
    ) -> Result<Self> {
        if center.len() != points.dim() {
            return Err(Error::Sizing(format!(
                "center has length {}, points have dimension {}",
                center.len(),
                points.dim()
            )));
        }
        if let Some(w) = weights {
            if w.len() != points.len() {
                return Err(Error::Sizing(format!(
                    "{} weights for {} points",
                    w.len(),
                    points.len()
                )));
            }
        }
        if !(normalization > 0.0) {
            return Err(Error::DegenerateMass(normalization));
        }
        Ok(Self {
            points,
            weights,
            center,
            normalization,
        })
    }

    /// Covariance about the weighted mean, normalized by total weight.
    pub fn weighted(points: Points<'a>, weights: Option<&'a [f64]>) -> Result<Self> {
        let center = empirical_mean(points, weights)?;
        let total = weights.map_or(points.len() as f64, |w| w.iter().sum());
        Self::new(points, weights, center, total)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    fn weight(&self, k: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[k])
    }

    /// Materializes the operator as a `d x d` matrix in `O(m d^2)`.
    pub fn to_dense(&self) -> DenseSymmetric {
        let d = self.points.dim();
        let mut m = DenseSymmetric::zeros(d);
        let mut centered = vec![0.0; d];
        for (k, p) in self.points.iter().enumerate() {
            let w = self.weight(k);
            if w == 0.0 {
                continue;
            }
            for ((c, x), mu) in centered.iter_mut().zip(p).zip(&self.center) {
                *c = x - mu;
            }
            for r in 0..d {
                let wr = w * centered[r];
                let row = &mut m.entries[r * d..(r + 1) * d];
                for c in r..d {
                    row[c] += wr * centered[c];
                }
            }
        }
        let z = self.normalization;
        for r in 0..d {
            for c in r..d {
                let v = m.entries[r * d + c] / z;
                m.entries[r * d + c] = v;
                m.entries[c * d + r] = v;
            }
        }
        m
    }

    /// Dominant eigenpair, materializing first when that is cheaper than
    /// repeated matrix-free products.
    pub fn top_eigen(&self, opts: EigenOptions) -> Result<EigenResult> {
        if self.points.dim() <= DENSE_CUTOFF {
            top_eigen(&self.to_dense(), opts)
        } else {
            top_eigen(self, opts)
        }
    }
}

const DENSE_CUTOFF: usize = 512;

impl SymmetricOperator for CovOperator<'_> {
    fn dim(&self) -> usize {
        self.points.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, p) in self.points.iter().enumerate() {
            let w = self.weight(k);
            if w == 0.0 {
                continue;
            }
            let proj: f64 = p
                .iter()
                .zip(&self.center)
                .zip(v)
                .map(|((x, c), vi)| (x - c) * vi)
                .sum();
            let s = w * proj;
            for ((o, x), c) in out.iter_mut().zip(p).zip(&self.center) {
                *o += s * (x - c);
            }
        }
        let z = self.normalization;
        out.iter_mut().for_each(|o| *o /= z);
    }
}

/// `shift * I - inner`.
struct Reflected<'a, O: SymmetricOperator + ?Sized> {
    inner: &'a O,
    shift: f64,
}

impl<O: SymmetricOperator + ?Sized> SymmetricOperator for Reflected<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.inner.apply(v, out);
        for (o, x) in out.iter_mut().zip(v) {
            *o = self.shift * x - *o;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl EigenOptions {
    pub fn for_dim(d: usize) -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10 * d + 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenResult {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub restarted: bool,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Fixed restart direction: a generic, non-symmetric deterministic vector.
fn restart_vector(d: usize, against: &[f64]) -> Vec<f64> {
    let mut r: Vec<f64> = (0..d)
        .map(|k| (0.5 + 1.618_033_988_749_895 * k as f64).sin() + 0.25)
        .collect();
    let p = dot(&r, against);
    for (ri, a) in r.iter_mut().zip(against) {
        *ri -= p * a;
    }
    if normalize(&mut r) <= 1e-12 {
        r = vec![0.0; d];
        r[d - 1] = 1.0;
    }
    r
}

/// Power iteration for the dominant eigenpair of a PSD operator.
///
/// Starts from `(1,...,1)/sqrt(d)`. When the iteration settles on a pair
/// whose Rayleigh quotient is beaten by the fixed probe direction (the start
/// was orthogonal to the dominant eigenspace), it restarts once from that
/// probe, orthogonalized against the current iterate. Exceeding `max_iter`
/// is reported through `converged = false` with the last iterate.
pub fn top_eigen<O: SymmetricOperator + ?Sized>(op: &O, opts: EigenOptions) -> Result<EigenResult> {
    let d = op.dim();
    if d == 0 {
        return Err(Error::Sizing("operator dimension must be positive".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", opts.tol)));
    }

    let mut x = vec![1.0 / (d as f64).sqrt(); d];
    let mut y = vec![0.0; d];
    let mut restarted = false;
    let mut first: Option<EigenResult> = None;
    let mut value = 0.0;
    let mut residual = f64::INFINITY;

    for it in 1..=opts.max_iter {
        op.apply(&x, &mut y);
        value = dot(&x, &y);
        residual = y
            .iter()
            .zip(&x)
            .map(|(yi, xi)| (yi - value * xi).powi(2))
            .sum::<f64>()
            .sqrt();

        if residual <= opts.tol {
            let found = EigenResult {
                value,
                vector: x.clone(),
                iterations: it,
                residual,
                converged: true,
                restarted,
            };
            if restarted {
                return Ok(pick_larger(first, found));
            }
            let probe = restart_vector(d, &x);
            op.apply(&probe, &mut y);
            let probe_value = dot(&probe, &y);
            if probe_value <= value + 1e-12 * value.abs().max(1.0) {
                return Ok(found);
            }
            restarted = true;
            first = Some(found);
            x = probe;
            continue;
        }

        if normalize(&mut y) == 0.0 {
            // x lies in the null space but the residual was not small;
            // cannot happen for exact arithmetic, bail out to the probe.
            y = restart_vector(d, &x);
        }
        std::mem::swap(&mut x, &mut y);
    }

    let last = EigenResult {
        value,
        vector: x,
        iterations: opts.max_iter,
        residual,
        converged: false,
        restarted,
    };
    Ok(pick_larger(first, last))
}

fn pick_larger(first: Option<EigenResult>, second: EigenResult) -> EigenResult {
    match first {
        Some(f) if f.value > second.value => EigenResult {
            iterations: second.iterations,
            restarted: true,
            ..f
        },
        _ => second,
    }
}

/// Replaces every point farther than `radius` from `center` by `center`.
/// Returns the new points and the number replaced.
pub fn truncate(points: Points<'_>, center: &[f64], radius: f64) -> Result<(Vec<f64>, usize)> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
    }
    if center.len() != points.dim() {
        return Err(Error::Sizing("center dimension mismatch".into()));
    }
    let mut out = Vec::with_capacity(points.as_slice().len());
    let mut changed = 0;
    for p in points.iter() {
        if distance(p, center) > radius {
            out.extend_from_slice(center);
            changed += 1;
        } else {
            out.extend_from_slice(p);
        }
    }
    Ok((out, changed))
}

/// Checks that the second moment about `mu` dominates the covariance about
/// the empirical mean, i.e. that their difference is PSD. The smallest
/// eigenvalue of the difference is found by power iteration on
/// `trace * I - difference`.
pub fn recentered_cov_dominance_check(points: Points<'_>, mu: &[f64]) -> Result<bool> {
    let m = points.len() as f64;
    let about_mu = CovOperator::new(points, None, mu.to_vec(), m)?.to_dense();
    let about_mean = CovOperator::weighted(points, None)?.to_dense();
    let d = points.dim();
    let diff: Vec<f64> = about_mu
        .entries()
        .iter()
        .zip(about_mean.entries())
        .map(|(a, b)| a - b)
        .collect();
    let diff = DenseSymmetric::from_row_major(d, diff)?;
    let shift = about_mu.trace().max(1.0);
    let reflected = Reflected {
        inner: &diff,
        shift,
    };
    let top = top_eigen(&reflected, EigenOptions::for_dim(d))?;
    let smallest = shift - top.value;
    Ok(smallest >= -1e-9 * shift)
}
