//! Distances between sampler output and target, condition probes, and
//! log-log trend fits.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{check_dim, usage, Error, Result};
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::target::TargetSpec;

/// Number of random directions used by sliced W1.
pub const DEFAULT_DIRECTIONS: usize = 32;
/// Bootstrap replicates for metric standard errors.
pub const DEFAULT_BOOTSTRAP: usize = 200;

fn sorted<F: Scalar>(xs: &[F]) -> Vec<F> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    v
}

/// W1 between two sorted samples: the integral of `|F_a^{-1}(u) - F_b^{-1}(u)|` over `u`.
fn w1_sorted<F: Scalar>(a: &[F], b: &[F]) -> F {
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        let total = a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + (x - y).abs());
        return total / F::from_usize(na).unwrap();
    }
    // walk the merged breakpoints i/na and j/nb; compare (i+1) nb against (j+1) na exactly
    let (fa, fb) = (F::from_usize(na).unwrap(), F::from_usize(nb).unwrap());
    let denom = fa * fb;
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev: u128 = 0;
    let mut acc = F::zero();
    while i < na && j < nb {
        let next_a = (i as u128 + 1) * nb as u128;
        let next_b = (j as u128 + 1) * na as u128;
        let next = next_a.min(next_b);
        let width = F::from_u128(next - prev).unwrap() / denom;
        acc = acc + width * (a[i] - b[j]).abs();
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    acc
}

/// Exact 1-Wasserstein distance between two empirical distributions on `R`.
pub fn w1_1d<F: Scalar>(sample_a: &[F], sample_b: &[F]) -> Result<F> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return usage("w1 needs non-empty samples");
    }
    Ok(w1_sorted(&sorted(sample_a), &sorted(sample_b)))
}

/// Fixed pseudo-random unit directions in `R^d`.
pub fn slicing_directions<F: Scalar>(dim: usize, count: usize, seed: u64) -> Vec<Vec<F>> {
    let mut rng = stream(derive_seed(seed, &[dim as u64, count as u64]));
    (0..count)
        .map(|_| loop {
            let v: Vec<F> = (0..dim).map(|_| F::standard_normal(&mut rng)).collect();
            let n = crate::scalar::norm(&v);
            if n > F::zero() {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

fn project<F: Scalar>(sample: &[F], dim: usize, dir: &[F]) -> Vec<F> {
    sample.chunks_exact(dim).map(|row| row.iter().zip(dir).fold(F::zero(), |a, (&x, &u)| a + x * u)).collect()
}

fn check_rows<F>(sample: &[F], dim: usize) -> Result<usize> {
    if dim == 0 || !sample.len().is_multiple_of(dim) {
        return usage(format!("sample length {} is not a multiple of d = {dim}", sample.len()));
    }
    if sample.is_empty() {
        return usage("empty sample");
    }
    Ok(sample.len() / dim)
}

/// W1 for row-major samples in `R^d`: exact when `d = 1`, sliced over
/// `directions` fixed random directions otherwise.
pub fn w1<F: Scalar>(a: &[F], b: &[F], dim: usize, directions: usize, seed: u64) -> Result<F> {
    check_rows(a, dim)?;
    check_rows(b, dim)?;
    if dim == 1 {
        return w1_1d(a, b);
    }
    if directions == 0 {
        return usage("sliced W1 needs at least one direction");
    }
    let dirs = slicing_directions::<F>(dim, directions, seed);
    let total = dirs
        .iter()
        .try_fold(F::zero(), |acc, u| Ok::<F, Error>(acc + w1_1d(&project(a, dim, u), &project(b, dim, u))?))?;
    Ok(total / F::from_usize(directions).unwrap())
}

/// Resample a sorted sample with replacement, keeping it sorted.
fn resample_sorted<F: Scalar, R: Rng>(sorted: &[F], rng: &mut R, counts: &mut Vec<u32>) -> Vec<F> {
    let n = sorted.len();
    counts.clear();
    counts.resize(n, 0);
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (&x, &c) in sorted.iter().zip(counts.iter()) {
        for _ in 0..c {
            out.push(x);
        }
    }
    out
}

/// Bootstrap standard error of [`w1`], resampling both samples.
pub fn bootstrap_w1_se<F: Scalar>(
    a: &[F],
    b: &[F],
    dim: usize,
    directions: usize,
    replicates: usize,
    seed: u64,
) -> Result<F> {
    check_rows(a, dim)?;
    check_rows(b, dim)?;
    if replicates < 2 {
        return usage("bootstrap needs at least two replicates");
    }
    let dirs: Vec<Vec<F>> =
        if dim == 1 { vec![vec![F::one()]] } else { slicing_directions(dim, directions.max(1), seed) };
    let proj_a: Vec<Vec<F>> = dirs.iter().map(|u| sorted(&project(a, dim, u))).collect();
    let proj_b: Vec<Vec<F>> = dirs.iter().map(|u| sorted(&project(b, dim, u))).collect();
    let values: Vec<F> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(derive_seed(seed, &[0xB007, r as u64]));
            let mut counts = Vec::new();
            let total = proj_a.iter().zip(&proj_b).fold(F::zero(), |acc, (pa, pb)| {
                let ra = resample_sorted(pa, &mut rng, &mut counts);
                let rb = resample_sorted(pb, &mut rng, &mut counts);
                acc + w1_sorted(&ra, &rb)
            });
            total / F::from_usize(proj_a.len()).unwrap()
        })
        .collect();
    let n = F::from_usize(replicates).unwrap();
    let mean = values.iter().fold(F::zero(), |a, &v| a + v) / n;
    let var = values.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / (n - F::one());
    Ok(var.sqrt())
}

/// Histogram layout for [`tv_histogram`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binning<F> {
    /// Bins per axis.
    pub bins: usize,
    /// Per-axis `(lo, hi)`; `None` spans the union of both samples.
    pub ranges: Option<Vec<(F, F)>>,
}

impl<F> Binning<F> {
    pub fn uniform(bins: usize) -> Self {
        Self { bins, ranges: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate<F> {
    pub value: F,
    /// Total number of cells (`bins^d`).
    pub cells: usize,
}

/// Histogram total variation `1/2 sum |p_a - p_b|` over product bins (`d <= 2`),
/// a lower bound of the total variation distance.
pub fn tv_histogram<F: Scalar>(a: &[F], b: &[F], dim: usize, binning: &Binning<F>) -> Result<TvEstimate<F>> {
    let na = check_rows(a, dim)?;
    let nb = check_rows(b, dim)?;
    if dim > 2 {
        return Err(Error::Unsupported(format!("histogram TV supports d <= 2, got {dim}")));
    }
    if na < 10 || nb < 10 {
        return usage("histogram TV needs at least 10 samples per distribution");
    }
    if binning.bins == 0 {
        return usage("binning needs at least one bin");
    }
    let ranges: Vec<(F, F)> = match &binning.ranges {
        Some(r) => {
            check_dim(dim, r.len())?;
            r.clone()
        }
        None => (0..dim)
            .map(|axis| {
                a.iter()
                    .skip(axis)
                    .step_by(dim)
                    .chain(b.iter().skip(axis).step_by(dim))
                    .fold((F::infinity(), F::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)))
            })
            .collect(),
    };
    let bins = binning.bins;
    let cells = bins.pow(dim as u32);
    let cell_of = |row: &[F]| -> Option<usize> {
        let mut idx = 0;
        for (axis, (&x, &(lo, hi))) in row.iter().zip(&ranges).enumerate() {
            if x < lo || x > hi {
                return None;
            }
            let width = hi - lo;
            let k = if width > F::zero() {
                let u = (x - lo) / width;
                (u * F::from_usize(bins).unwrap()).floor().to_usize().unwrap_or(0).min(bins - 1)
            } else {
                0
            };
            idx += k * bins.pow(axis as u32);
        }
        Some(idx)
    };
    // mass outside explicit ranges goes to one overflow cell
    let mut ca = vec![0usize; cells + 1];
    let mut cb = vec![0usize; cells + 1];
    for row in a.chunks_exact(dim) {
        ca[cell_of(row).unwrap_or(cells)] += 1;
    }
    for row in b.chunks_exact(dim) {
        cb[cell_of(row).unwrap_or(cells)] += 1;
    }
    // exact integer sum of |x/na - y/nb| * na * nb, so nested refinements are
    // monotone without roundoff
    let total: u128 =
        ca.iter().zip(&cb).map(|(&x, &y)| (x as u128 * nb as u128).abs_diff(y as u128 * na as u128)).sum();
    let value = (F::from_f64(total as f64 / (2.0 * na as f64 * nb as f64)).unwrap()).min(F::one());
    Ok(TvEstimate { value, cells })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors<F> {
    /// Sample mean minus target mean, per coordinate.
    pub mean_err: Vec<F>,
    /// Frobenius norm of sample covariance minus target covariance.
    pub cov_err: F,
}

/// Mean and covariance errors of a row-major sample against a catalog target.
pub fn moment_errors<F: Scalar>(sample: &[F], target: &TargetSpec<F>) -> Result<MomentErrors<F>> {
    let d = target.dim();
    let k = check_rows(sample, d)?;
    let (mean, cov) =
        target.moments().ok_or_else(|| Error::Unsupported(format!("`{}` has no analytic moments", target.name())))?;
    let kf = F::from_usize(k).unwrap();
    let mut m = vec![F::zero(); d];
    for row in sample.chunks_exact(d) {
        for (mi, &x) in m.iter_mut().zip(row) {
            *mi = *mi + x;
        }
    }
    m.iter_mut().for_each(|x| *x = *x / kf);
    let mut c = vec![F::zero(); d * d];
    for row in sample.chunks_exact(d) {
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = c[i * d + j] + (row[i] - m[i]) * (row[j] - m[j]);
            }
        }
    }
    let cov_err = c
        .iter()
        .zip(&cov)
        .fold(F::zero(), |acc, (&s, &t)| {
            let e = s / kf - t;
            acc + e * e
        })
        .sqrt();
    Ok(MomentErrors { mean_err: m.iter().zip(&mean).map(|(&s, &t)| s - t).collect(), cov_err })
}

/// Settings for [`compute_metrics`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub bins: usize,
    pub directions: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self { bins: 50, directions: DEFAULT_DIRECTIONS, bootstrap: DEFAULT_BOOTSTRAP, seed: 0 }
    }
}

/// Distances of one sampler run to a reference sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<F> {
    pub n: usize,
    pub epsilon: F,
    #[serde(rename = "K")]
    pub ensemble_size: usize,
    #[serde(rename = "M")]
    pub mc_batch: usize,
    pub w1: F,
    pub mc_se: F,
    pub tv_hist: F,
    pub tv_cells: usize,
    pub mean_err: Vec<F>,
    pub cov_err: F,
}

/// Column order of [`MetricsReport::csv_row`].
pub const METRICS_CSV_HEADER: &str = "n,epsilon,K,M,w1,mc_se,tv_hist,mean_err_max,cov_err";

impl<F: Scalar> MetricsReport<F> {
    pub fn mean_err_max(&self) -> F {
        self.mean_err.iter().fold(F::zero(), |m, &e| m.max(e.abs()))
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{},{},{:?},{:?},{:?},{:?},{:?}",
            self.n,
            self.epsilon.to_f64_lossy(),
            self.ensemble_size,
            self.mc_batch,
            self.w1.to_f64_lossy(),
            self.mc_se.to_f64_lossy(),
            self.tv_hist.to_f64_lossy(),
            self.mean_err_max().to_f64_lossy(),
            self.cov_err.to_f64_lossy()
        )
    }
}

/// Configuration echo stored in a [`MetricsReport`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunEcho<F> {
    pub n: usize,
    pub epsilon: F,
    pub mc_batch: usize,
}

/// W1 (with bootstrap error), histogram TV, and moment errors of `sample`
/// against `reference`. Moments are skipped (`NaN`-free zeros are never
/// invented) when `target` has none: the fields are then empty / zero.
pub fn compute_metrics<F: Scalar>(
    sample: &[F],
    reference: &[F],
    target: &TargetSpec<F>,
    echo: RunEcho<F>,
    options: &MetricsOptions,
) -> Result<MetricsReport<F>> {
    let d = target.dim();
    let k = check_rows(sample, d)?;
    let w1v = w1(sample, reference, d, options.directions, options.seed)?;
    let mc_se = bootstrap_w1_se(sample, reference, d, options.directions, options.bootstrap, options.seed)?;
    let tv = if d <= 2 {
        tv_histogram(sample, reference, d, &Binning::uniform(options.bins))?
    } else {
        // product bins are only meaningful for d <= 2
        TvEstimate { value: F::zero(), cells: 0 }
    };
    let moments = match target.moments() {
        Some(_) => moment_errors(sample, target)?,
        None => MomentErrors { mean_err: Vec::new(), cov_err: F::zero() },
    };
    Ok(MetricsReport {
        n: echo.n,
        epsilon: echo.epsilon,
        ensemble_size: k,
        mc_batch: echo.mc_batch,
        w1: w1v,
        mc_se,
        tv_hist: tv.value,
        tv_cells: tv.cells,
        mean_err: moments.mean_err,
        cov_err: moments.cov_err,
    })
}

/// Axis-aligned box `[lo, hi]` sampled by the condition probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRegion<F> {
    pub lo: Vec<F>,
    pub hi: Vec<F>,
}

impl<F: Scalar> ProbeRegion<F> {
    pub fn cube(dim: usize, lo: F, hi: F) -> Self {
        Self { lo: vec![lo; dim], hi: vec![hi; dim] }
    }
}

/// Empirical lower bounds for the Lipschitz constant of `log phi` and the
/// relative-Lipschitz constant `C1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionProbeResult<F> {
    pub lipschitz_logphi_est: Option<F>,
    pub a4_ratio_est: Option<F>,
    pub sample_points: usize,
    /// Pairs skipped because `phi` vanished at an endpoint.
    pub excluded_pairs: usize,
    pub max_attained_at: Vec<F>,
}

/// Pair separations cycled through by the probes.
pub const PROBE_SCALES: [f64; 3] = [1e-3, 1e-1, 1.0];

pub const MIN_PROBE_PAIRS: usize = 1000;

fn probe_pairs<F: Scalar, R: Rng + ?Sized>(
    target: &TargetSpec<F>,
    region: &ProbeRegion<F>,
    pairs: usize,
    rng: &mut R,
    mut score: impl FnMut(F, F, F) -> Option<F>,
) -> Result<(F, usize, Vec<F>)> {
    let d = target.dim();
    check_dim(d, region.lo.len())?;
    check_dim(d, region.hi.len())?;
    if region.lo.iter().zip(&region.hi).any(|(l, h)| !(l <= h)) {
        return usage("probe region needs lo <= hi on every axis");
    }
    if pairs < MIN_PROBE_PAIRS {
        return usage(format!("probes need at least {MIN_PROBE_PAIRS} pairs, got {pairs}"));
    }
    let mut best = F::zero();
    let mut at = vec![F::zero(); d];
    let mut excluded = 0;
    let mut x = vec![F::zero(); d];
    let mut y = vec![F::zero(); d];
    let mut dir = vec![F::zero(); d];
    for p in 0..pairs {
        for ((xi, &l), &h) in x.iter_mut().zip(&region.lo).zip(&region.hi) {
            *xi = l + (h - l) * F::unit_uniform(rng);
        }
        let n = loop {
            dir.iter_mut().for_each(|u| *u = F::standard_normal(rng));
            let n = crate::scalar::norm(&dir);
            if n > F::zero() {
                break n;
            }
        };
        let scale = F::lit(PROBE_SCALES[p % PROBE_SCALES.len()]);
        for ((yi, &xi), &u) in y.iter_mut().zip(&x).zip(&dir) {
            *yi = xi + scale * u / n;
        }
        let dist = x.iter().zip(&y).fold(F::zero(), |a, (&p, &q)| a + (p - q) * (p - q)).sqrt();
        if dist == F::zero() {
            continue;
        }
        let lx = target.log_phi(&x)?;
        let ly = target.log_phi(&y)?;
        match score(lx, ly, dist) {
            Some(r) => {
                if r > best {
                    best = r;
                    at.copy_from_slice(&x);
                }
            }
            None => excluded += 1,
        }
    }
    Ok((best, excluded, at))
}

/// Largest `|log phi(x) - log phi(y)| / |x - y|` over random pairs in `region`.
pub fn probe_a2<F: Scalar, R: Rng + ?Sized>(
    target: &TargetSpec<F>,
    region: &ProbeRegion<F>,
    pairs: usize,
    rng: &mut R,
) -> Result<ConditionProbeResult<F>> {
    let (best, excluded, at) = probe_pairs(target, region, pairs, rng, |lx, ly, dist| {
        if lx == F::neg_infinity() || ly == F::neg_infinity() {
            None
        } else {
            Some((lx - ly).abs() / dist)
        }
    })?;
    Ok(ConditionProbeResult {
        lipschitz_logphi_est: Some(best),
        a4_ratio_est: None,
        sample_points: pairs,
        excluded_pairs: excluded,
        max_attained_at: at,
    })
}

/// `|phi(x) - phi(y)| / ((1 + phi(x) + phi(y)) |x - y|)` in log-stabilized form.
#[inline]
pub fn a4_ratio<F: Scalar>(log_phi_x: F, log_phi_y: F, dist: F) -> F {
    let top = log_phi_x.max(log_phi_y).max(F::zero());
    let ex = (log_phi_x - top).exp();
    let ey = (log_phi_y - top).exp();
    let num = (ex - ey).abs();
    let den = (-top).exp() + ex + ey;
    num / den / dist
}

/// Largest relative-Lipschitz ratio over random pairs in `region`.
pub fn probe_a4<F: Scalar, R: Rng + ?Sized>(
    target: &TargetSpec<F>,
    region: &ProbeRegion<F>,
    pairs: usize,
    rng: &mut R,
) -> Result<ConditionProbeResult<F>> {
    let (best, excluded, at) = probe_pairs(target, region, pairs, rng, |lx, ly, dist| Some(a4_ratio(lx, ly, dist)))?;
    Ok(ConditionProbeResult {
        lipschitz_logphi_est: None,
        a4_ratio_est: Some(best),
        sample_points: pairs,
        excluded_pairs: excluded,
        max_attained_at: at,
    })
}

/// Least-squares fit of `log metric = intercept + slope log x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit<F> {
    pub slope: F,
    pub intercept: F,
    pub slope_se: F,
    /// 95% confidence interval of the slope (Student t, `n - 2` dof).
    pub slope_ci: (F, F),
}

/// Ordinary least squares on `(log x, log metric)` for points `(x, metric, se)`.
pub fn fit_convergence<F: Scalar>(series: &[(F, F, F)]) -> Result<ConvergenceFit<F>> {
    if series.len() < 3 {
        return usage("convergence fit needs at least 3 points");
    }
    if let Some(&(x, m, _)) = series.iter().find(|&&(x, m, _)| !(x > F::zero()) || !(m > F::zero())) {
        return usage(format!("convergence fit needs positive x and metric, got ({x}, {m})"));
    }
    let pts: Vec<(f64, f64)> = series.iter().map(|&(x, m, _)| (x.to_f64_lossy().ln(), m.to_f64_lossy().ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return usage("convergence fit needs at least two distinct x values");
    }
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>();
    let dof = n - 2.0;
    let slope_se = (rss / dof / sxx).sqrt();
    let tq = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Usage(e.to_string()))?.inverse_cdf(0.975);
    Ok(ConvergenceFit {
        slope: F::lit(slope),
        intercept: F::lit(intercept),
        slope_se: F::lit(slope_se),
        slope_ci: (F::lit(slope - tq * slope_se), F::lit(slope + tq * slope_se)),
    })
}
