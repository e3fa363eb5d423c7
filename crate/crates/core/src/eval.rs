//! Distribution-distance metrics for acceptance tests and CLI reports.
//!
//! Image-scale metrics (FID, Inception Score) have no desk-scale analog, so
//! sampler quality is judged with exactly computable 1D quantities:
//! Wasserstein-1 (empirical-empirical and empirical-vs-CDF), its sliced
//! multivariate extension, and the Kolmogorov-Smirnov statistic.

use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// A batch of sampler output with its provenance.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub points: Vec<Vec<f64>>,
    pub method: String,
    pub steps: usize,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(points: Vec<Vec<f64>>, method: impl Into<String>, steps: usize, seed: u64) -> Self {
        Self { points, method: method.into(), steps, seed }
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Exact empirical Wasserstein-1 distance between two 1D sample sets.
///
/// Equal sizes reduce to the mean absolute difference of order statistics;
/// the general case integrates |F_a - F_b| over the merged breakpoints.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("wasserstein1_1d"));
    }
    let a = sorted_copy(a);
    let b = sorted_copy(b);
    if a.len() == b.len() {
        let n = a.len() as f64;
        return Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n);
    }
    // Merge the supports and accumulate |F_a - F_b| between breakpoints.
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        prev = next;
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// Wasserstein-1 distance between an empirical sample and an exact CDF on
/// `[lo, hi]`, by integrating |F_emp - F| on a uniform grid of `nodes`
/// midpoints.
pub fn wasserstein1_vs_cdf<F: Fn(f64) -> f64>(
    samples: &[f64],
    cdf: F,
    lo: f64,
    hi: f64,
    nodes: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("wasserstein1_vs_cdf"));
    }
    let sorted = sorted_copy(samples);
    let n = sorted.len() as f64;
    let dx = (hi - lo) / nodes as f64;
    let mut total = 0.0;
    let mut idx = 0usize;
    for k in 0..nodes {
        let x = lo + (k as f64 + 0.5) * dx;
        while idx < sorted.len() && sorted[idx] <= x {
            idx += 1;
        }
        total += (idx as f64 / n - cdf(x)).abs() * dx;
    }
    Ok(total)
}

/// Pre-sorted variant on `[0, 1]` with the default 1e4 nodes.
pub(crate) fn w1_sorted_unit<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let nodes = 10_000;
    let dx = 1.0 / nodes as f64;
    let mut total = 0.0;
    let mut idx = 0usize;
    for k in 0..nodes {
        let x = (k as f64 + 0.5) * dx;
        while idx < sorted.len() && sorted[idx] <= x {
            idx += 1;
        }
        total += (idx as f64 / n - cdf(x)).abs() * dx;
    }
    total
}

/// Mean 1D Wasserstein-1 over random unit directions.
pub fn sliced_w1<R: Rng + ?Sized>(
    a: &SampleSet,
    b: &SampleSet,
    n_directions: usize,
    rng: &mut R,
) -> Result<f64> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::EmptyInput("sliced_w1"));
    }
    let dim = a.dim();
    if dim != b.dim() {
        return Err(Error::DimensionMismatch { expected: dim, got: b.dim() });
    }
    let mut total = 0.0;
    for _ in 0..n_directions {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        for d in &mut dir {
            *d /= norm;
        }
        let proj = |pts: &[Vec<f64>]| -> Vec<f64> {
            pts.iter().map(|p| p.iter().zip(&dir).map(|(x, d)| x * d).sum()).collect()
        };
        total += wasserstein1_1d(&proj(&a.points), &proj(&b.points))?;
    }
    Ok(total / n_directions as f64)
}

/// Two-sided Kolmogorov-Smirnov statistic of a sample against an exact CDF.
pub fn ks_statistic_1d<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("ks_statistic_1d"));
    }
    let sorted = sorted_copy(samples);
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs());
        sup = sup.max(((i + 1) as f64 / n - f).abs());
    }
    Ok(sup)
}
