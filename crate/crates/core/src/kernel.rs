//! Reflected Brownian transition kernels on `[0, 1]` and their products.
//!
//! The transition density `p(y | x; v)` of Brownian motion reflected at 0
//! and 1, with accumulated variance `v`, admits two complementary series:
//!
//! * a method-of-images sum of Gaussians, accurate for small `v`, and
//! * a Laplacian-eigenfunction (cosine) sum, accurate for large `v`.
//!
//! Both are truncations of the same function (they are equal as infinite
//! series by Poisson summation), so a branch threshold `sigma'` selects
//! whichever converges faster: images below `sigma'`, eigenfunctions above.
//! With the default threshold 0.35 and five terms on each side, the two
//! truncations agree to better than 1e-9 at the switch.
//!
//! Sampling never needs the series: folding a free Gaussian draw through
//! the period-2 triangle wave realizes the kernel exactly.

use crate::geometry::fold_finite;
use crate::quad;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

const PI: f64 = std::f64::consts::PI;

/// Densities below this floor are reported as a typed underflow rather
/// than a silent zero, because scores divide by the density.
pub const DENSITY_FLOOR: f64 = 1e-300;

fn check_unit(name: &'static str, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite(name));
    }
    if !(-1e-9..=1.0 + 1e-9).contains(&x) {
        return Err(Error::OutOfDomain(format!("{name} = {x} outside [0, 1]")));
    }
    Ok(x.clamp(0.0, 1.0))
}

fn check_variance(v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidVariance(v));
    }
    Ok(())
}

/// Mean-zero Gaussian pdf with variance `v`. Exponents below -760
/// underflow f64 outright; skipping the `exp` there keeps image sums cheap
/// when most shifts are far out.
#[inline]
fn phi(u: f64, v: f64) -> f64 {
    let e = -u * u / (2.0 * v);
    if e < -760.0 {
        return 0.0;
    }
    e.exp() / (2.0 * PI * v).sqrt()
}

/// Method-of-images evaluation of the reflected transition density:
/// `sum_{m=-M}^{M} [phi_v(2m + y - x) + phi_v(2m - y - x)]`.
pub fn gaussian_image_sum(x: f64, y: f64, v: f64, m_terms: usize) -> Result<f64> {
    let x = check_unit("x", x)?;
    let y = check_unit("y", y)?;
    check_variance(v)?;
    let m = m_terms as i64;
    let mut sum = 0.0;
    for k in -m..=m {
        let shift = 2.0 * k as f64;
        sum += phi(shift + y - x, v) + phi(shift - y - x, v);
    }
    Ok(sum)
}

/// Eigenfunction evaluation of the reflected transition density:
/// `1 + 2 sum_{k=1}^{K} exp(-k^2 pi^2 v / 2) cos(k pi x) cos(k pi y)`.
pub fn eigen_sum(x: f64, y: f64, v: f64, k_terms: usize) -> Result<f64> {
    let x = check_unit("x", x)?;
    let y = check_unit("y", y)?;
    check_variance(v)?;
    let mut sum = 1.0;
    for k in 1..=k_terms {
        let kf = k as f64;
        let damp = (-kf * kf * PI * PI * v / 2.0).exp();
        if damp == 0.0 {
            break;
        }
        sum += 2.0 * damp * (kf * PI * x).cos() * (kf * PI * y).cos();
    }
    Ok(sum)
}

/// Image sum and its `y`-derivative in one pass over the shifts.
fn image_sum_with_dy(x: f64, y: f64, v: f64, m_terms: usize) -> (f64, f64) {
    let m = m_terms as i64;
    let mut dens = 0.0;
    let mut dy = 0.0;
    for k in -m..=m {
        let shift = 2.0 * k as f64;
        let a = shift + y - x;
        let b = shift - y - x;
        let pa = phi(a, v);
        let pb = phi(b, v);
        dens += pa + pb;
        dy += -(a / v) * pa + (b / v) * pb;
    }
    (dens, dy)
}

/// Eigen sum and its `y`-derivative in one pass over the frequencies; the
/// derivative is analytically zero on the boundary.
fn eigen_sum_with_dy(x: f64, y: f64, v: f64, k_terms: usize) -> (f64, f64) {
    let mut dens = 1.0;
    let mut dy = 0.0;
    let boundary = y == 0.0 || y == 1.0;
    for k in 1..=k_terms {
        let kf = k as f64;
        let damp = (-kf * kf * PI * PI * v / 2.0).exp();
        if damp == 0.0 {
            break;
        }
        let cx = (kf * PI * x).cos();
        dens += 2.0 * damp * cx * (kf * PI * y).cos();
        if !boundary {
            dy += -2.0 * kf * PI * damp * cx * (kf * PI * y).sin();
        }
    }
    (dens, dy)
}

/// The reflected Brownian transition kernel with its branch configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectedKernel {
    /// Branch threshold `sigma'`: image sum when `sqrt(v) < sigma'`,
    /// eigenfunction sum otherwise.
    pub crossover_sigma: f64,
    /// Image-shift truncation `M` (shifts `-M..=M`).
    pub n_image_terms: usize,
    /// Eigenfunction truncation `K` (frequencies `1..=K`).
    pub n_eigen_terms: usize,
}

impl Default for ReflectedKernel {
    fn default() -> Self {
        Self { crossover_sigma: 0.35, n_image_terms: 5, n_eigen_terms: 5 }
    }
}

impl ReflectedKernel {
    pub fn new(crossover_sigma: f64, n_image_terms: usize, n_eigen_terms: usize) -> Result<Self> {
        if !(crossover_sigma.is_finite() && crossover_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("crossover_sigma = {crossover_sigma}")));
        }
        if n_image_terms == 0 || n_eigen_terms == 0 {
            return Err(Error::InvalidConfig("truncation orders must be positive".into()));
        }
        Ok(Self { crossover_sigma, n_image_terms, n_eigen_terms })
    }

    #[inline]
    fn use_image_branch(&self, v: f64) -> bool {
        v.sqrt() < self.crossover_sigma
    }

    /// Transition density `p(y | x; v)`, branch-selected; strictly positive
    /// or a typed underflow.
    pub fn transition_density_1d(&self, x: f64, y: f64, v: f64) -> Result<f64> {
        let dens = if self.use_image_branch(v) {
            gaussian_image_sum(x, y, v, self.n_image_terms)?
        } else {
            eigen_sum(x, y, v, self.n_eigen_terms)?
        };
        if dens < DENSITY_FLOOR {
            return Err(Error::Underflow { x, y, v });
        }
        Ok(dens)
    }

    /// Log transition density.
    ///
    /// The image branch is evaluated in the log domain (log-sum-exp over
    /// image terms), so downstream log-density arithmetic stays stable at
    /// very small `v` where the `1/sqrt(2 pi v)` prefactor is extreme.
    pub fn log_transition_density_1d(&self, x: f64, y: f64, v: f64) -> Result<f64> {
        if self.use_image_branch(v) {
            let x = check_unit("x", x)?;
            let y = check_unit("y", y)?;
            check_variance(v)?;
            let m = self.n_image_terms as i64;
            let log_pref = -0.5 * (2.0 * PI * v).ln();
            let exponent = |k: i64, sign: f64| {
                let u = 2.0 * k as f64 + sign * y - x;
                -u * u / (2.0 * v)
            };
            let mut max = f64::NEG_INFINITY;
            for k in -m..=m {
                max = max.max(exponent(k, 1.0)).max(exponent(k, -1.0));
            }
            let mut sum = 0.0;
            for k in -m..=m {
                sum += (exponent(k, 1.0) - max).exp() + (exponent(k, -1.0) - max).exp();
            }
            Ok(log_pref + max + sum.ln())
        } else {
            let dens = eigen_sum(x, y, v, self.n_eigen_terms)?;
            if dens < DENSITY_FLOOR {
                return Err(Error::Underflow { x, y, v });
            }
            Ok(dens.ln())
        }
    }

    /// Transition score `d/dy log p(y | x; v)`, using the analytic
    /// derivative of whichever series the branch selects.
    pub fn transition_score_1d(&self, x: f64, y: f64, v: f64) -> Result<f64> {
        let xc = check_unit("x", x)?;
        let yc = check_unit("y", y)?;
        check_variance(v)?;
        let (dens, dy) = if self.use_image_branch(v) {
            image_sum_with_dy(xc, yc, v, self.n_image_terms)
        } else {
            eigen_sum_with_dy(xc, yc, v, self.n_eigen_terms)
        };
        if dens < DENSITY_FLOOR {
            return Err(Error::Underflow { x, y, v });
        }
        Ok(dy / dens)
    }

    /// Exact draw from `p(. | x; v)`: fold a free Gaussian.
    pub fn sample_transition_1d<R: Rng + ?Sized>(&self, x: f64, v: f64, rng: &mut R) -> Result<f64> {
        let x = check_unit("x", x)?;
        check_variance(v)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(fold_finite(x + v.sqrt() * z))
    }

    /// Product density over hypercube coordinates.
    pub fn transition_density_nd(&self, x: &[f64], y: &[f64], v: f64) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        let mut dens = 1.0;
        for (&xi, &yi) in x.iter().zip(y.iter()) {
            dens *= self.transition_density_1d(xi, yi, v)?;
        }
        Ok(dens)
    }

    /// Sum of per-coordinate log densities.
    pub fn log_transition_density_nd(&self, x: &[f64], y: &[f64], v: f64) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        let mut log_dens = 0.0;
        for (&xi, &yi) in x.iter().zip(y.iter()) {
            log_dens += self.log_transition_density_1d(xi, yi, v)?;
        }
        Ok(log_dens)
    }

    /// Componentwise transition score.
    pub fn transition_score_nd(&self, x: &[f64], y: &[f64], v: f64) -> Result<Vec<f64>> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        x.iter()
            .zip(y.iter())
            .map(|(&xi, &yi)| self.transition_score_1d(xi, yi, v))
            .collect()
    }

    /// Independent per-coordinate draws.
    pub fn sample_transition_nd<R: Rng + ?Sized>(&self, x: &[f64], v: f64, rng: &mut R) -> Result<Vec<f64>> {
        x.iter().map(|&xi| self.sample_transition_1d(xi, v, rng)).collect()
    }

    /// Posterior mean `E[x | y]` under a prior on `[0, 1]` perturbed by this
    /// kernel, by fixed-order composite quadrature.
    pub fn posterior_mean_1d<F: Fn(f64) -> f64>(&self, y: f64, v: f64, prior: F) -> Result<f64> {
        let y = check_unit("y", y)?;
        check_variance(v)?;
        let width = v.sqrt().min(2e-3);
        let num = quad::integrate_unit_adaptive(
            |x| x * self.transition_density_1d(x, y, v).unwrap_or(0.0) * prior(x),
            width,
        );
        let den = quad::integrate_unit_adaptive(
            |x| self.transition_density_1d(x, y, v).unwrap_or(0.0) * prior(x),
            width,
        );
        if den < 1e-12 {
            return Err(Error::VanishingMarginal { y, v });
        }
        Ok(num / den)
    }

    /// The (generally invalid on bounded domains) Tweedie denoiser
    /// `y + v * d/dy log p_Y(y)` for the same marginal, with the marginal
    /// and its derivative computed by the same quadrature as
    /// [`Self::posterior_mean_1d`].
    pub fn tweedie_estimate_1d<F: Fn(f64) -> f64>(&self, y: f64, v: f64, prior: F) -> Result<f64> {
        let y = check_unit("y", y)?;
        check_variance(v)?;
        let width = v.sqrt().min(2e-3);
        let marginal = quad::integrate_unit_adaptive(
            |x| self.transition_density_1d(x, y, v).unwrap_or(0.0) * prior(x),
            width,
        );
        // d/dy p(y|x) = p(y|x) * score(y|x)
        let marginal_dy = quad::integrate_unit_adaptive(
            |x| {
                let p = self.transition_density_1d(x, y, v).unwrap_or(0.0);
                let s = self.transition_score_1d(x, y, v).unwrap_or(0.0);
                p * s * prior(x)
            },
            width,
        );
        if marginal < 1e-12 {
            return Err(Error::VanishingMarginal { y, v });
        }
        Ok(y + v * marginal_dy / marginal)
    }
}

/// Cumulative integral of `pdf` on [0, 1] at `panels + 1` uniform knots.
///
/// Each panel is integrated with a 16-point Gauss-Legendre rule, so the
/// table is accurate to quadrature precision for kernels wider than the
/// panel spacing.
pub fn cdf_table<F: Fn(f64) -> f64>(pdf: F, panels: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(panels + 1);
    table.push(0.0);
    let h = 1.0 / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        acc += quad::integrate(&pdf, p as f64 * h, (p + 1) as f64 * h, 1, 16);
        table.push(acc);
    }
    table
}

/// Linear interpolation of a [`cdf_table`] at `t in [0, 1]`.
pub fn eval_cdf_table(table: &[f64], t: f64) -> f64 {
    let panels = table.len() - 1;
    let u = (t.clamp(0.0, 1.0)) * panels as f64;
    let i = (u as usize).min(panels - 1);
    let frac = u - i as f64;
    table[i] + frac * (table[i + 1] - table[i])
}

/// Outcome of one kernel property check.
#[derive(Debug, Clone)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub max_discrepancy: f64,
    pub threshold: f64,
    pub pass: bool,
    /// `true` for advisory rows that do not affect the overall verdict.
    pub warning: bool,
}

impl PropertyCheck {
    fn new(name: &'static str, max_discrepancy: f64, threshold: f64) -> Self {
        Self { name, max_discrepancy, threshold, pass: max_discrepancy < threshold, warning: false }
    }
}

/// The kernel property suite backing the `kernel-check` command:
/// normalization, branch agreement, Neumann boundary, Chapman-Kolmogorov,
/// and the sampler law. Emits an advisory truncation row when the branch
/// threshold forces the image sum into a regime it cannot resolve.
pub fn property_suite<R: Rng + ?Sized>(kernel: &ReflectedKernel, rng: &mut R) -> Vec<PropertyCheck> {
    let mut checks = Vec::new();

    // Normalization: quadrature mass of p(.|x; v) over a (x, v) grid
    // spanning v in [1e-4, 25].
    let mut worst = 0.0f64;
    for i in 0..10 {
        let x = (i as f64 + 0.5) / 10.0;
        for j in 0..10 {
            let v = 1e-4 * (25.0f64 / 1e-4).powf(j as f64 / 9.0);
            let mass = quad::integrate_unit_adaptive(
                |y| kernel.transition_density_1d(x, y, v).unwrap_or(0.0),
                v.sqrt(),
            );
            worst = worst.max((mass - 1.0).abs());
        }
    }
    checks.push(PropertyCheck::new("normalization", worst, 1e-6));

    // Branch agreement between the two truncated series over the crossover
    // neighborhood v in [0.09, 0.49].
    let mut worst = 0.0f64;
    for i in 0..20 {
        let x = i as f64 / 19.0;
        for j in 0..20 {
            let y = j as f64 / 19.0;
            for l in 0..5 {
                let v = 0.09 + 0.4 * l as f64 / 4.0;
                let a = gaussian_image_sum(x, y, v, kernel.n_image_terms).unwrap();
                let b = eigen_sum(x, y, v, kernel.n_eigen_terms).unwrap();
                worst = worst.max((a - b).abs());
            }
        }
    }
    checks.push(PropertyCheck::new("branch-agreement", worst, 1e-6));

    // Continuity across the branch threshold itself.
    let v_star = kernel.crossover_sigma * kernel.crossover_sigma;
    let mut worst = 0.0f64;
    for i in 0..12 {
        let x = i as f64 / 11.0;
        for j in 0..12 {
            let y = j as f64 / 11.0;
            let a = kernel.transition_density_1d(x, y, v_star - 1e-9).unwrap_or(f64::NAN);
            let b = kernel.transition_density_1d(x, y, v_star + 1e-9).unwrap_or(f64::NAN);
            worst = worst.max((a - b).abs());
        }
    }
    checks.push(PropertyCheck::new("branch-continuity", worst, 1e-7));

    // Neumann boundary: one-sided second-order finite-difference normal
    // derivative at y in {0, 1}, relative to the kernel maximum.
    let mut worst = 0.0f64;
    for i in 0..10 {
        let x = (i as f64 + 0.5) / 10.0;
        for j in 0..8 {
            let v = 1e-4 * (25.0f64 / 1e-4).powf(j as f64 / 7.0);
            let h = 1e-5;
            let peak = kernel.transition_density_1d(x, x, v).unwrap_or(1.0);
            // Underflowed far tails contribute nothing to the derivative.
            let p = |y: f64| kernel.transition_density_1d(x, y, v).unwrap_or(0.0);
            let d0 = (-3.0 * p(0.0) + 4.0 * p(h) - p(2.0 * h)) / (2.0 * h);
            let d1 = (3.0 * p(1.0) - 4.0 * p(1.0 - h) + p(1.0 - 2.0 * h)) / (2.0 * h);
            worst = worst.max(d0.abs() / peak).max(d1.abs() / peak);
        }
    }
    checks.push(PropertyCheck::new("neumann-boundary", worst, 1e-4));

    // Chapman-Kolmogorov semigroup identity on random tuples.
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: f64 = rng.gen();
        let y: f64 = rng.gen();
        let v1 = 0.002 + 0.5 * rng.gen::<f64>();
        let v2 = 0.002 + 0.5 * rng.gen::<f64>();
        let direct = kernel.transition_density_1d(x, y, v1 + v2).unwrap();
        let composed = quad::integrate_unit_adaptive(
            |z| {
                kernel.transition_density_1d(z, y, v1).unwrap_or(0.0)
                    * kernel.transition_density_1d(x, z, v2).unwrap_or(0.0)
            },
            v1.min(v2).sqrt(),
        );
        worst = worst.max((direct - composed).abs());
    }
    checks.push(PropertyCheck::new("chapman-kolmogorov", worst, 1e-5));

    // Sampler law: W1 between folded-Gaussian draws and the quadrature CDF,
    // tabulated by cumulative panel integration.
    let mut worst = 0.0f64;
    for &v in &[0.01, 0.25, 4.0] {
        let x0 = 0.3;
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| kernel.sample_transition_1d(x0, v, rng).unwrap())
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let table = cdf_table(|y| kernel.transition_density_1d(x0, y, v).unwrap_or(0.0), 4096);
        let w1 = crate::eval::w1_sorted_unit(&draws, |t| eval_cdf_table(&table, t));
        worst = worst.max(w1);
    }
    checks.push(PropertyCheck::new("sampler-law", worst, 0.005));

    // Advisory: image-sum truncation error at the branch point, against a
    // high-order eigen reference. Material only when crossover_sigma is
    // pushed far above its default.
    let mut trunc = 0.0f64;
    for i in 0..8 {
        let x = i as f64 / 7.0;
        let a = gaussian_image_sum(x, x, v_star, kernel.n_image_terms).unwrap();
        let b = eigen_sum(x, x, v_star, 400).unwrap();
        trunc = trunc.max((a - b).abs());
    }
    if trunc > 1e-9 {
        let mut row = PropertyCheck::new("truncation-warning", trunc, 1e-9);
        row.pass = true;
        row.warning = true;
        checks.push(row);
    }

    checks
}
