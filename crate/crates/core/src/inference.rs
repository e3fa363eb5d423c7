//! Likelihood bounds and guidance composition.
//!
//! The per-point negative-log-likelihood bound splits into three terms:
//!
//! * **score term** — half the time-integrated weighted gap between the
//!   model score and the conditional transition score (the per-datapoint
//!   form of the reflected-Girsanov KL identity), with the model-free
//!   constant `||grad log p_t(x_t|x)||^2` removed. Dropping that constant
//!   is the standard likelihood-weighting control variate: it changes
//!   nothing in expectation over the data (the bound stays a bound on the
//!   mean negative log-likelihood, tight at the exact score), makes the
//!   zero-score evaluation exactly zero sample-by-sample, and cuts the
//!   Monte Carlo variance,
//! * **prior term** — KL between the terminal kernel `p_1(.|x)` and the
//!   uniform prior, computed per dimension by quadrature,
//! * **reconstruction term** — decoder cross-entropy minus variational
//!   posterior entropy at the time floor. The kernel is symmetric in its
//!   endpoints, so this is analytically zero; it is evaluated by quadrature
//!   anyway as a certification and reported.
//!
//! Guidance composes scores linearly: `w * grad log q(c|x) + s` for a
//! classifier, `(w+1) s_cond - w s_uncond` classifier-free. Both preserve
//! the Neumann boundary condition, being linear combinations of scores
//! whose normal components vanish.

use crate::kernel::ReflectedKernel;
use crate::quad;
use crate::samplers::ScoreFunction;
use crate::schedule::NoiseSchedule;
use crate::score::toy::TwoClassMixture;
use crate::{Error, Result};
use rand::Rng;

/// Per-point likelihood bound, in nats, with its decomposition.
#[derive(Debug, Clone, Copy)]
pub struct ElboReport {
    pub score_term: f64,
    pub prior_term: f64,
    pub reconstruction_term: f64,
    pub total_nats: f64,
    /// `total_nats / (dim ln 2)`, before any coordinate-change correction.
    pub bpd: f64,
    pub mc_std_error: f64,
}

/// Upper bound on `-log p(x)` for one data point.
///
/// The score term uses `n_mc` stratified times on `[t_min, 1]` (one
/// transition draw each); stratification only reduces variance, the
/// estimator is identical in expectation to uniform times.
pub fn elbo_pointwise<R: Rng + ?Sized>(
    kernel: &ReflectedKernel,
    schedule: &NoiseSchedule,
    x: &[f64],
    score: &dyn ScoreFunction,
    n_mc: usize,
    rng: &mut R,
) -> Result<ElboReport> {
    if n_mc < 16 {
        return Err(Error::InvalidConfig(format!(
            "n_mc = {n_mc} below the floor of 16; the standard error would be meaningless"
        )));
    }
    let d = x.len();
    let t_min = schedule.t_min;
    let span = 1.0 - t_min;

    // Score term: (1/2) E_t E_{x_t|x} gbar^2 [ ||s - target||^2 - ||target||^2 ]
    // = (1/2) E gbar^2 [ ||s||^2 - 2 <s, target> ], target = grad log p_t(x_t|x).
    let mut terms = Vec::with_capacity(n_mc);
    for i in 0..n_mc {
        let u: f64 = rng.gen();
        let t = t_min + span * ((i as f64 + u) / n_mc as f64);
        let v = schedule.accumulated_variance(0.0, t)?;
        let xt = kernel.sample_transition_nd(x, v, rng)?;
        let target = kernel.transition_score_nd(x, &xt, v)?;
        let s = score.evaluate(&xt, t);
        if s.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { step: i, t, point: xt });
        }
        let g = schedule.gbar(t);
        let gap: f64 = s.iter().zip(&target).map(|(a, b)| a * a - 2.0 * a * b).sum();
        terms.push(0.5 * g * g * gap * span);
    }
    let score_term = terms.iter().sum::<f64>() / n_mc as f64;
    let variance =
        terms.iter().map(|v| (v - score_term) * (v - score_term)).sum::<f64>() / n_mc as f64;
    let mc_std_error = (variance / n_mc as f64).sqrt();

    // Prior term: KL(p_1(.|x) || U) per dimension, 256-point quadrature.
    let v1 = schedule.accumulated_variance(0.0, 1.0)?;
    let mut prior_term = 0.0;
    for &xj in x {
        prior_term += quad::integrate(
            |y| {
                let p = kernel.transition_density_1d(xj, y, v1).unwrap_or(0.0);
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            },
            0.0,
            1.0,
            16,
            16,
        );
    }

    // Reconstruction term: decoder cross-entropy minus posterior entropy at
    // the time floor, on a window resolving the (possibly extremely narrow)
    // floor kernel.
    let v0 = schedule.accumulated_variance(0.0, t_min)?;
    let sd0 = v0.sqrt();
    let mut reconstruction_term = 0.0;
    for &xj in x {
        let lo = (xj - 12.0 * sd0).max(0.0);
        let hi = (xj + 12.0 * sd0).min(1.0);
        let cross = quad::integrate(
            |u| {
                let w = kernel.transition_density_1d(xj, u, v0).unwrap_or(0.0);
                if w > 0.0 {
                    -w * kernel.log_transition_density_1d(u, xj, v0).unwrap_or(0.0)
                } else {
                    0.0
                }
            },
            lo,
            hi,
            64,
            16,
        );
        let entropy = quad::integrate(
            |u| {
                let w = kernel.transition_density_1d(xj, u, v0).unwrap_or(0.0);
                if w > 0.0 {
                    -w * kernel.log_transition_density_1d(xj, u, v0).unwrap_or(0.0)
                } else {
                    0.0
                }
            },
            lo,
            hi,
            64,
            16,
        );
        reconstruction_term += cross - entropy;
    }

    let total_nats = score_term + prior_term + reconstruction_term;
    Ok(ElboReport {
        score_term,
        prior_term,
        reconstruction_term,
        total_nats,
        bpd: total_nats / (d as f64 * std::f64::consts::LN_2),
        mc_std_error,
    })
}

/// Nats to bits-per-dimension with a coordinate-change correction.
///
/// `logdet_correction` is the log-determinant of the Jacobian of the map
/// that carried the data point into the modeled coordinates (for simplex
/// data mapped to the cube, the log-det of the inverse stick-breaking map,
/// i.e. the negated [`crate::geometry::stick_break_logdet`] at the mapped
/// point).
pub fn bpd(report: &ElboReport, dim: usize, logdet_correction: f64) -> Result<f64> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dim must be >= 1".into()));
    }
    Ok((report.total_nats - logdet_correction) / (dim as f64 * std::f64::consts::LN_2))
}

/// Classifier-free composition `(w + 1) s_cond - w s_uncond`.
pub fn compose_cfg(s_cond: &[f64], s_uncond: &[f64], w: f64) -> Result<Vec<f64>> {
    if s_cond.len() != s_uncond.len() {
        return Err(Error::DimensionMismatch { expected: s_cond.len(), got: s_uncond.len() });
    }
    Ok(s_cond.iter().zip(s_uncond).map(|(c, u)| (w + 1.0) * c - w * u).collect())
}

/// Classifier composition `w * grad log q(c|x) + s`.
pub fn compose_classifier(s: &[f64], grad_log_classifier: &[f64], w: f64) -> Result<Vec<f64>> {
    if s.len() != grad_log_classifier.len() {
        return Err(Error::DimensionMismatch { expected: s.len(), got: grad_log_classifier.len() });
    }
    Ok(s.iter().zip(grad_log_classifier).map(|(si, gi)| w * gi + si).collect())
}

/// Exact guided score of a two-class toy at guidance weight `w`: the score
/// of the tilted target `q_t(c|x)^w p_t(x|c)`. Weight 0 is conditional
/// sampling.
pub struct GuidedScore<'a> {
    pub mixture: &'a TwoClassMixture,
    pub kernel: &'a ReflectedKernel,
    pub schedule: &'a NoiseSchedule,
    pub class: usize,
    pub weight: f64,
}

impl ScoreFunction for GuidedScore<'_> {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn evaluate(&self, x: &[f64], t: f64) -> Vec<f64> {
        let result = (|| -> Result<Vec<f64>> {
            let cond =
                self.mixture.conditional(self.class).score_t(self.kernel, self.schedule, x, t)?;
            let glc =
                self.mixture.grad_log_posterior(self.kernel, self.schedule, self.class, x, t)?;
            compose_classifier(&cond, &glc, self.weight)
        })();
        result.unwrap_or_else(|_| vec![f64::NAN; self.mixture.dim()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::ZeroScore;
    use crate::score::toy::{ExactScore, ToyDistribution};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_data_zero_score_elbo_is_zero() {
        // Uniform density is 1, so -log p0 = 0; every term vanishes.
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::likelihood();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let report =
            elbo_pointwise(&kernel, &schedule, &[0.37], &ZeroScore(1), 64, &mut rng).unwrap();
        assert_eq!(report.score_term, 0.0, "zero score against zero target");
        assert!(report.prior_term.abs() < 1e-6, "prior {}", report.prior_term);
        assert!(report.reconstruction_term.abs() < 1e-3, "recon {}", report.reconstruction_term);
        assert!(report.total_nats.abs() < 2e-3, "total {}", report.total_nats);
        assert_relative_eq!(
            report.total_nats,
            report.score_term + report.prior_term + report.reconstruction_term,
            epsilon = 1e-15
        );
    }

    #[test]
    fn n_mc_floor_enforced() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::likelihood();
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        assert!(elbo_pointwise(&kernel, &schedule, &[0.5], &ZeroScore(1), 8, &mut rng).is_err());
    }

    #[test]
    fn elbo_upper_bounds_toy_nll() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::likelihood();
        let toy = ToyDistribution::two_bump_1d();
        let score = ExactScore { toy: &toy, kernel: &kernel, schedule: &schedule };
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let n_points = 200;
        let mut mean_elbo = 0.0;
        let mut mean_nll = 0.0;
        let mut mean_se2 = 0.0;
        for _ in 0..n_points {
            let x = toy.sample_p0(&mut rng);
            let report = elbo_pointwise(&kernel, &schedule, &x, &score, 48, &mut rng).unwrap();
            mean_elbo += report.total_nats;
            mean_se2 += report.mc_std_error * report.mc_std_error;
            mean_nll += -toy.density(&kernel, &x, 0.0).unwrap().ln();
        }
        mean_elbo /= n_points as f64;
        mean_nll /= n_points as f64;
        let se = (mean_se2 / (n_points * n_points) as f64).sqrt();
        assert!(
            mean_elbo >= mean_nll - 3.0 * se,
            "ELBO {mean_elbo} should upper-bound NLL {mean_nll} (se {se})"
        );
    }

    #[test]
    fn bpd_conversions() {
        let report = ElboReport {
            score_term: 0.0,
            prior_term: 0.0,
            reconstruction_term: 0.0,
            total_nats: 0.0,
            bpd: 0.0,
            mc_std_error: 0.0,
        };
        assert_eq!(bpd(&report, 4, 0.0).unwrap(), 0.0);
        let one_bit = ElboReport { total_nats: std::f64::consts::LN_2, ..report };
        assert_relative_eq!(bpd(&one_bit, 1, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(bpd(&report, 0, 0.0).is_err());
    }

    #[test]
    fn cfg_identities() {
        let c = [1.0, -2.0];
        let u = [0.5, 0.5];
        assert_eq!(compose_cfg(&c, &u, 0.0).unwrap(), c.to_vec());
        assert_eq!(compose_cfg(&c, &u, -1.0).unwrap(), u.to_vec());
        assert!(compose_cfg(&c, &u[..1], 1.0).is_err());
        assert_eq!(compose_classifier(&u, &c, 0.0).unwrap(), u.to_vec());
    }

    #[test]
    fn cfg_affine_in_w() {
        let c = [0.3, -1.1, 2.0];
        let u = [1.0, 0.2, -0.4];
        let at = |w: f64| compose_cfg(&c, &u, w).unwrap();
        let (a, b, mid) = (at(0.0), at(2.0), at(1.0));
        for i in 0..3 {
            assert_eq!(mid[i], 0.5 * (a[i] + b[i]), "exact linearity in w");
        }
    }

    #[test]
    fn classifier_equals_cfg_with_exact_bayes_gradient() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let mix = TwoClassMixture::default_1d();
        for &w in &[0.0, 1.0, 4.0] {
            for &x in &[0.2, 0.5, 0.8] {
                let t = 0.3;
                let s_cond = mix.conditional(0).score_t(&kernel, &schedule, &[x], t).unwrap();
                let s_uncond = mix.marginal().score_t(&kernel, &schedule, &[x], t).unwrap();
                let glc = mix.grad_log_posterior(&kernel, &schedule, 0, &[x], t).unwrap();
                let via_cfg = compose_cfg(&s_cond, &s_uncond, w).unwrap();
                let via_classifier = compose_classifier(&s_cond, &glc, w).unwrap();
                assert!(
                    (via_cfg[0] - via_classifier[0]).abs() < 1e-6,
                    "w={w}, x={x}: {} vs {}",
                    via_cfg[0],
                    via_classifier[0]
                );
            }
        }
    }

    #[test]
    fn composed_score_matches_tilted_density_gradient() {
        // Oracle: central finite differences of log [q(c|x)^w p(x|c)].
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let mix = TwoClassMixture::default_1d();
        let h = 1e-6;
        let t = 0.4;
        for &w in &[1.0, 4.0] {
            let guided = GuidedScore { mixture: &mix, kernel: &kernel, schedule: &schedule, class: 1, weight: w };
            for &x in &[0.25, 0.5, 0.75] {
                let s = guided.evaluate(&[x], t)[0];
                let lp = |x: f64| {
                    mix.tilted_density_unnorm(&kernel, &schedule, 1, &[x], t, w).unwrap().ln()
                };
                let fd = (lp(x + h) - lp(x - h)) / (2.0 * h);
                assert!((s - fd).abs() < 1e-4 * (1.0 + s.abs()), "w={w} x={x}: {s} vs {fd}");
            }
        }
    }

    #[test]
    fn composed_normal_component_vanishes_at_boundary() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let mix = TwoClassMixture::default_1d();
        for &w in &[0.0, 1.0, 4.0] {
            let guided = GuidedScore { mixture: &mix, kernel: &kernel, schedule: &schedule, class: 0, weight: w };
            for &x in &[0.0, 1.0] {
                let s = guided.evaluate(&[x], 0.3)[0];
                assert!(s.abs() < 1e-12, "w={w}, boundary {x}: {s}");
            }
        }
    }
}
