//! Closed-form toy targets with exact time-marginal scores.
//!
//! A mixture of reflected kernels is closed under the forward diffusion:
//! perturbing component `(w, c, b)` for time-`t` variance `v` yields the
//! component `(w, c, b + v)` by the Chapman-Kolmogorov identity. Every
//! marginal `p_t` and its score are therefore available in closed form,
//! which is the ground truth all sampler and likelihood tests measure
//! against.

use crate::geometry::fold_finite;
use crate::kernel::ReflectedKernel;
use crate::samplers::ScoreFunction;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// One reflected-kernel bump.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    pub center: Vec<f64>,
    /// Kernel variance of the bump at time zero; zero means a point mass.
    pub base_variance: f64,
}

/// Mixture of reflected kernels on the hypercube.
#[derive(Debug, Clone)]
pub struct ToyDistribution {
    components: Vec<MixtureComponent>,
    dim: usize,
}

impl ToyDistribution {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("toy mixture components"));
        }
        let dim = components[0].center.len();
        let mut total = 0.0;
        for c in &components {
            if c.center.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.center.len() });
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidConfig(format!("component weight {}", c.weight)));
            }
            if !(c.base_variance >= 0.0 && c.base_variance.is_finite()) {
                return Err(Error::InvalidConfig(format!("base variance {}", c.base_variance)));
            }
            if c.center.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::OutOfDomain(format!("center {:?}", c.center)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { components, dim })
    }

    /// The standard 1D test target: bumps at 0.25 and 0.75 with
    /// standard deviation 0.05.
    pub fn two_bump_1d() -> Self {
        Self::new(vec![
            MixtureComponent { weight: 0.5, center: vec![0.25], base_variance: 0.0025 },
            MixtureComponent { weight: 0.5, center: vec![0.75], base_variance: 0.0025 },
        ])
        .unwrap()
    }

    /// 2D variant with off-diagonal bumps.
    pub fn two_bump_2d() -> Self {
        Self::new(vec![
            MixtureComponent { weight: 0.5, center: vec![0.25, 0.7], base_variance: 0.0025 },
            MixtureComponent { weight: 0.5, center: vec![0.75, 0.3], base_variance: 0.0025 },
        ])
        .unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Per-component log densities at total variance `base + v_extra`.
    fn component_log_densities(
        &self,
        kernel: &ReflectedKernel,
        x: &[f64],
        v_extra: f64,
    ) -> Result<Vec<f64>> {
        self.components
            .iter()
            .map(|c| {
                let v = c.base_variance + v_extra;
                if v <= 0.0 {
                    return Err(Error::InvalidVariance(v));
                }
                Ok(c.weight.ln() + kernel.log_transition_density_nd(&c.center, x, v)?)
            })
            .collect()
    }

    /// Mixture density with every component widened by `v_extra`.
    pub fn density(&self, kernel: &ReflectedKernel, x: &[f64], v_extra: f64) -> Result<f64> {
        let logs = self.component_log_densities(kernel, x, v_extra)?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::MixtureUnderflow { point: x.to_vec(), t: f64::NAN });
        }
        Ok(logs.iter().map(|l| (l - max).exp()).sum::<f64>() * max.exp())
    }

    /// Time-`t` marginal density under the schedule.
    pub fn density_t(
        &self,
        kernel: &ReflectedKernel,
        schedule: &NoiseSchedule,
        x: &[f64],
        t: f64,
    ) -> Result<f64> {
        self.density(kernel, x, schedule.accumulated_variance(0.0, t)?)
    }

    /// Exact score of the time-`t` marginal.
    ///
    /// Components are combined through a softmax of their log densities, so
    /// the result stays finite wherever at least one component does. This
    /// sits in every sampler's inner loop, so the responsibility weights
    /// are computed in place without intermediate buffers.
    pub fn score_t(
        &self,
        kernel: &ReflectedKernel,
        schedule: &NoiseSchedule,
        x: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        let v_extra = schedule.accumulated_variance(0.0, t)?;
        let mut logs = self.component_log_densities(kernel, x, v_extra)?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::MixtureUnderflow { point: x.to_vec(), t });
        }
        let mut total = 0.0;
        for l in &mut logs {
            *l = (*l - max).exp();
            total += *l;
        }
        let mut score = vec![0.0; self.dim];
        for (c, reps) in self.components.iter().zip(&logs) {
            let alpha = reps / total;
            if alpha == 0.0 {
                continue;
            }
            let v = c.base_variance + v_extra;
            for (j, sj) in score.iter_mut().enumerate() {
                *sj += alpha * kernel.transition_score_1d(c.center[j], x[j], v)?;
            }
        }
        Ok(score)
    }

    /// Exact draw from the time-zero law.
    pub fn sample_p0<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let sd = chosen.base_variance.sqrt();
        chosen
            .center
            .iter()
            .map(|&c| {
                if sd == 0.0 {
                    c
                } else {
                    fold_finite(c + sd * rng.sample::<f64, _>(StandardNormal))
                }
            })
            .collect()
    }
}

/// [`ScoreFunction`] view of a toy's exact marginal score.
///
/// Evaluation failures surface as NaN outputs, which samplers convert into
/// a non-finite-score abort carrying the step index and point.
#[derive(Clone, Copy)]
pub struct ExactScore<'a> {
    pub toy: &'a ToyDistribution,
    pub kernel: &'a ReflectedKernel,
    pub schedule: &'a NoiseSchedule,
}

impl ScoreFunction for ExactScore<'_> {
    fn dim(&self) -> usize {
        self.toy.dim()
    }

    fn evaluate(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.toy
            .score_t(self.kernel, self.schedule, x, t)
            .unwrap_or_else(|_| vec![f64::NAN; self.toy.dim()])
    }
}

/// Two labelled toy distributions with class priors: the guidance test bed.
#[derive(Debug, Clone)]
pub struct TwoClassMixture {
    pub priors: [f64; 2],
    pub classes: [ToyDistribution; 2],
    /// Flattened unconditional mixture `sum_c prior_c p(.|c)`.
    marginal: ToyDistribution,
}

impl TwoClassMixture {
    pub fn new(priors: [f64; 2], classes: [ToyDistribution; 2]) -> Result<Self> {
        if (priors[0] + priors[1] - 1.0).abs() > 1e-9 || priors.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidConfig(format!("class priors {priors:?}")));
        }
        if classes[0].dim() != classes[1].dim() {
            return Err(Error::DimensionMismatch {
                expected: classes[0].dim(),
                got: classes[1].dim(),
            });
        }
        let mut flat = Vec::new();
        for (prior, class) in priors.iter().zip(&classes) {
            for c in class.components() {
                flat.push(MixtureComponent {
                    weight: prior * c.weight,
                    center: c.center.clone(),
                    base_variance: c.base_variance,
                });
            }
        }
        let marginal = ToyDistribution::new(flat)?;
        Ok(Self { priors, classes, marginal })
    }

    /// A 1D default: class 0 peaks at 0.3, class 1 at 0.7, equal priors.
    pub fn default_1d() -> Self {
        let class0 = ToyDistribution::new(vec![MixtureComponent {
            weight: 1.0,
            center: vec![0.3],
            base_variance: 0.0036,
        }])
        .unwrap();
        let class1 = ToyDistribution::new(vec![MixtureComponent {
            weight: 1.0,
            center: vec![0.7],
            base_variance: 0.0036,
        }])
        .unwrap();
        Self::new([0.5, 0.5], [class0, class1]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.marginal.dim()
    }

    pub fn conditional(&self, class: usize) -> &ToyDistribution {
        &self.classes[class]
    }

    pub fn marginal(&self) -> &ToyDistribution {
        &self.marginal
    }

    /// Bayes posterior `q_t(c | x)`.
    pub fn posterior(
        &self,
        kernel: &ReflectedKernel,
        schedule: &NoiseSchedule,
        class: usize,
        x: &[f64],
        t: f64,
    ) -> Result<f64> {
        let num = self.priors[class] * self.classes[class].density_t(kernel, schedule, x, t)?;
        let den = self.marginal.density_t(kernel, schedule, x, t)?;
        Ok(num / den)
    }

    /// `grad_x log q_t(c | x)`, exactly `s_cond - s_uncond`.
    pub fn grad_log_posterior(
        &self,
        kernel: &ReflectedKernel,
        schedule: &NoiseSchedule,
        class: usize,
        x: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        let cond = self.classes[class].score_t(kernel, schedule, x, t)?;
        let uncond = self.marginal.score_t(kernel, schedule, x, t)?;
        Ok(cond.iter().zip(&uncond).map(|(c, u)| c - u).collect())
    }

    /// Unnormalized guided target at weight `w`: the conditional tilted by
    /// the posterior, `q_t(c|x)^w p_t(x|c)`. Weight 0 is the conditional.
    pub fn tilted_density_unnorm(
        &self,
        kernel: &ReflectedKernel,
        schedule: &NoiseSchedule,
        class: usize,
        x: &[f64],
        t: f64,
        w: f64,
    ) -> Result<f64> {
        let post = self.posterior(kernel, schedule, class, x, t)?;
        let cond = self.classes[class].density_t(kernel, schedule, x, t)?;
        Ok(post.powf(w) * cond)
    }
}
