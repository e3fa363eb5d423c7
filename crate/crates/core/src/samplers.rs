//! Forward simulation and reverse-time generators.
//!
//! The reverse of the reflected variance-exploding SDE is
//! `dx = -gbar(t)^2 s(x, t) dt + gbar(t) dB + dL`, integrated from `t = 1`
//! (uniform prior) down to the time floor. This module provides:
//!
//! * exact forward perturbation (no discretization needed: the transition
//!   kernel is sampled directly),
//! * reflected and projected Euler-Maruyama reverse steppers,
//! * a reflected-Langevin corrector and predictor-corrector composition,
//! * the probability flow ODE (fixed-step RK4 or adaptive Dormand-Prince),
//! * the annealed SDE family interpolating between the two, and
//! * static/dynamic thresholding steppers, which place the projection
//!   before the noise instead of after it.
//!
//! All stochastic entry points take a caller-owned RNG; batch helpers
//! derive one independent counter stream per chain, so results do not
//! depend on thread count.

use crate::geometry::{self, Domain, Point};
use crate::kernel::ReflectedKernel;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Corrector step size is capped here so a vanishing score norm cannot
/// produce an unbounded move.
pub const CORRECTOR_EPS_CAP: f64 = 1.0;

/// Estimate of the score `grad_x log p_t(x)`, exact or learned.
///
/// Implementations must be safe for concurrent read-only evaluation.
pub trait ScoreFunction: Sync {
    /// Output length; must equal the domain dimension.
    fn dim(&self) -> usize;

    /// Score estimate at `(x, t)`.
    fn evaluate(&self, x: &[f64], t: f64) -> Vec<f64>;
}

/// The identically-zero score: the uniform law's exact score, useful as a
/// stationarity baseline.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore(pub usize);

impl ScoreFunction for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }
    fn evaluate(&self, _x: &[f64], _t: f64) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

/// Adapter turning a closure into a [`ScoreFunction`].
pub struct FnScore<F: Fn(&[f64], f64) -> Vec<f64> + Sync> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], f64) -> Vec<f64> + Sync> ScoreFunction for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &[f64], t: f64) -> Vec<f64> {
        (self.f)(x, t)
    }
}

/// Reverse-time integration method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerMethod {
    ReflectEm,
    ProjectEm,
    PredictorCorrector,
    ProbabilityFlowOde,
    /// Reflected SDE with noise scaled by `gbar_scale`; 1 recovers
    /// reflect-EM, 0 recovers the ODE drift with EM stepping.
    AnnealedSde { gbar_scale: f64 },
    ThresholdStatic,
    ThresholdDynamic { percentile: f64 },
}

/// Knobs shared by every sampler run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    pub steps: usize,
    /// Corrector signal-to-noise ratio; only predictor-corrector reads it.
    pub snr: f64,
    pub seed: u64,
    pub ode: OdeMode,
}

impl SamplerConfig {
    pub fn new(method: SamplerMethod, steps: usize, seed: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if let SamplerMethod::ThresholdDynamic { percentile } = method {
            if !(percentile > 0.0 && percentile <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "dynamic thresholding percentile {percentile} outside (0, 1]"
                )));
            }
        }
        if let SamplerMethod::AnnealedSde { gbar_scale } = method {
            if !(gbar_scale >= 0.0 && gbar_scale.is_finite()) {
                return Err(Error::InvalidConfig(format!("gbar_scale {gbar_scale} must be >= 0")));
            }
        }
        Ok(Self { method, steps, snr: 0.03, seed, ode: OdeMode::FixedRk4 })
    }

    pub fn with_snr(mut self, snr: f64) -> Result<Self> {
        if !(snr >= 0.0 && snr.is_finite()) {
            return Err(Error::InvalidConfig(format!("snr {snr} must be >= 0")));
        }
        self.snr = snr;
        Ok(self)
    }

    pub fn with_ode_mode(mut self, ode: OdeMode) -> Self {
        self.ode = ode;
        self
    }
}

/// Probability-flow integrator selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeMode {
    /// Classic fourth-order Runge-Kutta on the uniform time grid.
    FixedRk4,
    /// Dormand-Prince 5(4) embedded pair with absolute/relative tolerances.
    Adaptive { abs_tol: f64, rel_tol: f64 },
}

/// Everything a sampler run needs besides the score: kernel configuration,
/// noise schedule, and target domain.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    pub kernel: &'a ReflectedKernel,
    pub schedule: &'a NoiseSchedule,
    pub domain: Domain,
}

/// One reflected-Langevin corrector move.
#[derive(Debug, Clone)]
pub struct CorrectorStep {
    pub point: Point,
    pub eps: f64,
    /// Step size hit [`CORRECTOR_EPS_CAP`] (vanishing score norm).
    pub eps_capped: bool,
}

/// Probability-flow solution with its path and boundary diagnostics.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub point: Point,
    /// `(t, x)` at every accepted step, from `t = 1` down to the floor.
    pub trajectory: Vec<(f64, Point)>,
    /// Number of accepted steps that left the domain and were projected
    /// back; zero whenever the score satisfies the Neumann condition.
    pub boundary_projections: usize,
    /// Score evaluations performed.
    pub evaluations: usize,
}

#[derive(Clone, Copy)]
enum BoundaryOp {
    Fold,
    Project,
}

impl<'a> Sampler<'a> {
    pub fn new(kernel: &'a ReflectedKernel, schedule: &'a NoiseSchedule, domain: Domain) -> Self {
        Self { kernel, schedule, domain }
    }

    fn check_score(&self, s: &[f64], step: usize, t: f64, x: &[f64]) -> Result<()> {
        if s.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch { expected: self.domain.dim(), got: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { step, t, point: x.to_vec() });
        }
        Ok(())
    }

    /// Exact draw from `p_t(. | x0)` using the transition kernel; the
    /// simplex routes through the stick-breaking map.
    pub fn forward_sample<R: Rng + ?Sized>(&self, x0: &[f64], t: f64, rng: &mut R) -> Result<Point> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidTime { t, lo: 0.0, hi: 1.0 });
        }
        let v = self.schedule.accumulated_variance(0.0, t)?;
        match self.domain {
            Domain::ProjectedSimplex(_) => {
                let cube = geometry::stick_break_inv(x0)?;
                let moved = self.kernel.sample_transition_nd(&cube, v, rng)?;
                geometry::stick_break(&moved)
            }
            _ => self.kernel.sample_transition_nd(x0, v, rng),
        }
    }

    /// Shared reverse loop: `x <- O(x + c_drift s dt + c_noise sqrt(dt) z)`
    /// stepping `t` from 1 down to the schedule floor. `lambda` scales the
    /// injected noise; drift `(1 + lambda^2)/2 * gbar^2` keeps the time
    /// marginals fixed across lambda.
    fn reverse_loop<R: Rng + ?Sized>(
        &self,
        score: &dyn ScoreFunction,
        steps: usize,
        lambda: f64,
        op: BoundaryOp,
        rng: &mut R,
    ) -> Result<Point> {
        let d = self.domain.dim();
        let t_min = self.schedule.t_min;
        let dt = (1.0 - t_min) / steps as f64;
        let mut x = geometry::uniform_sample(&self.domain, rng);
        for i in 0..steps {
            let t = 1.0 - i as f64 * dt;
            x = self.reverse_step(score, &x, i, t, dt, lambda, op, rng)?;
            debug_assert_eq!(x.len(), d);
        }
        Ok(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn reverse_step<R: Rng + ?Sized>(
        &self,
        score: &dyn ScoreFunction,
        x: &[f64],
        step: usize,
        t: f64,
        dt: f64,
        lambda: f64,
        op: BoundaryOp,
        rng: &mut R,
    ) -> Result<Point> {
        let s = score.evaluate(x, t);
        self.check_score(&s, step, t, x)?;
        let g = self.schedule.gbar(t);
        let drift_coeff = (1.0 + lambda * lambda) / 2.0 * (g * g) * dt;
        let noise_coeff = lambda * g * dt.sqrt();
        let proposed: Vec<f64> = x
            .iter()
            .zip(&s)
            .map(|(&xi, &si)| {
                let z: f64 = rng.sample(StandardNormal);
                xi + drift_coeff * si + noise_coeff * z
            })
            .collect();
        match op {
            BoundaryOp::Fold => geometry::fold_point(&proposed, &self.domain),
            BoundaryOp::Project => geometry::project(&proposed, &self.domain),
        }
    }

    /// Reverse SDE with the reflection discretization.
    pub fn reverse_em_reflect<R: Rng + ?Sized>(
        &self,
        score: &dyn ScoreFunction,
        config: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Point> {
        self.reverse_loop(score, config.steps, 1.0, BoundaryOp::Fold, rng)
    }

    /// Reverse SDE with the projection discretization; converges to the same
    /// law as reflection as the step size shrinks.
    pub fn reverse_em_project<R: Rng + ?Sized>(
        &self,
        score: &dyn ScoreFunction,
        config: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Point> {
        self.reverse_loop(score, config.steps, 1.0, BoundaryOp::Project, rng)
    }

    /// Reflected SDE with noise rescaled by `gbar_scale`; marginals agree
    /// with reflect-EM for every scale, and scale 1 reproduces its
    /// trajectory draw-for-draw.
    pub fn annealed_sde_sample<R: Rng + ?Sized>(
        &self,
        score: &dyn ScoreFunction,
        config: &SamplerConfig,
        gbar_scale: f64,
        rng: &mut R,
    ) -> Result<Point> {
        if !(gbar_scale >= 0.0 && gbar_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("gbar_scale {gbar_scale} must be >= 0")));
        }
        self.reverse_loop(score, config.steps, gbar_scale, BoundaryOp::Fold, rng)
    }

    /// One reflected-Langevin refinement at noise level `t` with step size
    /// `eps = 2 (snr ||z||_typ / r_t)^2 = 2 snr^2 sigma_t^2`, capped at
    /// [`CORRECTOR_EPS_CAP`]; `r_t = sqrt(d) / sigma_t` is the
    /// ensemble-typical score norm at noise level `t` and `||z||_typ =
    /// sqrt(d)` the typical noise norm.
    ///
    /// Batched correctors in prior work divide by batch-mean norms, which
    /// at scale equal these references and, crucially, depend on neither
    /// the chain's own state nor its own noise draw. Reusing per-chain
    /// realized norms would bias the stationary law twice over: a
    /// state-dependent step size is a state-dependent diffusion
    /// coefficient, and coupling the step size to the injected noise draw
    /// heats the chain by E[z^4]/E[z^2]^2.
    pub fn langevin_corrector<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        t: f64,
        score: &dyn ScoreFunction,
        snr: f64,
        rng: &mut R,
    ) -> Result<CorrectorStep> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidTime { t, lo: 0.0, hi: 1.0 });
        }
        let s = score.evaluate(x, t);
        self.check_score(&s, 0, t, x)?;
        let z: Vec<f64> = (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sigma_t = self.schedule.sigma(t)?;
        let (eps, eps_capped) = {
            let raw = 2.0 * (snr * sigma_t).powi(2);
            (raw.min(CORRECTOR_EPS_CAP), raw > CORRECTOR_EPS_CAP || s_norm == 0.0)
        };
        let proposed: Vec<f64> = x
            .iter()
            .zip(s.iter().zip(&z))
            .map(|(&xi, (&si, &zi))| xi + 0.5 * eps * si + (2.0 * eps).sqrt() * zi)
            .collect();
        let point = geometry::fold_point(&proposed, &self.domain)?;
        Ok(CorrectorStep { point, eps, eps_capped })
    }

    /// Predictor-corrector: one reflect-EM predictor and one Langevin
    /// corrector per time tick. At `snr = 0` the corrector is skipped
    /// entirely (it would be a no-op) so the trajectory and RNG stream
    /// coincide with plain reflect-EM at the same seed.
    pub fn pc_sample<R: Rng + ?Sized>(
        &self,
        score: &dyn ScoreFunction,
        config: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Point> {
        let t_min = self.schedule.t_min;
        let dt = (1.0 - t_min) / config.steps as f64;
        let mut x = geometry::uniform_sample(&self.domain, rng);
        for i in 0..config.steps {
            let t = 1.0 - i as f64 * dt;
            x = self.reverse_step(score, &x, i, t, dt, 1.0, BoundaryOp::Fold, rng)?;
            if config.snr > 0.0 {
                x = self.langevin_corrector(&x, t - dt, score, config.snr, rng)?.point;
            }
        }
        Ok(x)
    }

    /// Probability-flow ODE `dx = -(gbar^2 / 2) s dt` from `t = 1` to the
    /// floor, started at `x1`.
    ///
    /// With an exact score the Neumann condition keeps the trajectory inside
    /// the domain; with a learned score any exit is projected back and
    /// counted in the solution diagnostics.
    pub fn ode_solve(
        &self,
        score: &dyn ScoreFunction,
        x1: &[f64],
        config: &SamplerConfig,
    ) -> Result<OdeSolution> {
        self.domain.check_contains(x1)?;
        let t_min = self.schedule.t_min;
        // Velocity of the reverse-time flow in the forward variable
        // tau = 1 - t: dx/dtau = +(gbar(t)^2 / 2) s(x, t).
        let mut evaluations = 0usize;
        let mut eval = |x: &[f64], t: f64| -> Result<Vec<f64>> {
            let x_in = geometry::project(x, &self.domain)?;
            let s = score.evaluate(&x_in, t);
            evaluations += 1;
            self.check_score(&s, evaluations, t, &x_in)?;
            let g = self.schedule.gbar(t);
            Ok(s.iter().map(|&si| 0.5 * g * g * si).collect())
        };

        let mut x = x1.to_vec();
        let mut trajectory = vec![(1.0, x.clone())];
        let mut boundary_projections = 0usize;

        let settle = |x: Vec<f64>| -> Result<(Point, bool)> {
            if self.domain.contains(&x, 0.0) {
                Ok((x, false))
            } else {
                Ok((geometry::project(&x, &self.domain)?, true))
            }
        };

        match config.ode {
            OdeMode::FixedRk4 => {
                let h = (1.0 - t_min) / config.steps as f64;
                for i in 0..config.steps {
                    let t = 1.0 - i as f64 * h;
                    let k1 = eval(&x, t)?;
                    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
                    let k2 = eval(&x2, t - 0.5 * h)?;
                    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
                    let k3 = eval(&x3, t - 0.5 * h)?;
                    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
                    let k4 = eval(&x4, t - h)?;
                    let next: Vec<f64> = (0..x.len())
                        .map(|j| x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                        .collect();
                    let (next, projected) = settle(next)?;
                    if projected {
                        boundary_projections += 1;
                    }
                    x = next;
                    trajectory.push((t - h, x.clone()));
                }
            }
            OdeMode::Adaptive { abs_tol, rel_tol } => {
                let (mut tau, tau_end) = (0.0, 1.0 - t_min);
                let mut h = (tau_end / config.steps as f64).min(tau_end);
                let h_min = 1e-12;
                while tau < tau_end {
                    h = h.min(tau_end - tau);
                    if h < h_min {
                        return Err(Error::StepSizeUnderflow { t: 1.0 - tau, h });
                    }
                    let (next, err_norm) =
                        dormand_prince_step(&mut eval, &x, tau, h, abs_tol, rel_tol)?;
                    if err_norm <= 1.0 {
                        tau += h;
                        let (next, projected) = settle(next)?;
                        if projected {
                            boundary_projections += 1;
                        }
                        x = next;
                        trajectory.push((1.0 - tau, x.clone()));
                    }
                    // Standard fifth-order PI controller with safety factor.
                    let scale = if err_norm > 0.0 {
                        (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                    } else {
                        5.0
                    };
                    h *= scale;
                }
            }
        }

        Ok(OdeSolution { point: x, trajectory, boundary_projections, evaluations })
    }

    /// One static-thresholding step: projection applied to state plus drift,
    /// noise added afterwards (outside the operator).
    ///
    /// The incoming iterate carries free noise and may sit outside the
    /// domain; the score (defined on the domain only) is evaluated at its
    /// projection, the constant-along-the-normal Lipschitz extension.
    pub fn threshold_static_step<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        t: f64,
        dt: f64,
        score: &dyn ScoreFunction,
        rng: &mut R,
    ) -> Result<Point> {
        match self.domain {
            Domain::UnitInterval | Domain::UnitHypercube(_) => {}
            _ => return Err(Error::UnsupportedDomain("thresholding needs the hypercube")),
        }
        let x_eval = geometry::project(x, &self.domain)?;
        let s = score.evaluate(&x_eval, t);
        self.check_score(&s, 0, t, &x_eval)?;
        let g = self.schedule.gbar(t);
        let drifted: Vec<f64> = x.iter().zip(&s).map(|(&xi, &si)| xi + g * g * si * dt).collect();
        let clipped = geometry::project(&drifted, &self.domain)?;
        Ok(clipped
            .iter()
            .map(|&xi| xi + g * dt.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    /// One dynamic-thresholding step: in centered coordinates `u = 2x - 1`,
    /// rescale by the `percentile`-th percentile of |u| (floored at 1),
    /// clamp to `[-1, 1]`, map back, then add noise.
    pub fn threshold_dynamic_step<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        t: f64,
        dt: f64,
        percentile: f64,
        score: &dyn ScoreFunction,
        rng: &mut R,
    ) -> Result<Point> {
        match self.domain {
            Domain::UnitInterval | Domain::UnitHypercube(_) => {}
            _ => return Err(Error::UnsupportedDomain("thresholding needs the hypercube")),
        }
        if !(percentile > 0.0 && percentile <= 1.0) {
            return Err(Error::InvalidConfig(format!("percentile {percentile} outside (0, 1]")));
        }
        let x_eval = geometry::project(x, &self.domain)?;
        let s = score.evaluate(&x_eval, t);
        self.check_score(&s, 0, t, &x_eval)?;
        let g = self.schedule.gbar(t);
        let centered: Vec<f64> =
            x.iter().zip(&s).map(|(&xi, &si)| 2.0 * (xi + g * g * si * dt) - 1.0).collect();
        let mut magnitudes: Vec<f64> = centered.iter().map(|u| u.abs()).collect();
        magnitudes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pct = linear_percentile(&magnitudes, percentile);
        let scale = pct.max(1.0);
        Ok(centered
            .iter()
            .map(|&u| {
                let clamped = (u / scale).clamp(-1.0, 1.0);
                (clamped + 1.0) / 2.0 + g * dt.sqrt() * rng.sample::<f64, _>(StandardNormal)
            })
            .collect())
    }

    /// Full reverse run built from thresholding steps. The final iterate has
    /// free noise on top, so it is projected once at the end to keep sampler
    /// outputs inside the domain.
    pub fn threshold_sample<R: Rng + ?Sized>(
        &self,
        score: &dyn ScoreFunction,
        config: &SamplerConfig,
        dynamic_percentile: Option<f64>,
        rng: &mut R,
    ) -> Result<Point> {
        let t_min = self.schedule.t_min;
        let dt = (1.0 - t_min) / config.steps as f64;
        let mut x = geometry::uniform_sample(&self.domain, rng);
        for i in 0..config.steps {
            let t = 1.0 - i as f64 * dt;
            x = match dynamic_percentile {
                None => self.threshold_static_step(&x, t, dt, score, rng)?,
                Some(p) => self.threshold_dynamic_step(&x, t, dt, p, score, rng)?,
            };
        }
        geometry::project(&x, &self.domain)
    }

    /// Run one chain of the configured method.
    pub fn sample_one<R: Rng + ?Sized>(
        &self,
        score: &dyn ScoreFunction,
        config: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Point> {
        match config.method {
            SamplerMethod::ReflectEm => self.reverse_em_reflect(score, config, rng),
            SamplerMethod::ProjectEm => self.reverse_em_project(score, config, rng),
            SamplerMethod::PredictorCorrector => self.pc_sample(score, config, rng),
            SamplerMethod::ProbabilityFlowOde => {
                let x1 = geometry::uniform_sample(&self.domain, rng);
                Ok(self.ode_solve(score, &x1, config)?.point)
            }
            SamplerMethod::AnnealedSde { gbar_scale } => {
                self.annealed_sde_sample(score, config, gbar_scale, rng)
            }
            SamplerMethod::ThresholdStatic => self.threshold_sample(score, config, None, rng),
            SamplerMethod::ThresholdDynamic { percentile } => {
                self.threshold_sample(score, config, Some(percentile), rng)
            }
        }
    }

    /// `n` independent chains, parallelized per chain. Chain `i` draws from
    /// ChaCha8 stream `i` of `config.seed`, so output is a pure function of
    /// the configuration regardless of thread count.
    pub fn sample_batch(
        &self,
        score: &dyn ScoreFunction,
        config: &SamplerConfig,
        n: usize,
    ) -> Result<Vec<Point>> {
        (0..n)
            .into_par_iter()
            .map(|chain| {
                let mut rng = chain_rng(config.seed, chain as u64);
                self.sample_one(score, config, &mut rng)
            })
            .collect()
    }
}

/// Per-chain deterministic RNG: seed selects the key, chain the stream.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Percentile by linear interpolation between closest ranks of sorted data;
/// `p = 1` is the maximum.
fn linear_percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// One Dormand-Prince 5(4) trial step; returns the fifth-order proposal and
/// the scaled error norm (<= 1 accepts).
fn dormand_prince_step<E: FnMut(&[f64], f64) -> Result<Vec<f64>>>(
    eval: &mut E,
    x: &[f64],
    tau: f64,
    h: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<(Vec<f64>, f64)> {
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] =
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let d = x.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    k.push(eval(x, 1.0 - tau)?);
    for s in 0..6 {
        let mut stage = x.to_vec();
        for (j, kj) in k.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                for (xi, ki) in stage.iter_mut().zip(kj) {
                    *xi += h * a * ki;
                }
            }
        }
        k.push(eval(&stage, 1.0 - (tau + C[s] * h))?);
    }
    let mut x5 = x.to_vec();
    let mut err = vec![0.0; d];
    for (j, kj) in k.iter().enumerate() {
        for i in 0..d {
            x5[i] += h * B5[j] * kj[i];
            err[i] += h * (B5[j] - B4[j]) * kj[i];
        }
    }
    let mut norm = 0.0;
    for i in 0..d {
        let scale = abs_tol + rel_tol * x[i].abs().max(x5[i].abs());
        norm += (err[i] / scale).powi(2);
    }
    Ok((x5, (norm / d as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ReflectedKernel;
    use crate::schedule::NoiseSchedule;

    fn ctx<'a>(
        kernel: &'a ReflectedKernel,
        schedule: &'a NoiseSchedule,
        dim: usize,
    ) -> Sampler<'a> {
        Sampler::new(kernel, schedule, if dim == 1 { Domain::UnitInterval } else { Domain::UnitHypercube(dim) })
    }

    #[test]
    fn zero_score_reflect_em_preserves_uniform() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 1);
        let config = SamplerConfig::new(SamplerMethod::ReflectEm, 64, 31).unwrap();
        let pts = s.sample_batch(&ZeroScore(1), &config, 100_000).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let ks = crate::eval::ks_statistic_1d(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn zero_score_project_em_preserves_uniform() {
        // Projection (unlike folding) only preserves the uniform law in the
        // small-step limit: clamping parks mass on the boundary at a rate
        // of order sqrt(dt). 2048 steps brings the bias under the bar.
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 1);
        let config = SamplerConfig::new(SamplerMethod::ProjectEm, 2048, 32).unwrap();
        let pts = s.sample_batch(&ZeroScore(1), &config, 100_000).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let ks = crate::eval::ks_statistic_1d(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn single_step_smoke() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 2);
        for method in [SamplerMethod::ReflectEm, SamplerMethod::ProjectEm] {
            let config = SamplerConfig::new(method, 1, 33).unwrap();
            let mut rng = chain_rng(33, 0);
            let p = s.sample_one(&ZeroScore(2), &config, &mut rng).unwrap();
            assert!(s.domain.contains(&p, 0.0));
        }
    }

    #[test]
    fn non_finite_score_aborts_with_diagnostics() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 1);
        let bad = FnScore { dim: 1, f: |_: &[f64], _: f64| vec![f64::NAN] };
        let config = SamplerConfig::new(SamplerMethod::ReflectEm, 10, 34).unwrap();
        let mut rng = chain_rng(34, 0);
        match s.reverse_em_reflect(&bad, &config, &mut rng) {
            Err(Error::NonFiniteScore { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected NonFiniteScore, got {other:?}"),
        }
    }

    #[test]
    fn corrector_vanishes_with_snr() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 2);
        // Magnitude well above the sqrt(d)/sigma_t norm floor at t = 0.5.
        let score = FnScore { dim: 2, f: |_: &[f64], _: f64| vec![50.0, -20.0] };
        let x = vec![0.4, 0.6];
        for &snr in &[1e-3, 1e-5, 1e-8] {
            let mut rng = chain_rng(35, 0);
            let step = s.langevin_corrector(&x, 0.5, &score, snr, &mut rng).unwrap();
            let dist: f64 =
                x.iter().zip(&step.point).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dist < 1e2 * snr, "snr {snr} moved {dist}");
            assert!(!step.eps_capped);
        }
    }

    #[test]
    fn corrector_caps_eps_on_zero_score() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 1);
        let mut rng = chain_rng(36, 0);
        let step = s.langevin_corrector(&[0.5], 1.0, &ZeroScore(1), 0.03, &mut rng).unwrap();
        assert!(step.eps_capped, "zero score norm must report the floored branch");
        assert!(step.eps <= CORRECTOR_EPS_CAP && step.eps > 0.0);

        // Repeated capped correction with the uniform law's exact score
        // keeps the law uniform.
        let mut xs = Vec::with_capacity(20_000);
        for chain in 0..20_000u64 {
            let mut rng = chain_rng(37, chain);
            let mut x = geometry::uniform_sample(&Domain::UnitInterval, &mut rng);
            for _ in 0..20 {
                x = s.langevin_corrector(&x, 1.0, &ZeroScore(1), 0.03, &mut rng).unwrap().point;
            }
            xs.push(x[0]);
        }
        let ks = crate::eval::ks_statistic_1d(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ks < 0.015, "KS {ks}");
    }

    #[test]
    fn pc_with_zero_snr_equals_reflect_em_bitwise() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 2);
        let score = FnScore { dim: 2, f: |x: &[f64], _: f64| vec![0.5 - x[0], 0.5 - x[1]] };
        let config = SamplerConfig::new(SamplerMethod::PredictorCorrector, 200, 38)
            .unwrap()
            .with_snr(0.0)
            .unwrap();
        let mut rng_a = chain_rng(38, 0);
        let a = s.pc_sample(&score, &config, &mut rng_a).unwrap();
        let mut rng_b = chain_rng(38, 0);
        let b = s.reverse_em_reflect(&score, &config, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn annealed_scale_one_equals_reflect_em_bitwise() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 2);
        let score = FnScore { dim: 2, f: |x: &[f64], _: f64| vec![0.3 - x[0], 0.6 - x[1]] };
        let config = SamplerConfig::new(SamplerMethod::ReflectEm, 150, 39).unwrap();
        let mut rng_a = chain_rng(39, 0);
        let a = s.annealed_sde_sample(&score, &config, 1.0, &mut rng_a).unwrap();
        let mut rng_b = chain_rng(39, 0);
        let b = s.reverse_em_reflect(&score, &config, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ode_zero_score_is_constant() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 2);
        let config = SamplerConfig::new(SamplerMethod::ProbabilityFlowOde, 50, 40).unwrap();
        let sol = s.ode_solve(&ZeroScore(2), &[0.3, 0.8], &config).unwrap();
        assert_eq!(sol.point, vec![0.3, 0.8]);
        assert_eq!(sol.boundary_projections, 0);
        assert!(sol.trajectory.iter().all(|(_, p)| p == &vec![0.3, 0.8]));
    }

    #[test]
    fn ode_adaptive_matches_fixed_on_smooth_field() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 1);
        let score = FnScore { dim: 1, f: |x: &[f64], t: f64| vec![(0.5 - x[0]) / (0.1 + t)] };
        let fixed = SamplerConfig::new(SamplerMethod::ProbabilityFlowOde, 4000, 41).unwrap();
        let adapt = fixed.with_ode_mode(OdeMode::Adaptive { abs_tol: 1e-8, rel_tol: 1e-8 });
        let a = s.ode_solve(&score, &[0.9], &fixed).unwrap();
        let b = s.ode_solve(&score, &[0.9], &adapt).unwrap();
        assert!((a.point[0] - b.point[0]).abs() < 1e-6, "{} vs {}", a.point[0], b.point[0]);
        assert!(b.evaluations < a.evaluations, "adaptive should be cheaper on a smooth field");
    }

    #[test]
    fn threshold_dynamic_p1_equals_static_when_inside() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = Sampler::new(&kernel, &schedule, Domain::UnitHypercube(4));
        // Inward drift keeps the pre-noise iterate inside the cube, so the
        // percentile normalizer is exactly 1.
        let score = FnScore {
            dim: 4,
            f: |x: &[f64], _: f64| x.iter().map(|&xi| (0.5 - xi) * 0.1).collect(),
        };
        let x = vec![0.2, 0.4, 0.6, 0.8];
        let mut rng_a = chain_rng(42, 0);
        let a = s.threshold_static_step(&x, 0.5, 1e-3, &score, &mut rng_a).unwrap();
        let mut rng_b = chain_rng(42, 0);
        let b = s.threshold_dynamic_step(&x, 0.5, 1e-3, 1.0, &score, &mut rng_b).unwrap();
        for (ai, bi) in a.iter().zip(&b) {
            assert!((ai - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn threshold_interior_identity_before_noise() {
        // With tiny drift and dt the operator leaves interior points alone:
        // subtracting the noise recovers the drifted point exactly.
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = Sampler::new(&kernel, &schedule, Domain::UnitHypercube(2));
        let score = FnScore { dim: 2, f: |_: &[f64], _: f64| vec![1e-6, -1e-6] };
        let x = vec![0.41, 0.59];
        let (t, dt) = (0.5, 1e-6);
        let g = schedule.gbar(t);
        let mut rng = chain_rng(43, 0);
        let out = s.threshold_static_step(&x, t, dt, &score, &mut rng).unwrap();
        // Reproduce the noise from the same stream.
        let mut rng2 = chain_rng(43, 0);
        for (i, &o) in out.iter().enumerate() {
            let z: f64 = rng2.sample(StandardNormal);
            let drifted = x[i] + g * g * [1e-6, -1e-6][i] * dt;
            assert!((o - (drifted + g * dt.sqrt() * z)).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_percentile_rejected() {
        assert!(SamplerConfig::new(SamplerMethod::ThresholdDynamic { percentile: 0.0 }, 10, 0).is_err());
        assert!(SamplerConfig::new(SamplerMethod::ThresholdDynamic { percentile: 1.5 }, 10, 0).is_err());
        assert!(SamplerConfig::new(SamplerMethod::ThresholdDynamic { percentile: 0.9 }, 10, 0).is_ok());
    }

    #[test]
    fn all_methods_stay_in_domain() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = Sampler::new(&kernel, &schedule, Domain::UnitHypercube(2));
        let score = FnScore {
            dim: 2,
            f: |x: &[f64], _: f64| x.iter().map(|&xi| 3.0 * (0.5 - xi)).collect(),
        };
        let methods = [
            SamplerMethod::ReflectEm,
            SamplerMethod::ProjectEm,
            SamplerMethod::PredictorCorrector,
            SamplerMethod::ProbabilityFlowOde,
            SamplerMethod::AnnealedSde { gbar_scale: 0.5 },
            SamplerMethod::ThresholdStatic,
            SamplerMethod::ThresholdDynamic { percentile: 0.9 },
        ];
        for (i, method) in methods.iter().enumerate() {
            let config = SamplerConfig::new(*method, 8, 100 + i as u64).unwrap();
            let pts = s.sample_batch(&score, &config, 15_000).unwrap();
            for p in &pts {
                assert!(s.domain.contains(p, 0.0), "{method:?} escaped: {p:?}");
            }
        }
    }

    #[test]
    fn identical_seed_identical_bits() {
        let kernel = ReflectedKernel::default();
        let schedule = NoiseSchedule::sample_quality();
        let s = ctx(&kernel, &schedule, 2);
        let score = FnScore { dim: 2, f: |x: &[f64], _: f64| vec![0.5 - x[0], 0.5 - x[1]] };
        for method in [
            SamplerMethod::ReflectEm,
            SamplerMethod::PredictorCorrector,
            SamplerMethod::ThresholdStatic,
        ] {
            let config = SamplerConfig::new(method, 25, 77).unwrap();
            let a = s.sample_batch(&score, &config, 64).unwrap();
            let b = s.sample_batch(&score, &config, 64).unwrap();
            assert_eq!(a, b, "{method:?} not reproducible");
        }
    }
}
