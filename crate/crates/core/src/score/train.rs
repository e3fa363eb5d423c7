//! Constrained denoising score matching and its training loop.
//!
//! The objective regresses the network onto the conditional transition
//! score: for data `x0`, time `t ~ U(t_min, 1)`, and `x_t` drawn from the
//! reflected kernel,
//!
//! ```text
//! loss = mean over batch and dimensions of
//!        gbar(t)^2 (s_theta(x_t, t) - d/dx_t log p_t(x_t | x0))^2
//! ```
//!
//! Times are sampled uniformly (no importance sampling). The weighting
//! `gbar^2` makes the objective a scaled per-point likelihood bound.

use crate::kernel::ReflectedKernel;
use crate::schedule::NoiseSchedule;
use crate::score::network::ScoreNetwork;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::Gamma;
use rayon::prelude::*;

/// Training hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub ema_rate: f64,
    pub seed: u64,
    /// Fraction of the dataset held out for validation.
    pub val_fraction: f64,
    /// Validation cadence in steps (0 disables).
    pub val_every: usize,
    /// Global gradient-norm clip (0 disables). Rare small-time draws carry
    /// transition scores of order 1/t; unclipped they inflate the
    /// optimizer's second moments and stall learning for hundreds of steps.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 128,
            total_steps: 2000,
            ema_rate: 0.9999,
            seed: 0,
            val_fraction: 0.1,
            val_every: 50,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::InvalidConfig("batch_size and total_steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_rate) && self.ema_rate != 0.0 {
            // rate 1 would freeze the average forever
            if self.ema_rate >= 1.0 {
                return Err(Error::InvalidConfig(format!("ema_rate {} outside [0, 1)", self.ema_rate)));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(format!("val_fraction {}", self.val_fraction)));
        }
        Ok(())
    }
}

/// One regression tuple of the CDSM objective.
#[derive(Debug, Clone)]
pub struct LossSample {
    pub t: f64,
    pub x0: Vec<f64>,
    pub xt: Vec<f64>,
    pub target: Vec<f64>,
    pub weight: f64,
}

/// Draw `(t, x_t, target, weight)` for each data point of a batch.
pub fn draw_loss_samples<R: Rng + ?Sized>(
    kernel: &ReflectedKernel,
    schedule: &NoiseSchedule,
    batch: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<LossSample>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    let t_min = schedule.t_min;
    batch
        .iter()
        .map(|x0| {
            let t = t_min + (1.0 - t_min) * rng.gen::<f64>();
            let v = schedule.accumulated_variance(0.0, t)?;
            let xt = kernel.sample_transition_nd(x0, v, rng)?;
            let target = kernel.transition_score_nd(x0, &xt, v)?;
            let g = schedule.gbar(t);
            Ok(LossSample { t, x0: x0.clone(), xt, target, weight: g * g })
        })
        .collect()
}

/// Fixed chunk width for the parallel batch reduction; chunk results are
/// summed in order, so the loss is independent of thread count.
const REDUCE_CHUNK: usize = 16;

/// Weighted squared-error loss and flat parameter gradient over fixed
/// regression tuples. Reduction is the mean over batch and dimensions.
pub fn loss_and_grad(network: &ScoreNetwork, samples: &[LossSample]) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("loss samples"));
    }
    let d = network.arch().data_dim;
    let n = samples.len();
    let norm = 1.0 / (n as f64 * d as f64);

    let partials: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; network.n_params()];
            let mut loss = 0.0;
            for sample in chunk {
                let (out, cache) = network.forward_cached(&sample.xt, sample.t)?;
                let mut d_out = vec![0.0; d];
                let mut term = 0.0;
                for j in 0..d {
                    let diff = out[j] - sample.target[j];
                    term += sample.weight * diff * diff;
                    d_out[j] = 2.0 * sample.weight * diff * norm;
                }
                if !term.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        t: sample.t,
                        x0: sample.x0.clone(),
                        xt: sample.xt.clone(),
                    });
                }
                loss += term * norm;
                network.backward(&cache, &d_out, &mut grad);
            }
            Ok((loss, grad))
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; network.n_params()];
    for partial in partials {
        let (l, g) = partial?;
        loss += l;
        for (gi, pi) in grad.iter_mut().zip(&g) {
            *gi += pi;
        }
    }
    Ok((loss, grad))
}

/// Monte Carlo CDSM loss of the network on a data batch (no gradients).
pub fn cdsm_loss<R: Rng + ?Sized>(
    network: &ScoreNetwork,
    kernel: &ReflectedKernel,
    batch: &[Vec<f64>],
    rng: &mut R,
) -> Result<f64> {
    let samples = draw_loss_samples(kernel, network.schedule(), batch, rng)?;
    let d = network.arch().data_dim;
    let norm = 1.0 / (samples.len() as f64 * d as f64);
    let mut loss = 0.0;
    for sample in &samples {
        let out = network.forward(&sample.xt, sample.t)?;
        let term: f64 = out
            .iter()
            .zip(&sample.target)
            .map(|(o, t)| sample.weight * (o - t) * (o - t))
            .sum();
        if !term.is_finite() {
            return Err(Error::NonFiniteLoss { t: sample.t, x0: sample.x0.clone(), xt: sample.xt.clone() });
        }
        loss += term * norm;
    }
    Ok(loss)
}

/// Adaptive-moment optimizer state (bias-corrected, default betas).
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grad.len() });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// One optimizer step on a data batch; returns the pre-step loss.
pub fn train_step<R: Rng + ?Sized>(
    network: &mut ScoreNetwork,
    optimizer: &mut Adam,
    kernel: &ReflectedKernel,
    batch: &[Vec<f64>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let samples = draw_loss_samples(kernel, network.schedule(), batch, rng)?;
    let (loss, mut grad) = loss_and_grad(network, &samples)?;
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { block: network.block_name(bad).to_string() });
    }
    if config.grad_clip > 0.0 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > config.grad_clip {
            let scale = config.grad_clip / norm;
            for g in &mut grad {
                *g *= scale;
            }
        }
    }
    optimizer.update(network.params_mut(), &grad, config.learning_rate)?;
    Ok(loss)
}

/// Exponential moving average: `ema <- rate * ema + (1 - rate) * params`.
pub fn ema_update(ema: &mut [f64], params: &[f64], rate: f64) -> Result<()> {
    if ema.len() != params.len() {
        return Err(Error::DimensionMismatch { expected: ema.len(), got: params.len() });
    }
    for (e, p) in ema.iter_mut().zip(params) {
        *e = rate * *e + (1.0 - rate) * p;
    }
    Ok(())
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    /// 0.99-smoothed training loss.
    pub ema_loss: f64,
    pub val_loss: Option<f64>,
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub curve: Vec<LossPoint>,
    pub ema_params: Vec<f64>,
}

/// Smoothing rate for the reported loss curve.
pub const LOSS_EMA_RATE: f64 = 0.99;

/// Full training loop: shuffled minibatches, parameter EMA, smoothed loss
/// curve, fixed-seed validation evaluations.
pub fn train(
    network: &mut ScoreNetwork,
    kernel: &ReflectedKernel,
    data: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    let mut rng = crate::samplers::chain_rng(config.seed, 0);
    let n_val = ((data.len() as f64) * config.val_fraction) as usize;
    let (val, train_data) = data.split_at(n_val);

    let mut optimizer = Adam::new(network.n_params());
    let mut ema_params = network.params().to_vec();
    let mut curve = Vec::with_capacity(config.total_steps);
    let mut ema_loss = f64::NAN;

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut cursor = train_data.len(); // force initial shuffle

    for step in 0..config.total_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor >= order.len() {
                // Fisher-Yates reshuffle between epochs.
                for i in (1..order.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    order.swap(i, j);
                }
                cursor = 0;
            }
            batch.push(train_data[order[cursor]].clone());
            cursor += 1;
        }
        let loss = train_step(network, &mut optimizer, kernel, &batch, config, &mut rng)?;
        // Warmed-up averaging rate: a raw 0.9999 average over a few thousand
        // steps would still be dominated by the random initialization.
        let k = (step + 1) as f64;
        let rate = config.ema_rate.min((1.0 + k) / (10.0 + k));
        ema_update(&mut ema_params, network.params(), rate)?;
        ema_loss = if ema_loss.is_nan() {
            loss
        } else {
            LOSS_EMA_RATE * ema_loss + (1.0 - LOSS_EMA_RATE) * loss
        };

        let val_loss = if !val.is_empty()
            && config.val_every > 0
            && (step % config.val_every == 0 || step + 1 == config.total_steps)
        {
            // Fixed noise draw per evaluation keeps the curve comparable
            // across steps.
            let mut val_rng = crate::samplers::chain_rng(config.seed, 1);
            Some(cdsm_loss(network, kernel, val, &mut val_rng)?)
        } else {
            None
        };
        curve.push(LossPoint { step, loss, ema_loss, val_loss });
    }

    Ok(TrainRun { curve, ema_params })
}

/// Synthetic simplex dataset: Dirichlet draws over `d + 1` parts projected
/// to `d` free coordinates and clipped into the interior by 1e-6.
pub fn make_simplex_dataset<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    concentration: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if d < 2 {
        return Err(Error::InvalidConfig(format!("simplex dimension {d} must be >= 2")));
    }
    if concentration.len() != d + 1 {
        return Err(Error::DimensionMismatch { expected: d + 1, got: concentration.len() });
    }
    if concentration.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidConfig("concentration entries must be positive".into()));
    }
    let gammas: Vec<Gamma<f64>> = concentration
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::InvalidConfig(e.to_string())))
        .collect::<Result<_>>()?;
    const CLIP: f64 = 1e-6;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let draws: Vec<f64> = gammas.iter().map(|g| rng.sample(g)).collect();
        let total: f64 = draws.iter().sum();
        let mut y: Vec<f64> = draws[..d].iter().map(|&g| (g / total).max(CLIP)).collect();
        let sum: f64 = y.iter().sum();
        if sum > 1.0 - CLIP {
            let scale = (1.0 - CLIP) / sum;
            for yi in &mut y {
                *yi *= scale;
            }
        }
        out.push(y);
    }
    Ok(out)
}
