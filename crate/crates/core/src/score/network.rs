//! Feed-forward score network with hand-written backpropagation.
//!
//! Architecture: the input point is concatenated with a fixed sinusoidal
//! embedding of `log sigma_t`, pushed through hidden layers of
//! linear -> layer norm -> swish, and read out by a final linear map. When
//! `output_scale` is set the raw output is divided by `sigma_t`, so the
//! network regresses the O(1) quantity `sigma_t * score` instead of a
//! score whose magnitude varies by orders of magnitude over time.
//!
//! Parameters live in one flat `Vec<f64>` (declaration order: per hidden
//! layer weights, bias, gain, shift; then output weights and bias), which
//! keeps the optimizer, EMA, checkpointing, and finite-difference checks
//! trivial.

use crate::samplers::ScoreFunction;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

const LN_EPS: f64 = 1e-6;

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkArch {
    pub data_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Width of the sinusoidal time embedding; must be even.
    pub time_embed_dim: usize,
    /// Divide the raw output by `sigma_t`.
    pub output_scale: bool,
}

impl NetworkArch {
    /// Desk-scale default: 4 hidden layers of width 128, 32-wide time
    /// embedding, `1/sigma_t` output scaling.
    pub fn toy_default(data_dim: usize) -> Self {
        Self { data_dim, hidden_width: 128, hidden_layers: 4, time_embed_dim: 32, output_scale: true }
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "time_embed_dim {} must be even and positive",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed_dim
    }
}

/// One named span of the flat parameter vector.
#[derive(Debug, Clone)]
struct Block {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    blocks: Vec<Block>,
    total: usize,
}

impl Layout {
    fn build(arch: &NetworkArch) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize, offset: &mut usize| {
            blocks.push(Block { name, offset: *offset, len });
            *offset += len;
        };
        let w = arch.hidden_width;
        for l in 0..arch.hidden_layers {
            let fan_in = if l == 0 { arch.input_dim() } else { w };
            push(format!("layer{l}.weight"), w * fan_in, &mut offset);
            push(format!("layer{l}.bias"), w, &mut offset);
            push(format!("layer{l}.gain"), w, &mut offset);
            push(format!("layer{l}.shift"), w, &mut offset);
        }
        push("output.weight".into(), arch.data_dim * w, &mut offset);
        push("output.bias".into(), arch.data_dim, &mut offset);
        Layout { blocks, total: offset }
    }

    fn span(&self, index: usize) -> (usize, usize) {
        let b = &self.blocks[index];
        (b.offset, b.offset + b.len)
    }
}

/// Forward activations retained for the backward pass of one example.
pub(crate) struct ForwardCache {
    /// Per hidden layer: pre-norm activation statistics and outputs.
    layers: Vec<LayerCache>,
    sigma_t: f64,
}

struct LayerCache {
    /// Input to the layer.
    h_in: Vec<f64>,
    /// Normalized pre-affine values (a - mu) * inv_std.
    xhat: Vec<f64>,
    inv_std: f64,
    /// Post-affine values gamma * xhat + beta (swish input).
    y: Vec<f64>,
    /// Layer output swish(y).
    h_out: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The trainable score model.
#[derive(Debug, Clone)]
pub struct ScoreNetwork {
    arch: NetworkArch,
    schedule: NoiseSchedule,
    params: Vec<f64>,
    layout: Layout,
}

impl ScoreNetwork {
    /// Fresh network with scaled-Gaussian weights, unit gains, zero biases.
    pub fn init<R: Rng + ?Sized>(
        arch: NetworkArch,
        schedule: NoiseSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::build(&arch);
        let mut params = vec![0.0; layout.total];
        let w = arch.hidden_width;
        for (i, block) in layout.blocks.iter().enumerate() {
            if block.name.ends_with(".weight") {
                let fan_in = if block.name == "output.weight" {
                    w
                } else {
                    block.len / w
                };
                let scale = 1.0 / (fan_in as f64).sqrt();
                for p in &mut params[block.offset..block.offset + block.len] {
                    *p = scale * rng.sample::<f64, _>(StandardNormal);
                }
            } else if block.name.ends_with(".gain") {
                for p in &mut params[block.offset..block.offset + block.len] {
                    *p = 1.0;
                }
            }
            let _ = i;
        }
        Ok(Self { arch, schedule, params, layout })
    }

    /// Rebuild from a flat parameter vector (checkpoint load, EMA snapshot).
    pub fn from_params(arch: NetworkArch, schedule: NoiseSchedule, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::build(&arch);
        if params.len() != layout.total {
            return Err(Error::DimensionMismatch { expected: layout.total, got: params.len() });
        }
        Ok(Self { arch, schedule, params, layout })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Name of the parameter block containing flat index `i`.
    pub fn block_name(&self, i: usize) -> &str {
        for b in &self.layout.blocks {
            if i >= b.offset && i < b.offset + b.len {
                return &b.name;
            }
        }
        "out-of-range"
    }

    /// A clone of this network with different parameter values (used to
    /// sample from the EMA snapshot).
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::from_params(self.arch, self.schedule, params)
    }

    /// Sinusoidal features of `log sigma_t`, normalized to [0, 1] over the
    /// schedule's range, with a linear frequency ladder pi, 2 pi, ...
    fn time_embedding(&self, sigma_t: f64, out: &mut Vec<f64>) {
        let half = self.arch.time_embed_dim / 2;
        let lo = self.schedule.sigma0().ln();
        let hi = self.schedule.sigma1().ln();
        let u = (sigma_t.ln() - lo) / (hi - lo);
        for k in 0..half {
            let omega = std::f64::consts::PI * (k + 1) as f64;
            out.push((omega * u).sin());
            out.push((omega * u).cos());
        }
    }

    /// Score estimate at `(x, t)`.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, t)?.0)
    }

    pub(crate) fn forward_cached(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.arch.data_dim {
            return Err(Error::DimensionMismatch { expected: self.arch.data_dim, got: x.len() });
        }
        let sigma_t = self.schedule.sigma(t)?;
        let mut input = Vec::with_capacity(self.arch.input_dim());
        input.extend_from_slice(x);
        self.time_embedding(sigma_t, &mut input);

        let w = self.arch.hidden_width;
        let mut layers = Vec::with_capacity(self.arch.hidden_layers);
        let mut h = input;
        for l in 0..self.arch.hidden_layers {
            let (w_off, _) = self.layout.span(4 * l);
            let (b_off, _) = self.layout.span(4 * l + 1);
            let (g_off, _) = self.layout.span(4 * l + 2);
            let (s_off, _) = self.layout.span(4 * l + 3);
            let fan_in = h.len();

            let mut a = vec![0.0; w];
            for i in 0..w {
                let row = &self.params[w_off + i * fan_in..w_off + (i + 1) * fan_in];
                let mut acc = self.params[b_off + i];
                for (wj, hj) in row.iter().zip(&h) {
                    acc += wj * hj;
                }
                a[i] = acc;
            }

            let mu = a.iter().sum::<f64>() / w as f64;
            let var = a.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / w as f64;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            let mut xhat = vec![0.0; w];
            let mut y = vec![0.0; w];
            let mut h_out = vec![0.0; w];
            for i in 0..w {
                xhat[i] = (a[i] - mu) * inv_std;
                y[i] = self.params[g_off + i] * xhat[i] + self.params[s_off + i];
                h_out[i] = y[i] * sigmoid(y[i]);
            }
            layers.push(LayerCache { h_in: h, xhat, inv_std, y, h_out: h_out.clone() });
            h = h_out;
        }

        let (wo_off, _) = self.layout.span(4 * self.arch.hidden_layers);
        let (bo_off, _) = self.layout.span(4 * self.arch.hidden_layers + 1);
        let d = self.arch.data_dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            let row = &self.params[wo_off + i * w..wo_off + (i + 1) * w];
            let mut acc = self.params[bo_off + i];
            for (wj, hj) in row.iter().zip(&h) {
                acc += wj * hj;
            }
            out[i] = acc;
        }
        if self.arch.output_scale {
            for o in &mut out {
                *o /= sigma_t;
            }
        }
        Ok((out, ForwardCache { layers, sigma_t }))
    }

    /// Accumulate parameter gradients for one example into `grad`, given
    /// the loss gradient with respect to the (scaled) network output.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_score: &[f64], grad: &mut [f64]) {
        let w = self.arch.hidden_width;
        let d = self.arch.data_dim;
        let scale = if self.arch.output_scale { 1.0 / cache.sigma_t } else { 1.0 };

        // Output linear layer.
        let (wo_off, _) = self.layout.span(4 * self.arch.hidden_layers);
        let (bo_off, _) = self.layout.span(4 * self.arch.hidden_layers + 1);
        let h_last = &cache.layers[self.arch.hidden_layers - 1].h_out;
        let mut dh = vec![0.0; w];
        for i in 0..d {
            let dout = d_score[i] * scale;
            grad[bo_off + i] += dout;
            let row_off = wo_off + i * w;
            for j in 0..w {
                grad[row_off + j] += dout * h_last[j];
                dh[j] += self.params[row_off + j] * dout;
            }
        }

        // Hidden layers, last to first.
        for l in (0..self.arch.hidden_layers).rev() {
            let layer = &cache.layers[l];
            let (w_off, _) = self.layout.span(4 * l);
            let (b_off, _) = self.layout.span(4 * l + 1);
            let (g_off, _) = self.layout.span(4 * l + 2);
            let (s_off, _) = self.layout.span(4 * l + 3);
            let fan_in = layer.h_in.len();

            // Swish: d h_out / d y = sig(y) (1 + y (1 - sig(y))).
            let mut dy = vec![0.0; w];
            for i in 0..w {
                let s = sigmoid(layer.y[i]);
                dy[i] = dh[i] * s * (1.0 + layer.y[i] * (1.0 - s));
            }

            // Layer norm affine.
            let mut dxhat = vec![0.0; w];
            for i in 0..w {
                grad[g_off + i] += dy[i] * layer.xhat[i];
                grad[s_off + i] += dy[i];
                dxhat[i] = dy[i] * self.params[g_off + i];
            }

            // Layer norm statistics.
            let mean_dxhat = dxhat.iter().sum::<f64>() / w as f64;
            let mean_dxhat_xhat =
                dxhat.iter().zip(&layer.xhat).map(|(a, b)| a * b).sum::<f64>() / w as f64;
            let mut da = vec![0.0; w];
            for i in 0..w {
                da[i] = layer.inv_std * (dxhat[i] - mean_dxhat - layer.xhat[i] * mean_dxhat_xhat);
            }

            // Linear layer.
            let mut dh_prev = vec![0.0; fan_in];
            for i in 0..w {
                grad[b_off + i] += da[i];
                let row_off = w_off + i * fan_in;
                for j in 0..fan_in {
                    grad[row_off + j] += da[i] * layer.h_in[j];
                    dh_prev[j] += self.params[row_off + j] * da[i];
                }
            }
            dh = dh_prev;
        }
    }
}

impl ScoreFunction for ScoreNetwork {
    fn dim(&self) -> usize {
        self.arch.data_dim
    }

    /// Failures (out-of-range time, dimension mismatch) surface as NaN so
    /// samplers abort with step diagnostics.
    fn evaluate(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.forward(x, t).unwrap_or_else(|_| vec![f64::NAN; self.arch.data_dim])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let arch = NetworkArch { data_dim: 3, hidden_width: 16, hidden_layers: 2, time_embed_dim: 8, output_scale: true };
        let net = ScoreNetwork::init(arch, NoiseSchedule::sample_quality(), &mut rng).unwrap();
        let out = net.forward(&[0.2, 0.5, 0.8], 0.4).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|v| v.is_finite()));
        let out2 = net.forward(&[0.2, 0.5, 0.8], 0.4).unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn rejects_bad_arch() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let arch = NetworkArch { data_dim: 1, hidden_width: 8, hidden_layers: 1, time_embed_dim: 7, output_scale: false };
        assert!(ScoreNetwork::init(arch, NoiseSchedule::sample_quality(), &mut rng).is_err());
    }

    #[test]
    fn output_scale_divides_by_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let arch = NetworkArch { data_dim: 2, hidden_width: 8, hidden_layers: 1, time_embed_dim: 4, output_scale: false };
        let raw = ScoreNetwork::init(arch, NoiseSchedule::sample_quality(), &mut rng).unwrap();
        let scaled_arch = NetworkArch { output_scale: true, ..arch };
        let scaled = ScoreNetwork::from_params(
            scaled_arch,
            NoiseSchedule::sample_quality(),
            raw.params().to_vec(),
        )
        .unwrap();
        let t = 0.6;
        let sigma = NoiseSchedule::sample_quality().sigma(t).unwrap();
        let a = raw.forward(&[0.3, 0.4], t).unwrap();
        let b = scaled.forward(&[0.3, 0.4], t).unwrap();
        for (ai, bi) in a.iter().zip(&b) {
            assert!((ai / sigma - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn block_names_cover_all_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let arch = NetworkArch { data_dim: 2, hidden_width: 4, hidden_layers: 2, time_embed_dim: 4, output_scale: true };
        let net = ScoreNetwork::init(arch, NoiseSchedule::sample_quality(), &mut rng).unwrap();
        assert_eq!(net.block_name(0), "layer0.weight");
        assert_eq!(net.block_name(net.n_params() - 1), "output.bias");
        for i in 0..net.n_params() {
            assert_ne!(net.block_name(i), "out-of-range");
        }
    }
}
