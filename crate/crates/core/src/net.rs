//! Denoiser and generator networks.
//!
//! The denoiser D(x, σ) is three MLPs: an input encoder on the 2D point, a
//! time encoder on a sinusoidal embedding of log σ (same layer sizes, own
//! weights), and a decoder on the concatenated embeddings. By default the
//! MLP stack F is wrapped in the σ-dependent skip parameterization
//!
//!   D(x, σ) = c_skip(σ)·x + c_out(σ)·F(c_in(σ)·x, σ),
//!
//! with c_skip = σ_d²/(σ_d²+σ²), c_out = σ·σ_d/√(σ_d²+σ²), and
//! c_in = 1/√(σ_d²+σ²). The wrapper keeps F's inputs and regression target
//! at unit scale across the whole noise band, so the score (D − x)/σ² stays
//! accurate at small σ where a raw network's output error would be blown up
//! by 1/σ². The one-step generator is the same network with the noise level
//! frozen at `sigma_init`, initialized as a deep copy of a trained denoiser.

use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::{Tensor, TensorError};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Data dimension (2 for the plane).
    pub input_dim: usize,
    /// Layer widths of the input and time encoders, output width last.
    pub encoder_dims: Vec<usize>,
    /// Layer widths of the decoder; the last entry is the output and must
    /// equal `input_dim`.
    pub decoder_dims: Vec<usize>,
    /// Width of the sinusoidal time embedding; must be even.
    pub embed_dim: usize,
    /// Negative-side slope of the leaky rectifier.
    pub leaky_slope: f64,
    /// Data scale σ_d of the skip parameterization
    /// D = c_skip·x + c_out·F(c_in·x, σ); `None` makes the network emit its
    /// decoder output directly (D = F(x, σ)).
    pub sigma_data: Option<f64>,
}

impl Default for NetConfig {
    fn default() -> NetConfig {
        NetConfig {
            input_dim: 2,
            encoder_dims: vec![16, 32, 32, 32],
            decoder_dims: vec![128, 256, 128, 64, 2],
            embed_dim: 64,
            leaky_slope: 0.01,
            sigma_data: Some(1.0),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |msg: String| TensorError::Invalid { op: "net_config", msg };
        if self.input_dim == 0 {
            return Err(bad("input_dim must be positive".into()));
        }
        if self.encoder_dims.is_empty() || self.decoder_dims.is_empty() {
            return Err(bad("encoder and decoder need at least one layer".into()));
        }
        if self.encoder_dims.iter().chain(&self.decoder_dims).any(|&d| d == 0) {
            return Err(bad("layer widths must be positive".into()));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(bad(format!("embed_dim must be even and >= 2, got {}", self.embed_dim)));
        }
        if *self.decoder_dims.last().unwrap() != self.input_dim {
            return Err(bad(format!(
                "decoder must end at input_dim {}, got {:?}",
                self.input_dim, self.decoder_dims
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(bad("leaky_slope must be finite".into()));
        }
        if let Some(sd) = self.sigma_data {
            if !(sd.is_finite() && sd > 0.0) {
                return Err(bad(format!("sigma_data must be positive and finite, got {sd}")));
            }
        }
        Ok(())
    }
}

/// Sinusoidal embedding of log σ: interleaved sin/cos against geometric
/// frequencies 10000^(-k/half). Bounded in [-1, 1]; distinct σ give
/// distinct embeddings.
pub fn positional_encode(sigma: f64, embed_dim: usize) -> Result<Vec<f64>, TensorError> {
    if embed_dim < 2 || embed_dim % 2 != 0 {
        return Err(TensorError::Invalid {
            op: "positional_encode",
            msg: format!("embed_dim must be even and >= 2, got {embed_dim}"),
        });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(TensorError::Invalid {
            op: "positional_encode",
            msg: format!("sigma must be positive and finite, got {sigma}"),
        });
    }
    let u = sigma.ln();
    let half = embed_dim / 2;
    let mut out = Vec::with_capacity(embed_dim);
    for k in 0..half {
        let freq = (-(10_000.0f64.ln()) * k as f64 / half as f64).exp();
        out.push((freq * u).sin());
        out.push((freq * u).cos());
    }
    Ok(out)
}

/// One plain MLP: linear layers with leaky-rectifier activations between
/// them (none after the output layer).
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    /// (weight in×out, bias out) per layer.
    layers: Vec<(Tensor, Tensor)>,
    slope: f64,
}

impl Mlp {
    /// Kaiming-style init: weights uniform in ±sqrt(6/fan_in), biases zero.
    fn init(dims: &[usize], slope: f64, rng: &mut Rng) -> Mlp {
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weights: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.uniform_in(-bound, bound)).collect();
            layers.push((
                Tensor::from_raw(vec![fan_in, fan_out], weights),
                Tensor::zeros(vec![fan_out]),
            ));
        }
        Mlp { layers, slope }
    }

    fn bind(&self, tape: &mut Tape, needs_grad: bool) -> Vec<(NodeId, NodeId)> {
        self.layers
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone(), needs_grad), tape.leaf(b.clone(), needs_grad)))
            .collect()
    }
}

fn mlp_forward(
    tape: &mut Tape,
    layers: &[(NodeId, NodeId)],
    slope: f64,
    mut h: NodeId,
) -> Result<NodeId, TensorError> {
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.matmul(h, w)?;
        h = tape.add_bias(h, b)?;
        if i + 1 < layers.len() {
            h = tape.leaky_relu(h, slope)?;
        }
    }
    Ok(h)
}

/// The denoiser network D(x, σ).
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    pub config: NetConfig,
    input_encoder: Mlp,
    time_encoder: Mlp,
    decoder: Mlp,
}

/// A denoiser bound into a tape; holds the parameter node ids.
pub struct BoundDenoiser {
    input_encoder: Vec<(NodeId, NodeId)>,
    time_encoder: Vec<(NodeId, NodeId)>,
    decoder: Vec<(NodeId, NodeId)>,
    slope: f64,
    embed_dim: usize,
    sigma_data: Option<f64>,
}

impl DenoiserNet {
    /// Fresh network with randomly initialized weights.
    pub fn init(config: NetConfig, rng: &mut Rng) -> Result<DenoiserNet, TensorError> {
        config.validate()?;
        let enc_out = *config.encoder_dims.last().unwrap();
        let mut input_dims = vec![config.input_dim];
        input_dims.extend_from_slice(&config.encoder_dims);
        let mut time_dims = vec![config.embed_dim];
        time_dims.extend_from_slice(&config.encoder_dims);
        let mut dec_dims = vec![2 * enc_out];
        dec_dims.extend_from_slice(&config.decoder_dims);
        Ok(DenoiserNet {
            input_encoder: Mlp::init(&input_dims, config.leaky_slope, rng),
            time_encoder: Mlp::init(&time_dims, config.leaky_slope, rng),
            decoder: Mlp::init(&dec_dims, config.leaky_slope, rng),
            config,
        })
    }

    /// Copies the parameters into `tape` as leaves.
    pub fn bind(&self, tape: &mut Tape, needs_grad: bool) -> BoundDenoiser {
        BoundDenoiser {
            input_encoder: self.input_encoder.bind(tape, needs_grad),
            time_encoder: self.time_encoder.bind(tape, needs_grad),
            decoder: self.decoder.bind(tape, needs_grad),
            slope: self.config.leaky_slope,
            embed_dim: self.config.embed_dim,
            sigma_data: self.config.sigma_data,
        }
    }

    /// Plain (gradient-free) forward pass on a batch at per-row noise
    /// levels. `sigmas` holds one level per row, or a single level shared
    /// by the whole batch.
    pub fn eval_batch(&self, x: &Tensor, sigmas: &[f64]) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x_id = tape.constant(x.clone());
        let out = bound.forward(&mut tape, x_id, sigmas)?;
        Ok(tape.value(out).clone())
    }

    /// Parameters in a fixed order (encoder, time encoder, decoder; weight
    /// before bias within a layer). The same order everywhere: optimizer
    /// state, checkpoints, gradient lists.
    pub fn params(&self) -> Vec<&Tensor> {
        self.mlps().into_iter().flat_map(|m| m.layers.iter().flat_map(|(w, b)| [w, b])).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        [&mut self.input_encoder, &mut self.time_encoder, &mut self.decoder]
            .into_iter()
            .flat_map(|m| m.layers.iter_mut().flat_map(|(w, b)| [w, b]))
            .collect()
    }

    fn mlps(&self) -> [&Mlp; 3] {
        [&self.input_encoder, &self.time_encoder, &self.decoder]
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Zeroes the final decoder layer (weights and bias); the MLP stack F
    /// then outputs exactly zero everywhere, so the whole network emits
    /// c_skip·x under the skip parameterization and exactly zero in raw
    /// mode. Useful to pin behavior in tests.
    pub fn zero_final_layer(&mut self) {
        let (w, b) = self.decoder.layers.last_mut().expect("decoder has layers");
        w.data_mut().fill(0.0);
        b.data_mut().fill(0.0);
    }
}

impl BoundDenoiser {
    /// Records the forward pass for a batch node `x` (rows are points).
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: NodeId,
        sigmas: &[f64],
    ) -> Result<NodeId, TensorError> {
        let batch = tape.value(x).rows();
        if sigmas.len() != batch && sigmas.len() != 1 {
            return Err(TensorError::Invalid {
                op: "denoiser_forward",
                msg: format!("got {} noise levels for a batch of {batch}", sigmas.len()),
            });
        }
        let cols = tape.value(x).cols();
        let mut embed = Vec::with_capacity(batch * self.embed_dim);
        for row in 0..batch {
            let sigma = sigmas[if sigmas.len() == 1 { 0 } else { row }];
            embed.extend_from_slice(&positional_encode(sigma, self.embed_dim)?);
        }
        let embed_id = tape.constant(Tensor::from_raw(vec![batch, self.embed_dim], embed));
        // Per-row skip coefficients; the raw variant bypasses them entirely.
        let coeffs = match self.sigma_data {
            None => None,
            Some(sd) => {
                let mut c_in = Vec::with_capacity(batch * cols);
                let mut c_skip = Vec::with_capacity(batch * cols);
                let mut c_out = Vec::with_capacity(batch * cols);
                for row in 0..batch {
                    let sigma = sigmas[if sigmas.len() == 1 { 0 } else { row }];
                    let den = sd * sd + sigma * sigma;
                    for _ in 0..cols {
                        c_in.push(1.0 / den.sqrt());
                        c_skip.push(sd * sd / den);
                        c_out.push(sigma * sd / den.sqrt());
                    }
                }
                let shape = vec![batch, cols];
                Some((
                    tape.constant(Tensor::from_raw(shape.clone(), c_in)),
                    tape.constant(Tensor::from_raw(shape.clone(), c_skip)),
                    tape.constant(Tensor::from_raw(shape, c_out)),
                ))
            }
        };
        let x_in = match coeffs {
            Some((c_in, _, _)) => tape.mul(c_in, x)?,
            None => x,
        };
        let h_x = mlp_forward(tape, &self.input_encoder, self.slope, x_in)?;
        let h_t = mlp_forward(tape, &self.time_encoder, self.slope, embed_id)?;
        let joint = tape.concat_last(h_x, h_t)?;
        let f = mlp_forward(tape, &self.decoder, self.slope, joint)?;
        match coeffs {
            Some((_, c_skip, c_out)) => {
                let skip = tape.mul(c_skip, x)?;
                let scaled = tape.mul(c_out, f)?;
                tape.add(skip, scaled)
            }
            None => Ok(f),
        }
    }

    /// Parameter node ids in the canonical order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        [&self.input_encoder, &self.time_encoder, &self.decoder]
            .into_iter()
            .flat_map(|m| m.iter().flat_map(|&(w, b)| [w, b]))
            .collect()
    }

    /// Pulls this network's gradients out of a backward result, zero-filled
    /// for parameters the loss never touched. `reference_params` supplies
    /// shapes (pass `net.params()`).
    pub fn take_grads(&self, reference_params: &[&Tensor], grads: &mut Gradients) -> Vec<Tensor> {
        self.param_ids()
            .iter()
            .zip(reference_params)
            .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect()
    }
}

/// Evaluates the denoiser with a range check against the schedule; use this
/// at API boundaries, `eval_batch` internally where σ is already vetted.
pub fn denoise(
    net: &DenoiserNet,
    x: &Tensor,
    sigma: f64,
    schedule: &NoiseSchedule,
) -> Result<Tensor, TensorError> {
    if !schedule.contains(sigma) {
        return Err(TensorError::Invalid {
            op: "denoise",
            msg: format!(
                "sigma {sigma} outside schedule band [{}, {}]",
                schedule.sigma_min, schedule.t_max
            ),
        });
    }
    net.eval_batch(x, &[sigma])
}

/// Converts denoiser output to a score estimate: s(x, σ) = (D(x, σ) − x)/σ².
pub fn score_from_denoiser(x: &Tensor, denoised: &Tensor, sigma: f64) -> Result<Tensor, TensorError> {
    if x.shape() != denoised.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "score_from_denoiser",
            lhs: x.shape().to_vec(),
            rhs: denoised.shape().to_vec(),
        });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(TensorError::Invalid {
            op: "score_from_denoiser",
            msg: format!("sigma must be positive, got {sigma}"),
        });
    }
    let inv = 1.0 / (sigma * sigma);
    let data = denoised.data().iter().zip(x.data()).map(|(d, xv)| (d - xv) * inv).collect();
    Ok(Tensor::from_raw(x.shape().to_vec(), data))
}

/// Anything that can act as a denoiser: trained networks and analytic
/// oracles alike. Score estimates follow via [`score_from_denoiser`].
/// `sigmas` holds one noise level per row, or one for the whole batch.
pub trait Denoise {
    fn denoise_batch(&self, x: &Tensor, sigmas: &[f64]) -> Result<Tensor, TensorError>;
}

impl Denoise for DenoiserNet {
    fn denoise_batch(&self, x: &Tensor, sigmas: &[f64]) -> Result<Tensor, TensorError> {
        self.eval_batch(x, sigmas)
    }
}

/// One-step generator: a denoiser evaluated at a frozen noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub net: DenoiserNet,
    pub sigma_init: f64,
}

impl GeneratorNet {
    /// G(x) for a batch, gradient-free.
    pub fn eval_batch(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        self.net.eval_batch(x, &[self.sigma_init])
    }

    pub fn bind(&self, tape: &mut Tape, needs_grad: bool) -> BoundDenoiser {
        self.net.bind(tape, needs_grad)
    }

    /// Records G(x) on the tape via a bound copy of the weights.
    pub fn forward(
        &self,
        bound: &BoundDenoiser,
        tape: &mut Tape,
        x: NodeId,
    ) -> Result<NodeId, TensorError> {
        bound.forward(tape, x, &[self.sigma_init])
    }
}

/// Builds a generator as a deep copy of `denoiser` conditioned at
/// `sigma_init`. The copy is independent: training the generator never
/// touches the source network.
pub fn init_generator_from(
    denoiser: &DenoiserNet,
    sigma_init: f64,
    schedule: &NoiseSchedule,
) -> Result<GeneratorNet, TensorError> {
    if !schedule.contains(sigma_init) {
        return Err(TensorError::Invalid {
            op: "init_generator",
            msg: format!(
                "sigma_init {sigma_init} outside schedule band [{}, {}]",
                schedule.sigma_min, schedule.t_max
            ),
        });
    }
    Ok(GeneratorNet { net: denoiser.clone(), sigma_init })
}
