//! Transport-regularized distillation of a diffusion model into a one-step
//! generator.
//!
//! Training alternates two moves: a denoising-score-matching update of the
//! *fake* diffusion model on the generator's current outputs, and a generator
//! update along the score-difference direction ω_t(s^fake − s^target) plus
//! the gradient of the quadratic transport penalty λ‖x − G(x)‖². The target
//! score model stays frozen throughout. A closed-form linear-generator
//! variant trains a 2×2 map against exact Gaussian scores, which is the
//! setting where the analytic loss surface and the optimal-transport limit
//! can be checked without any Monte-Carlo slack from network fitting.

use crate::data::PairSet;
use crate::diffusion::{dsm_step, perturb, LossWeighting};
use crate::kernels;
use crate::metrics::{energy_distance, transport_cost_rms};
use crate::net::{Denoise, DenoiserNet, GeneratorNet, NetConfig, init_generator_from};
use crate::optim::{adam_step, AdamState};
use crate::oracle::AnalyticDist;
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};

/// Per-sample weight ω_t on the score-difference direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaMode {
    /// σ_t² · d / ‖D^target(y_t) − G(x)‖₁ per sample: normalizes the update
    /// magnitude across noise levels. The training default.
    DmdNormalized,
    /// Plain σ_t². Cancels the 1/σ² in the score difference, which makes
    /// the expected objective an exact noise-level-weighted KL integral —
    /// the mode used wherever gradients are compared against quadrature.
    SigmaSqConstant,
}

impl Default for OmegaMode {
    fn default() -> OmegaMode {
        OmegaMode::DmdNormalized
    }
}

/// Per-row ω_t weights for a batch. `ts` holds one noise level per row, or
/// one for the whole batch; a vanishing normalizer is clamped at 1e-8.
pub fn omega_weights(
    mode: OmegaMode,
    ts: &[f64],
    target_denoised: &Tensor,
    gen_out: &Tensor,
) -> Result<Vec<f64>, TensorError> {
    if target_denoised.shape() != gen_out.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "omega_weights",
            lhs: target_denoised.shape().to_vec(),
            rhs: gen_out.shape().to_vec(),
        });
    }
    let rows = gen_out.rows();
    if ts.len() != rows && ts.len() != 1 {
        return Err(TensorError::Invalid {
            op: "omega_weights",
            msg: format!("got {} noise levels for {rows} rows", ts.len()),
        });
    }
    let d = gen_out.cols() as f64;
    let weights = (0..rows)
        .map(|r| {
            let t = ts[if ts.len() == 1 { 0 } else { r }];
            let s2 = t * t;
            match mode {
                OmegaMode::SigmaSqConstant => s2,
                OmegaMode::DmdNormalized => {
                    let l1: f64 = target_denoised
                        .row(r)
                        .iter()
                        .zip(gen_out.row(r))
                        .map(|(a, b)| (a - b).abs())
                        .sum();
                    s2 * d / l1.max(1e-8)
                }
            }
        })
        .collect();
    Ok(weights)
}

/// Hyperparameters for distillation training.
#[derive(Debug, Clone, PartialEq)]
pub struct RdmdConfig {
    /// Transport-penalty coefficient, ≥ 0.
    pub lambda: f64,
    /// Noise level at which the generator conditions its copied denoiser.
    pub sigma_init: f64,
    pub generator_lr: f64,
    pub fake_lr: f64,
    /// Fake-model updates per generator update.
    pub fake_steps: usize,
    pub batch_size: usize,
    pub iterations: usize,
    /// Noise-level band for the score-difference draws (log-uniform).
    pub t_lo: f64,
    pub t_hi: f64,
    pub omega_mode: OmegaMode,
    /// β weighting of the fake model's regression loss.
    pub fake_weighting: LossWeighting,
    /// Metric-log cadence in iterations.
    pub eval_every: usize,
    /// Sample count for the metric panel and the target reference set.
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for RdmdConfig {
    fn default() -> RdmdConfig {
        RdmdConfig {
            lambda: 0.2,
            sigma_init: 1.0,
            generator_lr: 2e-5,
            fake_lr: 1e-4,
            fake_steps: 1,
            batch_size: 1024,
            iterations: 100_000,
            t_lo: 0.1,
            t_hi: 40.0,
            omega_mode: OmegaMode::DmdNormalized,
            fake_weighting: LossWeighting::InverseSigmaSq,
            eval_every: 250,
            eval_samples: 1024,
            seed: 0,
        }
    }
}

impl RdmdConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<(), TensorError> {
        let bad = |msg: String| TensorError::Invalid { op: "rdmd_config", msg };
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(bad(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        for (name, lr) in [("generator_lr", self.generator_lr), ("fake_lr", self.fake_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(bad(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.fake_steps == 0
            || self.batch_size == 0
            || self.iterations == 0
            || self.eval_every == 0
            || self.eval_samples == 0
        {
            return Err(bad("counts (fake_steps, batch, iterations, eval) must be positive".into()));
        }
        if !(self.t_lo > 0.0 && self.t_hi > self.t_lo) {
            return Err(bad(format!("need 0 < t_lo < t_hi, got [{}, {}]", self.t_lo, self.t_hi)));
        }
        if !schedule.contains(self.t_lo) || !schedule.contains(self.t_hi) {
            return Err(bad(format!(
                "t band [{}, {}] leaves the schedule band [{}, {}]",
                self.t_lo, self.t_hi, schedule.sigma_min, schedule.t_max
            )));
        }
        if !schedule.contains(self.sigma_init) {
            return Err(bad(format!("sigma_init {} outside the schedule band", self.sigma_init)));
        }
        Ok(())
    }
}

/// The frozen target score model: either a pretrained network or an
/// analytic distribution whose perturbed score is known in closed form.
#[derive(Debug, Clone)]
pub enum Target {
    Net(DenoiserNet),
    /// Closed-form target; `net_config` sizes the fake model and generator,
    /// which start from fresh random weights (there is no network to copy).
    Analytic { dist: AnalyticDist, net_config: NetConfig },
}

impl Denoise for Target {
    fn denoise_batch(&self, x: &Tensor, sigmas: &[f64]) -> Result<Tensor, TensorError> {
        match self {
            Target::Net(net) => net.denoise_batch(x, sigmas),
            Target::Analytic { dist, .. } => dist.denoise_batch(x, sigmas),
        }
    }
}

/// One metric-log entry of a distillation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub iteration: usize,
    pub fake_loss: f64,
    pub transport_cost_rms: f64,
    pub energy_distance: f64,
}

/// Everything a distillation run produces.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: GeneratorNet,
    pub fake: DenoiserNet,
    pub target: Target,
    pub generator_opt: AdamState,
    pub fake_opt: AdamState,
    pub iteration: usize,
    pub eval_log: Vec<EvalRow>,
}

/// The generator-side surrogate pieces from one batch: the frozen
/// score-difference coefficients, the scalar loss, the generator outputs,
/// and the parameter gradients (canonical parameter order).
#[derive(Debug, Clone)]
pub struct SurrogateParts {
    pub loss: f64,
    pub coeff: Tensor,
    pub generator_out: Tensor,
    pub grads: Vec<Tensor>,
}

fn t_at(ts: &[f64], row: usize) -> f64 {
    ts[if ts.len() == 1 { 0 } else { row }]
}

/// Builds and backpropagates the generator surrogate on one batch:
/// (1/B)·Σ ⟨stop-grad[ω_t(s^fake − s^target)](y_t), G(x)⟩ + λ‖x − G(x)‖²,
/// with y_t = G(x) + σ_t·ε. No gradient flows through either score model.
pub fn generator_gradient(
    generator: &GeneratorNet,
    fake: &dyn Denoise,
    target: &dyn Denoise,
    x: &Tensor,
    ts: &[f64],
    eps: &Tensor,
    lambda: f64,
    omega_mode: OmegaMode,
) -> Result<SurrogateParts, TensorError> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(TensorError::Invalid {
            op: "generator_gradient",
            msg: format!("expected a nonempty (batch, dim) tensor, got {:?}", x.shape()),
        });
    }
    let batch = x.rows();
    let mut tape = Tape::new();
    let bound = generator.bind(&mut tape, true);
    let x_id = tape.constant(x.clone());
    let g_id = generator.forward(&bound, &mut tape, x_id)?;
    let g = tape.value(g_id).clone();

    // Host-side score probes at the noised generator outputs; the results
    // enter the tape only as constants.
    let y = perturb(&g, ts, eps)?;
    let d_fake = fake.denoise_batch(&y, ts)?;
    let d_target = target.denoise_batch(&y, ts)?;
    let omegas = omega_weights(omega_mode, ts, &d_target, &g)?;
    let cols = g.cols();
    let mut coeff_data = Vec::with_capacity(batch * cols);
    for r in 0..batch {
        let t = t_at(ts, r);
        let inv_s2 = 1.0 / (t * t);
        for c in 0..cols {
            let idx = r * cols + c;
            let s_fake = (d_fake.data()[idx] - y.data()[idx]) * inv_s2;
            let s_target = (d_target.data()[idx] - y.data()[idx]) * inv_s2;
            coeff_data.push(omegas[r] * (s_fake - s_target));
        }
    }
    if let Some(bad) = coeff_data.iter().position(|v| !v.is_finite()) {
        let row = bad / cols;
        return Err(TensorError::NonFinite {
            context: format!(
                "score difference at batch row {row} (sigma_t {})",
                t_at(ts, row)
            ),
        });
    }
    let coeff = Tensor::from_raw(vec![batch, cols], coeff_data);

    let coeff_id = tape.constant(coeff.clone());
    let inner = tape.mul(coeff_id, g_id)?;
    let score_term = tape.sum(inner)?;
    let mut loss_id = tape.scale(score_term, 1.0 / batch as f64)?;
    if lambda > 0.0 {
        let diff = tape.sub(x_id, g_id)?;
        let cost = tape.sum_of_squares(diff)?;
        let cost_scaled = tape.scale(cost, lambda / batch as f64)?;
        loss_id = tape.add(loss_id, cost_scaled)?;
    }
    let loss = tape.value(loss_id).item();
    let mut grads = tape.backward(loss_id)?;
    let grad_list = bound.take_grads(&generator.net.params(), &mut grads);
    Ok(SurrogateParts { loss, coeff, generator_out: g, grads: grad_list })
}

/// The surrogate loss at the current generator parameters with the
/// score-difference coefficients held fixed — the scalar whose parameter
/// gradient [`generator_gradient`] computes. Used by finite-difference
/// checks.
pub fn surrogate_loss_frozen(
    generator: &GeneratorNet,
    x: &Tensor,
    coeff: &Tensor,
    lambda: f64,
) -> Result<f64, TensorError> {
    let g = generator.eval_batch(x)?;
    if g.shape() != coeff.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "surrogate_loss",
            lhs: g.shape().to_vec(),
            rhs: coeff.shape().to_vec(),
        });
    }
    let batch = x.rows() as f64;
    let score: f64 = coeff.data().iter().zip(g.data()).map(|(c, gv)| c * gv).sum();
    let cost: f64 = x.data().iter().zip(g.data()).map(|(xv, gv)| (xv - gv) * (xv - gv)).sum();
    Ok(score / batch + lambda * cost / batch)
}

/// One denoising-score-matching Adam step of the fake model, regressing it
/// onto the generator outputs `gen_out` (treated as fixed data). Returns
/// the pre-update loss.
pub fn fake_update(
    fake: &mut DenoiserNet,
    fake_opt: &mut AdamState,
    gen_out: &Tensor,
    ts: &[f64],
    eps: &Tensor,
    weighting: &LossWeighting,
    lr: f64,
) -> Result<f64, TensorError> {
    dsm_step(fake, fake_opt, gen_out, ts, eps, weighting, lr)
}

/// Flags sustained blow-up of a smoothed loss: diverged once the
/// exponentially smoothed loss has exceeded `factor` times its initial
/// value for `patience` consecutive observations.
#[derive(Debug, Clone)]
pub struct DivergenceMonitor {
    factor: f64,
    patience: usize,
    decay: f64,
    initial: Option<f64>,
    smoothed: f64,
    consecutive: usize,
}

impl DivergenceMonitor {
    pub fn new(factor: f64, patience: usize, decay: f64) -> DivergenceMonitor {
        DivergenceMonitor { factor, patience, decay, initial: None, smoothed: 0.0, consecutive: 0 }
    }

    /// Feeds one loss value; true means the run should abort.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.initial {
            None => {
                self.initial = Some(loss.max(f64::MIN_POSITIVE));
                self.smoothed = loss;
                false
            }
            Some(initial) => {
                self.smoothed = self.decay * self.smoothed + (1.0 - self.decay) * loss;
                if self.smoothed > self.factor * initial {
                    self.consecutive += 1;
                } else {
                    self.consecutive = 0;
                }
                self.consecutive >= self.patience
            }
        }
    }

    pub fn smoothed(&self) -> f64 {
        self.smoothed
    }
}

fn draw_t(lo: f64, hi: f64, rng: &mut Rng) -> f64 {
    rng.uniform_in(lo.ln(), hi.ln()).exp()
}

/// Runs the full alternating distillation loop against a frozen target.
/// `sample_source(n, rng)` supplies source batches. Deterministic given the
/// config seed and the sampler.
pub fn train_rdmd(
    config: &RdmdConfig,
    mut sample_source: impl FnMut(usize, &mut Rng) -> Tensor,
    target: Target,
    schedule: &NoiseSchedule,
) -> Result<TrainState, TensorError> {
    config.validate(schedule)?;
    let root = Rng::new(config.seed);
    let mut src_rng = root.split("rdmd-source");
    let mut fake_src_rng = root.split("rdmd-fake-source");
    let mut t_rng = root.split("rdmd-t");
    let mut fake_t_rng = root.split("rdmd-fake-t");
    let mut noise_rng = root.split("rdmd-noise");
    let mut fake_noise_rng = root.split("rdmd-fake-noise");

    // Initialize the student pair from the target: exact copies when the
    // target is a network, fresh random networks when it is analytic.
    let (mut generator, mut fake) = match &target {
        Target::Net(net) => {
            (init_generator_from(net, config.sigma_init, schedule)?, net.clone())
        }
        Target::Analytic { dist, net_config } => {
            if dist.dim() != net_config.input_dim {
                return Err(TensorError::Invalid {
                    op: "train_rdmd",
                    msg: format!(
                        "target dimension {} vs net input_dim {}",
                        dist.dim(),
                        net_config.input_dim
                    ),
                });
            }
            let gen_net =
                DenoiserNet::init(net_config.clone(), &mut root.split("rdmd-generator-init"))?;
            let fake_net = DenoiserNet::init(net_config.clone(), &mut root.split("rdmd-fake-init"))?;
            (GeneratorNet { net: gen_net, sigma_init: config.sigma_init }, fake_net)
        }
    };
    let dim = generator.net.config.input_dim;

    // Fixed evaluation panel and target reference set for the metric log.
    let mut eval_rng = root.split("rdmd-eval");
    let eval_x = sample_source(config.eval_samples, &mut eval_rng);
    let target_ref = match &target {
        Target::Net(net) => {
            let mut ref_rng = root.split("rdmd-target-ref");
            crate::diffusion::pf_ode_sample(net, schedule, config.eval_samples, dim, 64, &mut ref_rng)?.1
        }
        Target::Analytic { dist, .. } => {
            let mut ref_rng = root.split("rdmd-target-ref");
            dist.sample(config.eval_samples, &mut ref_rng)
        }
    };

    let mut generator_opt = AdamState::new(&generator.net.params());
    let mut fake_opt = AdamState::new(&fake.params());
    let mut monitor = DivergenceMonitor::new(10.0, 500, 0.99);
    let mut eval_log = Vec::new();
    let mut last_fake_loss = f64::NAN;

    for iter in 0..config.iterations {
        for _ in 0..config.fake_steps {
            let x = sample_source(config.batch_size, &mut fake_src_rng);
            let gen_out = generator.eval_batch(&x)?;
            let ts: Vec<f64> = (0..config.batch_size)
                .map(|_| draw_t(config.t_lo, config.t_hi, &mut fake_t_rng))
                .collect();
            let eps =
                Tensor::from_raw(gen_out.shape().to_vec(), fake_noise_rng.normal_vec(gen_out.len()));
            let loss = fake_update(
                &mut fake,
                &mut fake_opt,
                &gen_out,
                &ts,
                &eps,
                &config.fake_weighting,
                config.fake_lr,
            )?;
            if !loss.is_finite() {
                return Err(TensorError::NonFinite {
                    context: format!("fake loss {loss} at iteration {iter}"),
                });
            }
            if monitor.observe(loss) {
                return Err(TensorError::Invalid {
                    op: "train_rdmd",
                    msg: format!(
                        "fake loss diverged at iteration {iter}: smoothed {:.6} stayed above 10x the initial value for 500 iterations",
                        monitor.smoothed()
                    ),
                });
            }
            last_fake_loss = loss;
        }

        let x = sample_source(config.batch_size, &mut src_rng);
        let ts: Vec<f64> = (0..config.batch_size)
            .map(|_| draw_t(config.t_lo, config.t_hi, &mut t_rng))
            .collect();
        let eps = Tensor::from_raw(vec![config.batch_size, dim], noise_rng.normal_vec(config.batch_size * dim));
        let parts = generator_gradient(
            &generator,
            &fake,
            &target,
            &x,
            &ts,
            &eps,
            config.lambda,
            config.omega_mode,
        )?;
        let mut params = generator.net.params_mut();
        adam_step(&mut params, &parts.grads, &mut generator_opt, config.generator_lr)?;

        if iter % config.eval_every == 0 || iter + 1 == config.iterations {
            let gen_eval = generator.eval_batch(&eval_x)?;
            let pairs = PairSet::new(eval_x.clone(), gen_eval.clone())?;
            eval_log.push(EvalRow {
                iteration: iter,
                fake_loss: last_fake_loss,
                transport_cost_rms: transport_cost_rms(&pairs),
                energy_distance: energy_distance(&gen_eval, &target_ref)?,
            });
        }
    }

    Ok(TrainState {
        generator,
        fake,
        target,
        generator_opt,
        fake_opt,
        iteration: config.iterations,
        eval_log,
    })
}

/// A linear one-step generator G(x) = x·W on row points.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGenerator {
    /// Square (d, d) weight.
    pub weight: Tensor,
}

impl LinearGenerator {
    pub fn identity(dim: usize) -> LinearGenerator {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        LinearGenerator { weight: Tensor::from_raw(vec![dim, dim], data) }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    /// Applies the map to a batch of row points.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let d = self.dim();
        if x.rank() != 2 || x.cols() != d {
            return Err(TensorError::Invalid {
                op: "linear_apply",
                msg: format!("expected (n, {d}) points, got {:?}", x.shape()),
            });
        }
        let out = kernels::matmul_nn(x.data(), self.weight.data(), x.rows(), d, d);
        Ok(Tensor::from_raw(vec![x.rows(), d], out))
    }
}

/// Mean relative action error of the linear map against pure scaling:
/// mean over rows of ‖x·W − scale·x‖ / ‖scale·x‖.
pub fn mean_relative_map_error(
    weight: &Tensor,
    scale: f64,
    test_points: &Tensor,
) -> Result<f64, TensorError> {
    let gen = LinearGenerator { weight: weight.clone() };
    let mapped = gen.apply(test_points)?;
    let mut acc = 0.0;
    for r in 0..test_points.rows() {
        let (mut err, mut norm) = (0.0, 0.0);
        for (xv, gv) in test_points.row(r).iter().zip(mapped.row(r)) {
            let want = scale * xv;
            err += (gv - want) * (gv - want);
            norm += want * want;
        }
        acc += (err / norm.max(1e-24)).sqrt();
    }
    Ok(acc / test_points.rows() as f64)
}

/// Stochastic surrogate gradient for the linear generator on the fully
/// Gaussian problem, with both scores in closed form: the fake score is the
/// exact current-pushforward score of N(0, WᵀW + t²·I) and the target score
/// that of N(0, (σ_target² + t²)·I). Source points x ~ N(0, I). Returns the
/// (d, d) gradient averaged over the batch. Two-dimensional only.
pub fn linear_generator_gradient(
    gen: &LinearGenerator,
    sigma_target: f64,
    lambda: f64,
    x: &Tensor,
    ts: &[f64],
    eps: &Tensor,
    omega_mode: OmegaMode,
) -> Result<Tensor, TensorError> {
    if gen.dim() != 2 {
        return Err(TensorError::Invalid {
            op: "linear_generator_gradient",
            msg: format!("closed-form scores are implemented for d=2, got d={}", gen.dim()),
        });
    }
    if x.shape() != eps.shape() || x.rank() != 2 || x.cols() != 2 || x.rows() == 0 {
        return Err(TensorError::Invalid {
            op: "linear_generator_gradient",
            msg: format!("need matching nonempty (n, 2) x and eps, got {:?} / {:?}", x.shape(), eps.shape()),
        });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(TensorError::Invalid {
            op: "linear_generator_gradient",
            msg: format!("lambda must be nonnegative, got {lambda}"),
        });
    }
    let w = gen.weight.data();
    // Gram matrix WᵀW, the pushforward covariance before noise.
    let gram = [
        w[0] * w[0] + w[2] * w[2],
        w[0] * w[1] + w[2] * w[3],
        w[1] * w[1] + w[3] * w[3],
    ];
    let tgt2 = sigma_target * sigma_target;
    let batch = x.rows();
    let mut grad = [0.0f64; 4];
    for r in 0..batch {
        let t = t_at(ts, r);
        let t2 = t * t;
        let xr = x.row(r);
        let er = eps.row(r);
        let g = [w[0] * xr[0] + w[2] * xr[1], w[1] * xr[0] + w[3] * xr[1]];
        let y = [g[0] + t * er[0], g[1] + t * er[1]];
        // Fake score: −(WᵀW + t²I)⁻¹ y via the 2×2 inverse.
        let (a, b, c) = (gram[0] + t2, gram[1], gram[2] + t2);
        let det = a * c - b * b;
        let s_fake = [-(c * y[0] - b * y[1]) / det, -(a * y[1] - b * y[0]) / det];
        let inv_tgt = 1.0 / (tgt2 + t2);
        let s_tgt = [-y[0] * inv_tgt, -y[1] * inv_tgt];
        let omega = match omega_mode {
            OmegaMode::SigmaSqConstant => t2,
            OmegaMode::DmdNormalized => {
                // D^target(y) = y + t²·s_target.
                let d0 = y[0] + t2 * s_tgt[0];
                let d1 = y[1] + t2 * s_tgt[1];
                let l1 = (d0 - g[0]).abs() + (d1 - g[1]).abs();
                t2 * 2.0 / l1.max(1e-8)
            }
        };
        let coeff = [omega * (s_fake[0] - s_tgt[0]), omega * (s_fake[1] - s_tgt[1])];
        // ∂⟨coeff, xW⟩/∂W_ij = x_i·coeff_j; ∂λ‖x−xW‖²/∂W_ij = 2λ·x_i·(xW−x)_j.
        for i in 0..2 {
            for j in 0..2 {
                grad[i * 2 + j] +=
                    xr[i] * coeff[j] + 2.0 * lambda * xr[i] * (g[j] - xr[j]);
            }
        }
    }
    let scale = 1.0 / batch as f64;
    Ok(Tensor::from_raw(vec![2, 2], grad.iter().map(|v| v * scale).collect()))
}

/// Hyperparameters for the closed-form linear-generator trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRdmdConfig {
    pub lambda: f64,
    pub sigma_target: f64,
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub omega_mode: OmegaMode,
    /// Tail window over which iterates are averaged for the reported map.
    pub polyak_window: usize,
    pub seed: u64,
}

impl Default for LinearRdmdConfig {
    fn default() -> LinearRdmdConfig {
        LinearRdmdConfig {
            lambda: 0.2,
            sigma_target: 1.5,
            lr: 5e-3,
            iterations: 20_000,
            batch_size: 128,
            t_lo: 0.1,
            t_hi: 40.0,
            omega_mode: OmegaMode::SigmaSqConstant,
            polyak_window: 2_000,
            seed: 0,
        }
    }
}

/// A finished linear run: the last iterate and the tail average.
#[derive(Debug, Clone)]
pub struct LinearRdmdRun {
    pub final_weight: Tensor,
    pub averaged_weight: Tensor,
}

/// Trains the 2×2 linear generator on the fully Gaussian problem
/// N(0, I) → N(0, σ_target²·I) with exact scores on both sides, Adam, and
/// tail averaging. Starts from the identity map.
pub fn train_linear_rdmd(config: &LinearRdmdConfig) -> Result<LinearRdmdRun, TensorError> {
    if config.iterations == 0 || config.batch_size == 0 || config.polyak_window == 0 {
        return Err(TensorError::Invalid {
            op: "train_linear_rdmd",
            msg: "iterations, batch_size, and polyak_window must be positive".into(),
        });
    }
    if !(config.t_lo > 0.0 && config.t_hi > config.t_lo) {
        return Err(TensorError::Invalid {
            op: "train_linear_rdmd",
            msg: format!("need 0 < t_lo < t_hi, got [{}, {}]", config.t_lo, config.t_hi),
        });
    }
    let root = Rng::new(config.seed);
    let mut src_rng = root.split("linear-source");
    let mut t_rng = root.split("linear-t");
    let mut noise_rng = root.split("linear-noise");
    let mut gen = LinearGenerator::identity(2);
    let mut opt = AdamState::new(&[&gen.weight]);
    let window = config.polyak_window.min(config.iterations);
    let mut tail_sum = [0.0f64; 4];
    for iter in 0..config.iterations {
        let x = Tensor::from_raw(vec![config.batch_size, 2], src_rng.normal_vec(config.batch_size * 2));
        let eps =
            Tensor::from_raw(vec![config.batch_size, 2], noise_rng.normal_vec(config.batch_size * 2));
        let ts: Vec<f64> =
            (0..config.batch_size).map(|_| draw_t(config.t_lo, config.t_hi, &mut t_rng)).collect();
        let grad = linear_generator_gradient(
            &gen,
            config.sigma_target,
            config.lambda,
            &x,
            &ts,
            &eps,
            config.omega_mode,
        )?;
        if !grad.all_finite() {
            return Err(TensorError::NonFinite {
                context: format!("linear generator gradient at iteration {iter}"),
            });
        }
        adam_step(&mut [&mut gen.weight], &[grad], &mut opt, config.lr)?;
        if iter + window >= config.iterations {
            for (acc, v) in tail_sum.iter_mut().zip(gen.weight.data()) {
                *acc += v;
            }
        }
    }
    let averaged = Tensor::from_raw(
        vec![2, 2],
        tail_sum.iter().map(|v| v / window as f64).collect(),
    );
    Ok(LinearRdmdRun { final_weight: gen.weight, averaged_weight: averaged })
}
