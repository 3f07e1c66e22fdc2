//! Desk-scale laboratory for distilling 2D diffusion models into one-step
//! generators with a transport-cost regularizer.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`] / [`tape`] / [`optim`]: a minimal float64 reverse-mode
//!   autodiff engine (the op set is exactly what the networks need) and Adam.
//! - [`rng`]: counter-based deterministic random numbers with labeled
//!   substreams, so every experiment is a pure function of its seed.
//! - [`net`]: the denoiser MLP (input encoder, sinusoidal time encoder,
//!   decoder) and the one-step generator initialized from it.
//! - [`schedule`] / [`diffusion`]: variance-exploding noise schedule,
//!   denoising score matching, and a Heun probability-flow ODE sampler.
//! - [`oracle`]: closed-form Gaussian machinery — perturbed scores, KL,
//!   the rotation/scale pushforward surface, and the Gaussian optimal
//!   transport map — used to validate everything trained.
//! - [`data`] / [`metrics`]: the source/target samplers (unit Gaussian,
//!   eight-Gaussians ring) and evaluation metrics.
//! - [`distill`]: the distillation trainer — alternating fake-score and
//!   generator updates, with the transport-cost term weighted by lambda.

pub mod data;
pub mod diffusion;
pub mod distill;
mod kernels;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod schedule;
pub mod tape;
pub mod tensor;

pub use tensor::{Tensor, TensorError};
