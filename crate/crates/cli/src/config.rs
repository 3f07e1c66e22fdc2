//! Experiment configuration: a strict TOML document mirroring the core
//! library's config structs.
//!
//! Unknown keys are rejected everywhere (a typo like `lamda` fails the
//! parse with the offending key named), and every run echoes its fully
//! resolved config next to its outputs before any training starts, so a
//! crashed run still leaves a complete record of what it was doing.

use crate::error::{io_err, HarnessError};

use rdmd_core::data::{DataSpec, EightGaussiansSpec};
use rdmd_core::diffusion::{DsmConfig, LossWeighting, SigmaSampling};
use rdmd_core::distill::{OmegaMode, RdmdConfig};
use rdmd_core::net::NetConfig;
use rdmd_core::schedule::NoiseSchedule;

use serde::{Deserialize, Serialize};

use std::path::Path;

/// Root of the config document. Every field has a default, so an empty
/// file is a valid (if slow — 100k-iteration) experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; all substreams derive from it.
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub network: NetworkSection,
    pub dsm: DsmSection,
    pub rdmd: RdmdSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

/// Noise-schedule band and sampler grid exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub sigma_min: f64,
    pub t_max: f64,
    pub rho: f64,
}

impl Default for ScheduleSection {
    fn default() -> ScheduleSection {
        let s = NoiseSchedule::default();
        ScheduleSection { sigma_min: s.sigma_min, t_max: s.t_max, rho: s.rho }
    }
}

/// Denoiser architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub input_dim: usize,
    pub encoder_dims: Vec<usize>,
    pub decoder_dims: Vec<usize>,
    pub embed_dim: usize,
    pub leaky_slope: f64,
    /// Data scale of the σ-dependent skip parameterization; 0 disables the
    /// skip and makes the network emit its decoder output directly.
    pub sigma_data: f64,
}

impl Default for NetworkSection {
    fn default() -> NetworkSection {
        let c = NetConfig::default();
        NetworkSection {
            input_dim: c.input_dim,
            encoder_dims: c.encoder_dims,
            decoder_dims: c.decoder_dims,
            embed_dim: c.embed_dim,
            leaky_slope: c.leaky_slope,
            sigma_data: c.sigma_data.unwrap_or(0.0),
        }
    }
}

/// How σ is drawn for each score-matching row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSamplingSection {
    LogUniform,
    LogNormal { location: f64, scale: f64 },
}

impl SigmaSamplingSection {
    fn to_core(&self) -> SigmaSampling {
        match *self {
            SigmaSamplingSection::LogUniform => SigmaSampling::LogUniform,
            SigmaSamplingSection::LogNormal { location, scale } => {
                SigmaSampling::LogNormal { location, scale }
            }
        }
    }
}

/// Learning-rate profile over the pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrScheduleSection {
    Constant,
    WarmupCosine { warmup: usize },
}

impl LrScheduleSection {
    fn to_core(&self) -> LrSchedule {
        match *self {
            LrScheduleSection::Constant => LrSchedule::Constant,
            LrScheduleSection::WarmupCosine { warmup } => LrSchedule::WarmupCosine { warmup },
        }
    }
}

/// β(σ) weighting of the denoising regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingSection {
    InverseSigmaSq,
    Uniform,
}

impl WeightingSection {
    fn to_core(self) -> LossWeighting {
        match self {
            WeightingSection::InverseSigmaSq => LossWeighting::InverseSigmaSq,
            WeightingSection::Uniform => LossWeighting::Uniform,
        }
    }
}

/// Score-matching pretraining hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsmSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sigma_sampling: SigmaSamplingSection,
    pub weighting: WeightingSection,
    pub log_every: usize,
}

impl Default for DsmSection {
    fn default() -> DsmSection {
        let c = DsmConfig::default();
        DsmSection {
            iterations: c.iterations,
            batch_size: c.batch_size,
            lr: c.lr,
            sigma_sampling: SigmaSamplingSection::LogUniform,
            weighting: WeightingSection::InverseSigmaSq,
            log_every: c.log_every,
        }
    }
}

/// Weighting ω_t of the score-difference term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaModeSection {
    DmdNormalized,
    SigmaSqConstant,
}

impl OmegaModeSection {
    fn to_core(self) -> OmegaMode {
        match self {
            OmegaModeSection::DmdNormalized => OmegaMode::DmdNormalized,
            OmegaModeSection::SigmaSqConstant => OmegaMode::SigmaSqConstant,
        }
    }
}

/// Distillation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdmdSection {
    pub lambda: f64,
    pub sigma_init: f64,
    pub generator_lr: f64,
    pub fake_lr: f64,
    pub fake_steps: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub omega_mode: OmegaModeSection,
    pub fake_weighting: WeightingSection,
    pub eval_every: usize,
    pub eval_samples: usize,
}

impl Default for RdmdSection {
    fn default() -> RdmdSection {
        let c = RdmdConfig::default();
        RdmdSection {
            lambda: c.lambda,
            sigma_init: c.sigma_init,
            generator_lr: c.generator_lr,
            fake_lr: c.fake_lr,
            fake_steps: c.fake_steps,
            batch_size: c.batch_size,
            iterations: c.iterations,
            t_lo: c.t_lo,
            t_hi: c.t_hi,
            omega_mode: OmegaModeSection::DmdNormalized,
            fake_weighting: WeightingSection::InverseSigmaSq,
            eval_every: c.eval_every,
            eval_samples: c.eval_samples,
        }
    }
}

/// Which law the diffusion model is trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetLawSection {
    UnitGaussian,
    EightGaussians {
        #[serde(default = "default_ring_radius")]
        radius: f64,
        #[serde(default = "default_ring_std")]
        component_std: f64,
    },
}

fn default_ring_radius() -> f64 {
    EightGaussiansSpec::default().radius
}

fn default_ring_std() -> f64 {
    EightGaussiansSpec::default().component_std
}

impl TargetLawSection {
    pub fn to_core(&self) -> DataSpec {
        match *self {
            TargetLawSection::UnitGaussian => DataSpec::UnitGaussian,
            TargetLawSection::EightGaussians { radius, component_std } => {
                DataSpec::EightGaussians(EightGaussiansSpec { radius, component_std })
            }
        }
    }
}

/// Data selection. The translation source is always the unit Gaussian;
/// this section picks the target law for diffusion pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub target: TargetLawSection,
}

impl Default for DataSection {
    fn default() -> DataSection {
        DataSection {
            target: TargetLawSection::EightGaussians {
                radius: default_ring_radius(),
                component_std: default_ring_std(),
            },
        }
    }
}

/// Evaluation-pass sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Held-out source points for the final pair set and metric reports.
    pub samples: usize,
    /// Random directions in the sliced quadratic-transport metric.
    pub sliced_projections: usize,
    /// Pair subsample for the crossing count.
    pub crossing_subsample: usize,
    /// Heun steps when sampling a trained target for reference sets.
    pub pf_ode_steps: usize,
}

impl Default for EvalSection {
    fn default() -> EvalSection {
        EvalSection {
            samples: 5000,
            sliced_projections: 128,
            crossing_subsample: 1000,
            pf_ode_steps: 64,
        }
    }
}

/// Default output location, overridable with `--out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> OutputSection {
        OutputSection { dir: "runs".into() }
    }
}

impl ExperimentConfig {
    /// Parses and cross-validates a config file. Parse errors name the
    /// offending key and location; validation errors name the field.
    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        config
            .validate()
            .map_err(|message| HarnessError::Config { path: path.to_path_buf(), message })?;
        Ok(config)
    }

    /// Runs the core validators over every derived config.
    pub fn validate(&self) -> Result<(), String> {
        let schedule = self.to_schedule().map_err(|e| e.to_string())?;
        if !(self.network.sigma_data.is_finite() && self.network.sigma_data >= 0.0) {
            return Err(format!(
                "network.sigma_data must be a nonnegative finite number (0 disables the skip parameterization), got {}",
                self.network.sigma_data
            ));
        }
        self.to_net_config().validate().map_err(|e| e.to_string())?;
        self.to_dsm_config().validate().map_err(|e| e.to_string())?;
        self.to_rdmd_config().validate(&schedule).map_err(|e| e.to_string())?;
        Ok(())
    }

    /// The fully resolved document as canonical TOML — what gets echoed
    /// next to run outputs and hashed into checkpoints.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_schedule(&self) -> Result<NoiseSchedule, HarnessError> {
        let s = &self.schedule;
        let mut schedule = NoiseSchedule::new(s.t_max, s.sigma_min)?;
        if !(s.rho.is_finite() && s.rho >= 1.0) {
            return Err(HarnessError::Invalid {
                message: format!("schedule.rho must be finite and >= 1, got {}", s.rho),
            });
        }
        schedule.rho = s.rho;
        Ok(schedule)
    }

    pub fn to_net_config(&self) -> NetConfig {
        let n = &self.network;
        NetConfig {
            input_dim: n.input_dim,
            encoder_dims: n.encoder_dims.clone(),
            decoder_dims: n.decoder_dims.clone(),
            embed_dim: n.embed_dim,
            leaky_slope: n.leaky_slope,
            sigma_data: (n.sigma_data > 0.0).then_some(n.sigma_data),
        }
    }

    pub fn to_dsm_config(&self) -> DsmConfig {
        let d = &self.dsm;
        DsmConfig {
            iterations: d.iterations,
            batch_size: d.batch_size,
            lr: d.lr,
            sigma_sampling: d.sigma_sampling.to_core(),
            weighting: d.weighting.to_core(),
            log_every: d.log_every,
            seed: self.seed,
        }
    }

    pub fn to_rdmd_config(&self) -> RdmdConfig {
        let r = &self.rdmd;
        RdmdConfig {
            lambda: r.lambda,
            sigma_init: r.sigma_init,
            generator_lr: r.generator_lr,
            fake_lr: r.fake_lr,
            fake_steps: r.fake_steps,
            batch_size: r.batch_size,
            iterations: r.iterations,
            t_lo: r.t_lo,
            t_hi: r.t_hi,
            omega_mode: r.omega_mode.to_core(),
            fake_weighting: r.fake_weighting.to_core(),
            eval_every: r.eval_every,
            eval_samples: r.eval_samples,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_core_library() {
        let config = ExperimentConfig::default();
        assert_eq!(config.to_dsm_config(), DsmConfig::default());
        assert_eq!(config.to_rdmd_config(), RdmdConfig::default());
        assert_eq!(config.to_net_config(), NetConfig::default());
        assert_eq!(config.to_schedule().unwrap(), NoiseSchedule::default());
    }

    #[test]
    fn resolved_echo_round_trips() {
        let mut config = ExperimentConfig::default();
        config.seed = 77;
        config.rdmd.lambda = 0.05;
        config.dsm.sigma_sampling =
            SigmaSamplingSection::LogNormal { location: -1.2, scale: 1.2 };
        let text = config.resolved_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = toml::from_str::<ExperimentConfig>("[rdmd]\nlamda = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn unknown_section_is_rejected() {
        let err = toml::from_str::<ExperimentConfig>("[rdm]\nlambda = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("rdm"), "{err}");
    }

    #[test]
    fn partial_documents_fill_in_defaults() {
        let config: ExperimentConfig =
            toml::from_str("seed = 3\n[rdmd]\nlambda = 1.0\n").unwrap();
        assert_eq!(config.seed, 3);
        assert_eq!(config.rdmd.lambda, 1.0);
        assert_eq!(config.rdmd.generator_lr, RdmdConfig::default().generator_lr);
        assert_eq!(config.dsm.iterations, DsmConfig::default().iterations);
    }

    #[test]
    fn validation_rejects_bad_schedule() {
        let mut config = ExperimentConfig::default();
        config.schedule.sigma_min = -1.0;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::default();
        config.schedule.rho = 0.0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn data_section_parses_both_laws() {
        let config: ExperimentConfig =
            toml::from_str("[data]\ntarget = { kind = \"unit_gaussian\" }\n").unwrap();
        assert_eq!(config.data.target.to_core(), DataSpec::UnitGaussian);
        let config: ExperimentConfig = toml::from_str(
            "[data]\ntarget = { kind = \"eight_gaussians\", radius = 4.0 }\n",
        )
        .unwrap();
        match config.data.target.to_core() {
            DataSpec::EightGaussians(spec) => {
                assert_eq!(spec.radius, 4.0);
                assert_eq!(spec.component_std, EightGaussiansSpec::default().component_std);
            }
            other => panic!("unexpected law {other:?}"),
        }
    }
}
