//! Command-line entry point for the distillation laboratory.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use rdmd_cli::config::{EvalSection, ExperimentConfig};
use rdmd_cli::runs::{self, TargetSource};

#[derive(Parser)]
#[command(
    name = "rdmd",
    about = "Distribution-matching distillation lab: diffusion pretraining, one-step distillation with transport-cost regularization, and analytic diagnostics on 2D targets.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

/// Either a pretrained target checkpoint or a closed-form target law.
#[derive(Args, Clone)]
struct TargetArgs {
    /// Path to a pretrained denoiser checkpoint to distill from.
    #[arg(long, value_name = "CKPT", conflicts_with = "analytic_target")]
    target: Option<PathBuf>,
    /// Closed-form target instead of a checkpoint: `unit-gaussian`,
    /// `gaussian:variance=V`, or `eight-gaussians[:radius=R,std=S]`.
    #[arg(long, value_name = "SPEC")]
    analytic_target: Option<String>,
}

impl TargetArgs {
    fn resolve(&self) -> Result<TargetSource> {
        match (&self.target, &self.analytic_target) {
            (Some(path), None) => Ok(TargetSource::Checkpoint(path.clone())),
            (None, Some(spec)) => Ok(TargetSource::Analytic(spec.clone())),
            (None, None) => bail!("pass exactly one of --target or --analytic-target"),
            (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the diffusion denoiser on the configured target law.
    TrainDiffusion {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Distill a target into a one-step generator.
    TrainRdmd {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        /// Overrides the config's transport-cost coefficient.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate the analytic objective of rotation/scale generators over
    /// an (r, alpha) grid, one CSV + heatmap per lambda.
    Surface {
        /// Optional config supplying the noise schedule (defaults apply
        /// otherwise).
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Transport-cost coefficients (repeatable).
        #[arg(long = "lambda", value_name = "F64")]
        lambdas: Vec<f64>,
        /// Standard deviation of the centered Gaussian target law.
        #[arg(long, default_value_t = 1.5)]
        sigma_target: f64,
        /// Grid resolution per axis (at least 8).
        #[arg(long, default_value_t = 64)]
        grid_n: usize,
        #[arg(long, default_value_t = 0.5)]
        r_min: f64,
        #[arg(long, default_value_t = 2.5)]
        r_max: f64,
        #[arg(long, default_value_t = -std::f64::consts::PI)]
        alpha_min: f64,
        #[arg(long, default_value_t = std::f64::consts::PI)]
        alpha_max: f64,
        /// Simpson subintervals for the noise-level integral.
        #[arg(long, default_value_t = 256)]
        quadrature: usize,
    },
    /// Report translation metrics for a trained generator on fresh data.
    Eval {
        /// Generator checkpoint to evaluate.
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        /// Seed for the fresh source/reference draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Optional config supplying the eval section (sample counts).
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
    },
    /// Render a pair-set CSV (plus optional reference samples) to SVG.
    Plot {
        /// Pair CSV: x coordinates, then G(x) coordinates.
        #[arg(long, value_name = "CSV")]
        pairs: PathBuf,
        /// Optional reference sample CSV drawn in a third color.
        #[arg(long, value_name = "CSV")]
        reference: Option<PathBuf>,
        /// Output SVG path.
        #[arg(long, value_name = "SVG")]
        out: PathBuf,
        #[arg(long, default_value = "translation map")]
        title: String,
    },
    /// Train one generator per lambda (shared seed) and tabulate the
    /// cost/fidelity tradeoff.
    Sweep {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        /// Transport-cost coefficients, one run each (repeatable).
        #[arg(long = "lambda", value_name = "F64", required = true)]
        lambdas: Vec<f64>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config =
        ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::TrainDiffusion { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let outcome = runs::cmd_train_diffusion(&config, &out)?;
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("loss log:   {}", outcome.loss_csv.display());
            println!("final loss: {}", outcome.final_loss);
            for (sigma, rel) in &outcome.score_errors {
                println!("score rel L2 at sigma {sigma}: {rel:.6}");
            }
        }
        Cmd::TrainRdmd { config, seed, out, target, lambda } => {
            let mut config = load_config(&config, seed)?;
            if let Some(lambda) = lambda {
                config.rdmd.lambda = lambda;
            }
            let outcome = runs::cmd_train_rdmd(&config, &target.resolve()?, &out)?;
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("pairs:      {}", outcome.pairs_csv.display());
            let m = &outcome.metrics;
            println!(
                "lambda {}: transport_cost_rms {:.6}, energy_distance {:.6}, sliced_w2 {:.6}, crossings {}",
                m.lambda, m.transport_cost_rms, m.energy_distance, m.sliced_w2, m.crossing_count
            );
        }
        Cmd::Surface {
            config,
            out,
            lambdas,
            sigma_target,
            grid_n,
            r_min,
            r_max,
            alpha_min,
            alpha_max,
            quadrature,
        } => {
            let schedule = match config {
                Some(path) => load_config(&path, None)?.to_schedule()?,
                None => Default::default(),
            };
            let lambdas = if lambdas.is_empty() { vec![0.0, 0.2] } else { lambdas };
            let outcome = runs::cmd_surface(
                &schedule,
                sigma_target,
                (r_min, r_max),
                (alpha_min, alpha_max),
                grid_n,
                &lambdas,
                quadrature,
                &out,
            )?;
            for row in &outcome.summary {
                println!(
                    "lambda {}: argmin r {:.4}, alpha {:.4}, objective {:.6}",
                    row.lambda, row.argmin_r, row.argmin_alpha, row.min_total
                );
            }
            println!("summary: {}", outcome.summary_csv.display());
        }
        Cmd::Eval { checkpoint, target, seed, out, config } => {
            let eval: EvalSection = match config {
                Some(path) => load_config(&path, None)?.eval,
                None => EvalSection::default(),
            };
            let outcome = runs::cmd_eval(&checkpoint, &target.resolve()?, seed, &eval, &out)?;
            let m = &outcome.metrics;
            println!(
                "{}: transport_cost_rms {:.6}, energy_distance {:.6}, sliced_w2 {:.6}, crossings {}",
                m.label, m.transport_cost_rms, m.energy_distance, m.sliced_w2, m.crossing_count
            );
            println!("report:  {}", outcome.report_txt.display());
            println!("metrics: {}", outcome.metrics_csv.display());
        }
        Cmd::Plot { pairs, reference, out, title } => {
            runs::cmd_plot(&pairs, reference.as_deref(), &out, &title)?;
            println!("figure: {}", out.display());
        }
        Cmd::Sweep { config, seed, out, target, lambdas } => {
            let config = load_config(&config, seed)?;
            let outcome = runs::cmd_sweep(&config, &target.resolve()?, &lambdas, &out)?;
            for row in &outcome.rows {
                println!(
                    "lambda {}: transport_cost_rms {:.6}, energy_distance {:.6}, sliced_w2 {:.6}, crossings {}",
                    row.lambda,
                    row.transport_cost_rms,
                    row.energy_distance,
                    row.sliced_w2,
                    row.crossing_count
                );
            }
            println!("metrics table: {}", outcome.metrics_csv.display());
        }
    }
    Ok(())
}
