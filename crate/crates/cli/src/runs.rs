//! The experiment commands: diffusion pretraining, distillation, analytic
//! surfaces, evaluation, plotting, and λ-sweeps.
//!
//! Every command is a pure function of (config, seed, input files): it
//! writes its fully resolved config before any training starts, derives
//! all randomness from labeled substreams of the master seed, and emits
//! byte-identical artifacts on re-run. Elapsed time goes to stderr only,
//! never into an artifact.

use crate::checkpoint::{fnv1a64, Checkpoint, CheckpointKind};
use crate::config::ExperimentConfig;
use crate::csv;
use crate::error::{io_err, HarnessError};
use crate::svg;

use rdmd_core::data::{sample_source_gaussian, DataSpec, EightGaussiansSpec, PairSet};
use rdmd_core::diffusion::{pf_ode_sample, train_dsm};
use rdmd_core::distill::{train_rdmd, Target};
use rdmd_core::metrics::{crossing_count, energy_distance, sliced_w2, transport_cost_rms};
use rdmd_core::net::{DenoiserNet, GeneratorNet};
use rdmd_core::oracle::{
    perturbed_score, rdmd_surface, AnalyticDist, GaussianDist, RotScaleGenerator, SurfaceValue,
    SurfaceWeight,
};
use rdmd_core::rng::Rng;
use rdmd_core::schedule::NoiseSchedule;
use rdmd_core::Tensor;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Where a distillation target comes from: a pretrained checkpoint or a
/// closed-form law.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSource {
    Checkpoint(PathBuf),
    Analytic(String),
}

/// Parses an analytic-target spec string:
/// `unit-gaussian`, `gaussian:variance=V`, or
/// `eight-gaussians[:radius=R,std=S]`.
pub fn parse_analytic_spec(spec: &str) -> Result<AnalyticDist, HarnessError> {
    let bad = |message: String| HarnessError::Invalid { message };
    let (name, args) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    let mut params = Vec::new();
    if let Some(args) = args {
        for part in args.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("analytic target: expected key=value, got `{part}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|e| bad(format!("analytic target: value for `{k}`: {e}")))?;
            params.push((k, v));
        }
    }
    let only = |allowed: &[&str]| -> Result<(), HarnessError> {
        for (k, _) in &params {
            if !allowed.contains(k) {
                return Err(bad(format!(
                    "analytic target `{name}` does not take `{k}` (allowed: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    };
    let get = |key: &str, default: f64| {
        params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap_or(default)
    };
    match name {
        "unit-gaussian" => {
            only(&[])?;
            Ok(AnalyticDist::Gaussian(GaussianDist::isotropic(&[0.0, 0.0], 1.0)?))
        }
        "gaussian" => {
            only(&["variance"])?;
            let variance = get("variance", 1.0);
            Ok(AnalyticDist::Gaussian(GaussianDist::isotropic(&[0.0, 0.0], variance)?))
        }
        "eight-gaussians" => {
            only(&["radius", "std"])?;
            let defaults = EightGaussiansSpec::default();
            let spec = EightGaussiansSpec {
                radius: get("radius", defaults.radius),
                component_std: get("std", defaults.component_std),
            };
            Ok(DataSpec::EightGaussians(spec).analytic())
        }
        other => Err(bad(format!(
            "unknown analytic target `{other}` (expected unit-gaussian, gaussian, or eight-gaussians)"
        ))),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Echoes the resolved config next to the outputs and returns its hash.
/// This happens before any training so a crashed run still documents
/// itself.
fn echo_config(config: &ExperimentConfig, out_dir: &Path) -> Result<u64, HarnessError> {
    let resolved = config.resolved_toml();
    write_text(&out_dir.join("config.resolved.toml"), &resolved)?;
    Ok(fnv1a64(resolved.as_bytes()))
}

/// Uniform n×n grid over [lo, hi]², rows are points.
fn square_grid(lo: f64, hi: f64, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            let fx = i as f64 / (n - 1) as f64;
            let fy = j as f64 / (n - 1) as f64;
            data.push(lo + fx * (hi - lo));
            data.push(lo + fy * (hi - lo));
        }
    }
    Tensor::new(vec![n * n, 2], data).expect("grid shape is consistent")
}

/// Relative L2 distance between the net's score and the closed-form
/// perturbed score of `law` at noise level σ, over the rows of `points`.
fn score_rel_l2(
    net: &DenoiserNet,
    law: &AnalyticDist,
    sigma: f64,
    points: &Tensor,
) -> Result<f64, HarnessError> {
    let denoised = net.eval_batch(points, &[sigma])?;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..points.rows() {
        let x = points.row(r);
        let d = denoised.row(r);
        let truth = perturbed_score(law, sigma, x)?;
        for c in 0..x.len() {
            let learned = (d[c] - x[c]) / (sigma * sigma);
            num += (learned - truth[c]) * (learned - truth[c]);
            den += truth[c] * truth[c];
        }
    }
    Ok((num / den).sqrt())
}

/// Everything `train-diffusion` leaves on disk, plus the headline numbers.
#[derive(Debug, Clone)]
pub struct TrainDiffusionOutcome {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub validation: PathBuf,
    pub final_loss: f64,
    /// (σ, relative L2 to the closed-form score) per validation level.
    pub score_errors: Vec<(f64, f64)>,
}

/// Pretrains the denoiser on the configured target law and writes the
/// checkpoint, the loss log, and a closed-form score validation report.
pub fn cmd_train_diffusion(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<TrainDiffusionOutcome, HarnessError> {
    let started = std::time::Instant::now();
    ensure_dir(out_dir)?;
    let config_hash = echo_config(config, out_dir)?;
    let schedule = config.to_schedule()?;
    let dsm_config = config.to_dsm_config();
    let data = config.data.target.to_core();
    let root = Rng::new(config.seed);
    let net = DenoiserNet::init(config.to_net_config(), &mut root.split("net-init"))?;
    let run = train_dsm(&dsm_config, |n, rng| data.sample(n, rng), &schedule, net)?;

    let checkpoint_path = out_dir.join("denoiser.ckpt");
    Checkpoint::of_denoiser(&run.net, &schedule, dsm_config.iterations, config.seed, config_hash)
        .save(&checkpoint_path)?;
    let loss_csv = out_dir.join("loss.csv");
    csv::write_dsm_loss(&loss_csv, &run.loss_log)?;

    // Closed-form validation: both supported laws admit exact perturbed
    // scores, so the report is always written.
    let law = data.analytic();
    let box_half = match &data {
        DataSpec::UnitGaussian => 4.0,
        DataSpec::EightGaussians(spec) => spec.radius + 3.0 * spec.component_std,
    };
    let grid = square_grid(-box_half, box_half, 24);
    let mut report = String::from(
        "# relative L2 between the learned score (D(x,s)-x)/s^2 and the closed-form score\n",
    );
    let _ = writeln!(report, "law {}", law_name(&data));
    let mut score_errors = Vec::new();
    for sigma in [0.1, 1.0, 10.0] {
        let rel = score_rel_l2(&run.net, &law, sigma, &grid)?;
        let _ = writeln!(report, "sigma {sigma} rel_l2 {rel}");
        score_errors.push((sigma, rel));
    }
    let validation = out_dir.join("score_validation.txt");
    write_text(&validation, &report)?;

    let final_loss = run.loss_log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    eprintln!(
        "train-diffusion: {} iterations in {:.1}s",
        dsm_config.iterations,
        started.elapsed().as_secs_f64()
    );
    Ok(TrainDiffusionOutcome { checkpoint: checkpoint_path, loss_csv, validation, final_loss, score_errors })
}

fn law_name(data: &DataSpec) -> String {
    match data {
        DataSpec::UnitGaussian => "unit_gaussian".into(),
        DataSpec::EightGaussians(spec) => format!(
            "eight_gaussians radius={} component_std={}",
            spec.radius, spec.component_std
        ),
    }
}

/// Everything `train-rdmd` leaves on disk, plus the final metric row.
#[derive(Debug, Clone)]
pub struct TrainRdmdOutcome {
    pub checkpoint: PathBuf,
    pub log_csv: PathBuf,
    pub pairs_csv: PathBuf,
    pub target_ref_csv: PathBuf,
    pub metrics_txt: PathBuf,
    pub metrics: csv::MetricsRow,
}

/// Distills the target into a one-step generator and writes the
/// checkpoint, the metric log, the held-out pair set, the target
/// reference sample, and a metrics summary.
pub fn cmd_train_rdmd(
    config: &ExperimentConfig,
    target_source: &TargetSource,
    out_dir: &Path,
) -> Result<TrainRdmdOutcome, HarnessError> {
    let started = std::time::Instant::now();
    ensure_dir(out_dir)?;
    let config_hash = echo_config(config, out_dir)?;
    let schedule = config.to_schedule()?;
    let rdmd_config = config.to_rdmd_config();

    // For checkpoint targets the generator inherits the checkpoint's
    // architecture (it starts as a copy); config.network applies only to
    // analytic targets, where both nets start fresh.
    let target = match target_source {
        TargetSource::Checkpoint(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.schedule != schedule {
                return Err(HarnessError::Checkpoint {
                    path: path.clone(),
                    message: format!(
                        "schedule mismatch: checkpoint was trained with sigma_min={} t_max={} rho={}, config asks for sigma_min={} t_max={} rho={} — refusing to run",
                        ckpt.schedule.sigma_min,
                        ckpt.schedule.t_max,
                        ckpt.schedule.rho,
                        schedule.sigma_min,
                        schedule.t_max,
                        schedule.rho
                    ),
                });
            }
            Target::Net(ckpt.to_denoiser(path)?)
        }
        TargetSource::Analytic(spec) => Target::Analytic {
            dist: parse_analytic_spec(spec)?,
            net_config: config.to_net_config(),
        },
    };

    let state = train_rdmd(&rdmd_config, |n, rng| sample_source_gaussian(n, rng), target, &schedule)?;

    let checkpoint_path = out_dir.join("generator.ckpt");
    Checkpoint::of_generator(
        &state.generator,
        rdmd_config.lambda,
        &schedule,
        rdmd_config.iterations,
        config.seed,
        config_hash,
    )
    .save(&checkpoint_path)?;
    let log_csv = out_dir.join("rdmd_log.csv");
    csv::write_rdmd_log(&log_csv, &state.eval_log)?;

    // Held-out final report on fresh substreams, disjoint by label from
    // everything the trainer consumed.
    let mut root = Rng::new(config.seed);
    let holdout = sample_source_gaussian(config.eval.samples, &mut root.split("holdout"));
    let outputs = state.generator.eval_batch(&holdout)?;
    let pairs = PairSet::new(holdout, outputs)?;
    let pairs_csv = out_dir.join("pairs.csv");
    csv::write_pairs(&pairs_csv, &pairs)?;

    let mut ref_rng = root.split("holdout-target");
    let target_ref = match &state.target {
        Target::Net(net) => {
            pf_ode_sample(net, &schedule, config.eval.samples, 2, config.eval.pf_ode_steps, &mut ref_rng)?.1
        }
        Target::Analytic { dist, .. } => dist.sample(config.eval.samples, &mut ref_rng),
    };
    let target_ref_csv = out_dir.join("target_ref.csv");
    csv::write_samples(&target_ref_csv, &target_ref)?;

    let label = out_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rdmd".into());
    let metrics = compute_metrics(
        &label,
        rdmd_config.lambda,
        config.seed,
        &pairs,
        &target_ref,
        config.eval.sliced_projections,
        config.eval.crossing_subsample,
        &mut root,
    )?;
    let metrics_txt = out_dir.join("metrics.txt");
    write_text(&metrics_txt, &metrics_report(&metrics, rdmd_config.iterations))?;

    eprintln!(
        "train-rdmd: lambda {} for {} iterations in {:.1}s",
        rdmd_config.lambda,
        rdmd_config.iterations,
        started.elapsed().as_secs_f64()
    );
    Ok(TrainRdmdOutcome { checkpoint: checkpoint_path, log_csv, pairs_csv, target_ref_csv, metrics_txt, metrics })
}

#[allow(clippy::too_many_arguments)]
fn compute_metrics(
    label: &str,
    lambda: f64,
    seed: u64,
    pairs: &PairSet,
    target_ref: &Tensor,
    sliced_projections: usize,
    crossing_subsample: usize,
    rng: &mut Rng,
) -> Result<csv::MetricsRow, HarnessError> {
    Ok(csv::MetricsRow {
        label: label.to_string(),
        lambda,
        seed,
        transport_cost_rms: transport_cost_rms(pairs),
        energy_distance: energy_distance(pairs.output(), target_ref)?,
        sliced_w2: sliced_w2(pairs.output(), target_ref, sliced_projections, &mut rng.split("metrics-sliced"))?,
        crossing_count: crossing_count(pairs, crossing_subsample, &mut rng.split("metrics-crossing"))?,
    })
}

fn metrics_report(m: &csv::MetricsRow, iterations: usize) -> String {
    format!(
        "{{\n  \"label\": \"{}\",\n  \"lambda\": {},\n  \"seed\": {},\n  \"iterations\": {},\n  \"transport_cost_rms\": {},\n  \"energy_distance\": {},\n  \"sliced_w2\": {},\n  \"crossing_count\": {}\n}}\n",
        m.label,
        m.lambda,
        m.seed,
        iterations,
        m.transport_cost_rms,
        m.energy_distance,
        m.sliced_w2,
        m.crossing_count
    )
}

/// Filename-safe λ formatting: `0.05` → `0p05`.
pub fn lambda_slug(lambda: f64) -> String {
    format!("{lambda}").replace('.', "p").replace('-', "m")
}

/// Everything `surface` leaves on disk.
#[derive(Debug, Clone)]
pub struct SurfaceOutcome {
    pub csv_paths: Vec<PathBuf>,
    pub svg_paths: Vec<PathBuf>,
    pub summary_csv: PathBuf,
    pub summary: Vec<csv::SurfaceSummaryRow>,
}

/// Evaluates the analytic objective of the rotation/scale generator
/// family over an (r, α) grid of cell centers, one CSV + heatmap per λ,
/// plus a minimizer summary table.
#[allow(clippy::too_many_arguments)]
pub fn cmd_surface(
    schedule: &NoiseSchedule,
    sigma_target: f64,
    r_range: (f64, f64),
    alpha_range: (f64, f64),
    grid_n: usize,
    lambdas: &[f64],
    quadrature_intervals: usize,
    out_dir: &Path,
) -> Result<SurfaceOutcome, HarnessError> {
    if grid_n < 8 {
        return Err(HarnessError::Invalid {
            message: format!("surface grid must be at least 8x8, got {grid_n}"),
        });
    }
    if !(r_range.1 > r_range.0) || !(alpha_range.1 > alpha_range.0) {
        return Err(HarnessError::Invalid {
            message: format!("empty surface ranges: r {r_range:?}, alpha {alpha_range:?}"),
        });
    }
    if lambdas.is_empty() {
        return Err(HarnessError::Invalid { message: "surface needs at least one lambda".into() });
    }
    ensure_dir(out_dir)?;
    // Cell centers rather than inclusive endpoints: every cell represents
    // an equal share of the range and a periodic α axis gets no
    // duplicated column.
    let centers = |lo: f64, hi: f64| -> Vec<f64> {
        let step = (hi - lo) / grid_n as f64;
        (0..grid_n).map(|i| lo + (i as f64 + 0.5) * step).collect()
    };
    let r_values = centers(r_range.0, r_range.1);
    let alpha_values = centers(alpha_range.0, alpha_range.1);
    let weight = SurfaceWeight::ConstantOverHorizon;

    let mut csv_paths = Vec::new();
    let mut svg_paths = Vec::new();
    let mut summary = Vec::new();
    for &lambda in lambdas {
        let mut rows: Vec<(f64, f64, SurfaceValue)> = Vec::with_capacity(grid_n * grid_n);
        let mut totals = Vec::with_capacity(grid_n * grid_n);
        let mut best: Option<(f64, f64, f64)> = None;
        for &r in &r_values {
            for &alpha in &alpha_values {
                let generator = RotScaleGenerator { r, alpha };
                let value = rdmd_surface(
                    &generator,
                    lambda,
                    sigma_target,
                    schedule,
                    &weight,
                    quadrature_intervals,
                )?;
                totals.push(value.total);
                if best.is_none_or(|(_, _, t)| value.total < t) {
                    best = Some((r, alpha, value.total));
                }
                rows.push((r, alpha, value));
            }
        }
        let (argmin_r, argmin_alpha, min_total) = best.expect("grid is non-empty");
        let slug = lambda_slug(lambda);
        let csv_path = out_dir.join(format!("surface_lambda_{slug}.csv"));
        csv::write_surface(&csv_path, lambda, &rows)?;
        let svg_path = out_dir.join(format!("surface_lambda_{slug}.svg"));
        let title = format!("objective surface, lambda = {lambda}");
        let rendered = svg::surface_heatmap(
            &r_values,
            &alpha_values,
            &totals,
            (argmin_r, argmin_alpha),
            &title,
        )?;
        write_text(&svg_path, &rendered)?;
        csv_paths.push(csv_path);
        svg_paths.push(svg_path);
        summary.push(csv::SurfaceSummaryRow { lambda, argmin_r, argmin_alpha, min_total });
    }
    let summary_csv = out_dir.join("surface_summary.csv");
    csv::write_surface_summary(&summary_csv, &summary)?;
    Ok(SurfaceOutcome { csv_paths, svg_paths, summary_csv, summary })
}

/// Everything `eval` leaves on disk.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report_txt: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics: csv::MetricsRow,
}

/// Loads a generator checkpoint, maps a fresh seeded source set, and
/// reports the translation metrics, upserting them into the sweep-level
/// table.
pub fn cmd_eval(
    checkpoint_path: &Path,
    target_source: &TargetSource,
    seed: u64,
    eval: &crate::config::EvalSection,
    out_dir: &Path,
) -> Result<EvalOutcome, HarnessError> {
    ensure_dir(out_dir)?;
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let lambda = match ckpt.kind {
        CheckpointKind::Generator { lambda, .. } => lambda,
        CheckpointKind::Denoiser => {
            return Err(HarnessError::Checkpoint {
                path: checkpoint_path.to_path_buf(),
                message: "eval needs a generator checkpoint, found a denoiser".into(),
            })
        }
    };
    let generator: GeneratorNet = ckpt.to_generator(checkpoint_path)?;
    let mut root = Rng::new(seed);
    let source = sample_source_gaussian(eval.samples, &mut root.split("eval-source"));
    let outputs = generator.eval_batch(&source)?;
    let pairs = PairSet::new(source, outputs)?;

    let mut ref_rng = root.split("eval-target");
    let target_ref = match target_source {
        TargetSource::Checkpoint(path) => {
            let target_ckpt = Checkpoint::load(path)?;
            let net = target_ckpt.to_denoiser(path)?;
            pf_ode_sample(&net, &ckpt.schedule, eval.samples, 2, eval.pf_ode_steps, &mut ref_rng)?.1
        }
        TargetSource::Analytic(spec) => {
            parse_analytic_spec(spec)?.sample(eval.samples, &mut ref_rng)
        }
    };

    let label = checkpoint_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "generator".into());
    let label = match checkpoint_path.parent().and_then(|p| p.file_name()) {
        Some(parent) => format!("{}/{label}", parent.to_string_lossy()),
        None => label,
    };
    let metrics = compute_metrics(
        &label,
        lambda,
        seed,
        &pairs,
        &target_ref,
        eval.sliced_projections,
        eval.crossing_subsample,
        &mut root,
    )?;
    let report_txt = out_dir.join("eval_report.txt");
    write_text(&report_txt, &metrics_report(&metrics, ckpt.iteration))?;
    let metrics_csv = out_dir.join("metrics.csv");
    csv::upsert_metrics(&metrics_csv, metrics.clone())?;
    Ok(EvalOutcome { report_txt, metrics_csv, metrics })
}

/// Renders a pair-set CSV (optionally with a reference sample set) to an
/// SVG figure.
pub fn cmd_plot(
    pairs_csv: &Path,
    reference_csv: Option<&Path>,
    out_svg: &Path,
    title: &str,
) -> Result<(), HarnessError> {
    let pairs = csv::read_pairs(pairs_csv)?;
    let reference = reference_csv.map(csv::read_samples).transpose()?;
    let rendered = svg::pair_plot(&pairs, reference.as_ref(), title)?;
    write_text(out_svg, &rendered)
}

/// Everything `sweep` leaves on disk.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub run_dirs: Vec<PathBuf>,
    pub metrics_csv: PathBuf,
    pub rows: Vec<csv::MetricsRow>,
}

/// Runs one distillation per λ — identical seed and data streams, so λ is
/// the only thing that varies — then gathers the per-run metrics into one
/// tradeoff table and renders each run's pair plot.
pub fn cmd_sweep(
    config: &ExperimentConfig,
    target_source: &TargetSource,
    lambdas: &[f64],
    out_dir: &Path,
) -> Result<SweepOutcome, HarnessError> {
    if lambdas.is_empty() {
        return Err(HarnessError::Invalid { message: "sweep needs at least one lambda".into() });
    }
    let mut slugs: Vec<String> = lambdas.iter().map(|l| lambda_slug(*l)).collect();
    slugs.sort();
    slugs.dedup();
    if slugs.len() != lambdas.len() {
        return Err(HarnessError::Invalid {
            message: format!("sweep lambdas must be distinct, got {lambdas:?}"),
        });
    }
    ensure_dir(out_dir)?;
    let metrics_csv = out_dir.join("metrics.csv");
    let mut run_dirs = Vec::new();
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let mut run_config = config.clone();
        run_config.rdmd.lambda = lambda;
        let run_dir = out_dir.join(format!("lambda_{}", lambda_slug(lambda)));
        let outcome = cmd_train_rdmd(&run_config, target_source, &run_dir)?;
        csv::upsert_metrics(&metrics_csv, outcome.metrics.clone())?;
        cmd_plot(
            &outcome.pairs_csv,
            Some(&outcome.target_ref_csv),
            &run_dir.join("pairs.svg"),
            &format!("translation map, lambda = {lambda}"),
        )?;
        rows.push(outcome.metrics);
        run_dirs.push(run_dir);
    }
    Ok(SweepOutcome { run_dirs, metrics_csv, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::scratch_dir;

    /// Small architecture + short runs so the end-to-end tests stay quick.
    fn tiny_experiment(seed: u64) -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.seed = seed;
        config.network.encoder_dims = vec![8, 8];
        config.network.decoder_dims = vec![16, 2];
        config.network.embed_dim = 8;
        config.dsm.iterations = 300;
        config.dsm.batch_size = 64;
        config.dsm.lr = 1e-3;
        config.dsm.log_every = 100;
        config.rdmd.iterations = 40;
        config.rdmd.batch_size = 32;
        config.rdmd.eval_every = 20;
        config.rdmd.eval_samples = 64;
        config.rdmd.generator_lr = 1e-3;
        config.rdmd.fake_lr = 1e-3;
        config.eval.samples = 200;
        config.eval.sliced_projections = 16;
        config.eval.crossing_subsample = 100;
        config.eval.pf_ode_steps = 8;
        config.data.target = crate::config::TargetLawSection::UnitGaussian;
        config
    }

    #[test]
    fn train_diffusion_writes_every_artifact_deterministically() {
        let dir = scratch_dir("runs-dsm");
        let config = tiny_experiment(11);
        let outcome = cmd_train_diffusion(&config, &dir.join("a")).unwrap();
        assert!(outcome.checkpoint.exists());
        assert!(outcome.loss_csv.exists());
        assert!(outcome.validation.exists());
        assert!(dir.join("a/config.resolved.toml").exists());
        assert!(outcome.final_loss.is_finite());
        // Bitwise rerun identity, the determinism contract.
        cmd_train_diffusion(&config, &dir.join("b")).unwrap();
        for name in ["denoiser.ckpt", "loss.csv", "score_validation.txt", "config.resolved.toml"] {
            let a = std::fs::read(dir.join("a").join(name)).unwrap();
            let b = std::fs::read(dir.join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name} should be byte-identical across reruns");
        }
    }

    #[test]
    fn train_rdmd_against_analytic_target_writes_artifacts() {
        let dir = scratch_dir("runs-rdmd");
        let config = tiny_experiment(12);
        let source = TargetSource::Analytic("gaussian:variance=2.25".into());
        let outcome = cmd_train_rdmd(&config, &source, &dir.join("run")).unwrap();
        for path in [
            &outcome.checkpoint,
            &outcome.log_csv,
            &outcome.pairs_csv,
            &outcome.target_ref_csv,
            &outcome.metrics_txt,
        ] {
            assert!(path.exists(), "{} missing", path.display());
        }
        assert!(outcome.metrics.transport_cost_rms.is_finite());
        let ckpt = Checkpoint::load(&outcome.checkpoint).unwrap();
        match ckpt.kind {
            CheckpointKind::Generator { lambda, .. } => assert_eq!(lambda, config.rdmd.lambda),
            other => panic!("expected generator checkpoint, got {other:?}"),
        }
    }

    #[test]
    fn rdmd_refuses_a_schedule_mismatched_checkpoint() {
        let dir = scratch_dir("runs-mismatch");
        let mut config = tiny_experiment(13);
        config.dsm.iterations = 50;
        let diffusion = cmd_train_diffusion(&config, &dir.join("target")).unwrap();
        config.schedule.t_max = 40.0;
        let err = cmd_train_rdmd(
            &config,
            &TargetSource::Checkpoint(diffusion.checkpoint),
            &dir.join("run"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("schedule mismatch"), "{err}");
    }

    #[test]
    fn train_rdmd_with_net_target_runs_end_to_end() {
        let dir = scratch_dir("runs-rdmd-net");
        let mut config = tiny_experiment(14);
        config.dsm.iterations = 100;
        let diffusion = cmd_train_diffusion(&config, &dir.join("target")).unwrap();
        config.rdmd.iterations = 10;
        config.eval.samples = 64;
        let outcome = cmd_train_rdmd(
            &config,
            &TargetSource::Checkpoint(diffusion.checkpoint),
            &dir.join("run"),
        )
        .unwrap();
        assert!(outcome.checkpoint.exists());
    }

    #[test]
    fn surface_finds_the_flat_valley_and_the_regularized_point() {
        let dir = scratch_dir("runs-surface");
        let schedule = NoiseSchedule::default();
        let outcome = cmd_surface(
            &schedule,
            1.5,
            (0.5, 2.5),
            (-std::f64::consts::PI, std::f64::consts::PI),
            16,
            &[0.0, 0.2],
            64,
            &dir,
        )
        .unwrap();
        assert_eq!(outcome.summary.len(), 2);
        let flat = &outcome.summary[0];
        let cell = 2.0 / 16.0;
        assert!((flat.argmin_r - 1.5).abs() <= cell, "lambda=0 argmin r {}", flat.argmin_r);
        let pinned = &outcome.summary[1];
        assert!(pinned.argmin_alpha.abs() <= 2.0 * std::f64::consts::PI / 16.0);
        assert!(pinned.argmin_r < 1.5);
        for path in outcome.csv_paths.iter().chain(&outcome.svg_paths) {
            assert!(path.exists());
        }
        // Deterministic artifacts.
        let before = std::fs::read(&outcome.svg_paths[0]).unwrap();
        cmd_surface(
            &schedule,
            1.5,
            (0.5, 2.5),
            (-std::f64::consts::PI, std::f64::consts::PI),
            16,
            &[0.0, 0.2],
            64,
            &dir,
        )
        .unwrap();
        assert_eq!(std::fs::read(&outcome.svg_paths[0]).unwrap(), before);
    }

    #[test]
    fn surface_validates_its_arguments() {
        let dir = scratch_dir("runs-surface-bad");
        let schedule = NoiseSchedule::default();
        assert!(cmd_surface(&schedule, 1.5, (0.5, 2.5), (-1.0, 1.0), 4, &[0.0], 64, &dir).is_err());
        assert!(cmd_surface(&schedule, 1.5, (2.5, 0.5), (-1.0, 1.0), 8, &[0.0], 64, &dir).is_err());
        assert!(cmd_surface(&schedule, 1.5, (0.5, 2.5), (-1.0, 1.0), 8, &[], 64, &dir).is_err());
    }

    #[test]
    fn eval_reports_near_zero_cost_for_an_identity_generator() {
        // A generator checkpoint whose payload computes G(x) ≈ x: distill
        // with a huge λ against the unit Gaussian quickly pins to identity.
        let dir = scratch_dir("runs-eval");
        let mut config = tiny_experiment(15);
        config.rdmd.lambda = 1e6;
        config.rdmd.iterations = 1200;
        config.rdmd.generator_lr = 1e-2;
        let outcome = cmd_train_rdmd(
            &config,
            &TargetSource::Analytic("unit-gaussian".into()),
            &dir.join("run"),
        )
        .unwrap();
        let eval = cmd_eval(
            &outcome.checkpoint,
            &TargetSource::Analytic("unit-gaussian".into()),
            99,
            &config.eval,
            &dir.join("eval"),
        )
        .unwrap();
        assert!(
            eval.metrics.transport_cost_rms < 0.05,
            "identity-pinned generator should have near-zero cost, got {}",
            eval.metrics.transport_cost_rms
        );
        // Repeatable: same checkpoint + seed → identical report bytes.
        let report = std::fs::read(&eval.report_txt).unwrap();
        cmd_eval(
            &outcome.checkpoint,
            &TargetSource::Analytic("unit-gaussian".into()),
            99,
            &config.eval,
            &dir.join("eval"),
        )
        .unwrap();
        assert_eq!(std::fs::read(&eval.report_txt).unwrap(), report);
    }

    #[test]
    fn plot_renders_pairs_and_reports_bad_rows() {
        let dir = scratch_dir("runs-plot");
        let config = tiny_experiment(16);
        let outcome = cmd_train_rdmd(
            &config,
            &TargetSource::Analytic("unit-gaussian".into()),
            &dir.join("run"),
        )
        .unwrap();
        let svg_path = dir.join("pairs.svg");
        cmd_plot(&outcome.pairs_csv, Some(&outcome.target_ref_csv), &svg_path, "demo").unwrap();
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.starts_with("<svg"));
        let bad = dir.join("bad.csv");
        std::fs::write(&bad, "x0,x1,gx0,gx1\noops\n").unwrap();
        let err = cmd_plot(&bad, None, &svg_path, "demo").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn sweep_runs_share_seeds_and_fill_the_metrics_table() {
        let dir = scratch_dir("runs-sweep");
        let mut config = tiny_experiment(17);
        config.rdmd.iterations = 20;
        config.eval.samples = 100;
        let outcome = cmd_sweep(
            &config,
            &TargetSource::Analytic("gaussian:variance=2.25".into()),
            &[0.0, 0.2],
            &dir,
        )
        .unwrap();
        assert_eq!(outcome.rows.len(), 2);
        let table = csv::read_metrics(&outcome.metrics_csv).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].lambda, 0.0);
        assert_eq!(table[1].lambda, 0.2);
        assert!(outcome.run_dirs[0].join("pairs.svg").exists());
        // Identical seed across runs: the held-out source columns match.
        let a = csv::read_pairs(&outcome.run_dirs[0].join("pairs.csv")).unwrap();
        let b = csv::read_pairs(&outcome.run_dirs[1].join("pairs.csv")).unwrap();
        assert_eq!(a.source(), b.source());
        assert!(cmd_sweep(&config, &TargetSource::Analytic("unit-gaussian".into()), &[0.1, 0.1], &dir).is_err());
    }

    #[test]
    fn analytic_spec_parser_accepts_the_documented_forms() {
        assert!(parse_analytic_spec("unit-gaussian").is_ok());
        assert!(parse_analytic_spec("gaussian:variance=2.25").is_ok());
        assert!(parse_analytic_spec("eight-gaussians").is_ok());
        assert!(parse_analytic_spec("eight-gaussians:radius=5,std=0.3").is_ok());
        for bad in [
            "mystery",
            "gaussian:var=2",
            "gaussian:variance=abc",
            "eight-gaussians:radius",
            "unit-gaussian:variance=2",
        ] {
            let err = parse_analytic_spec(bad).unwrap_err();
            assert!(matches!(err, HarnessError::Invalid { .. }), "{bad}: {err}");
        }
    }

    #[test]
    fn lambda_slugs_are_filename_safe_and_distinct() {
        assert_eq!(lambda_slug(0.2), "0p2");
        assert_eq!(lambda_slug(0.0), "0");
        assert_eq!(lambda_slug(10.0), "10");
        assert_eq!(lambda_slug(0.001), "0p001");
    }
}
