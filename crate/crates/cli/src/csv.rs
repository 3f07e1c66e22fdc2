//! CSV emission and parsing for logs, pair sets, surfaces, and the
//! sweep-level metrics table.
//!
//! Floats are written with Rust's shortest-round-trip formatting, so a
//! file parses back to bitwise-identical values and re-running a command
//! reproduces identical bytes. The `wallclock_ms` column required by the
//! log formats is pinned to 0: live timings would break the byte-identical
//! rerun guarantee, so elapsed time is reported on stderr instead.

use crate::error::{io_err, HarnessError};

use rdmd_core::data::PairSet;
use rdmd_core::diffusion::LossRow;
use rdmd_core::distill::EvalRow;
use rdmd_core::oracle::SurfaceValue;
use rdmd_core::Tensor;

use std::fmt::Write as _;
use std::path::Path;

/// Documentation line for the transport-cost convention, emitted at the
/// top of every file that carries the column.
const COST_CONVENTION: &str = "# transport_cost_rms = sqrt(sum_i ||x_i - G(x_i)||^2 / (n*d)), \
a per-coordinate root-mean-square displacement";

/// Score-matching loss log: `iteration,loss,wallclock_ms`.
pub fn write_dsm_loss(path: &Path, rows: &[LossRow]) -> Result<(), HarnessError> {
    let mut out = String::from("iteration,loss,wallclock_ms\n");
    for row in rows {
        let _ = writeln!(out, "{},{},0", row.iteration, row.loss);
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Distillation metric log:
/// `iteration,fake_loss,transport_cost_rms,energy_distance,wallclock_ms`.
pub fn write_rdmd_log(path: &Path, rows: &[EvalRow]) -> Result<(), HarnessError> {
    let mut out = format!(
        "{COST_CONVENTION}\niteration,fake_loss,transport_cost_rms,energy_distance,wallclock_ms\n"
    );
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},0",
            row.iteration, row.fake_loss, row.transport_cost_rms, row.energy_distance
        );
    }
    std::fs::write(path, out).map_err(io_err(path))
}

fn point_header(prefix: &str, dim: usize) -> String {
    (0..dim).map(|c| format!("{prefix}{c}")).collect::<Vec<_>>().join(",")
}

/// Pair set: one row per point, source coordinates then mapped coordinates.
pub fn write_pairs(path: &Path, pairs: &PairSet) -> Result<(), HarnessError> {
    let d = pairs.dim();
    let mut out = format!("{},{}\n", point_header("x", d), point_header("gx", d));
    for r in 0..pairs.len() {
        let mut fields = Vec::with_capacity(2 * d);
        fields.extend(pairs.source().row(r).iter().map(|v| v.to_string()));
        fields.extend(pairs.output().row(r).iter().map(|v| v.to_string()));
        let _ = writeln!(out, "{}", fields.join(","));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Reads a pair-set CSV back; malformed rows are reported with their
/// 1-based file line number.
pub fn read_pairs(path: &Path) -> Result<PairSet, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, message: String| HarnessError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let columns = header.split(',').count();
    if columns == 0 || columns % 2 != 0 {
        return Err(bad(1, format!("expected an even column count, got {columns}")));
    }
    let d = columns / 2;
    let mut source = Vec::new();
    let mut output = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(bad(
                idx + 1,
                format!("expected {columns} fields, found {}", fields.len()),
            ));
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|e| bad(idx + 1, format!("field {}: {e}", c + 1)))?;
            if c < d {
                source.push(v);
            } else {
                output.push(v);
            }
        }
        rows += 1;
    }
    let source = Tensor::new(vec![rows, d], source)?;
    let output = Tensor::new(vec![rows, d], output)?;
    Ok(PairSet::new(source, output)?)
}

/// Sample set: one row per point.
pub fn write_samples(path: &Path, points: &Tensor) -> Result<(), HarnessError> {
    let d = points.cols();
    let mut out = format!("{}\n", point_header("x", d));
    for r in 0..points.rows() {
        let fields: Vec<String> = points.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Reads a sample-set CSV (the complement of [`write_samples`]).
pub fn read_samples(path: &Path) -> Result<Tensor, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, message: String| HarnessError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let d = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(bad(idx + 1, format!("expected {d} fields, found {}", fields.len())));
        }
        for (c, field) in fields.iter().enumerate() {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|e| bad(idx + 1, format!("field {}: {e}", c + 1)))?,
            );
        }
        rows += 1;
    }
    Ok(Tensor::new(vec![rows, d], data)?)
}

/// Analytic surface grid: `r,alpha,kl_term,cost_term,total`, row-major
/// with r as the outer loop.
pub fn write_surface(
    path: &Path,
    lambda: f64,
    rows: &[(f64, f64, SurfaceValue)],
) -> Result<(), HarnessError> {
    let mut out = format!(
        "# analytic objective surface at lambda = {lambda}; total = kl_term + lambda*cost_term\nr,alpha,kl_term,cost_term,total\n"
    );
    for (r, alpha, value) in rows {
        let _ = writeln!(
            out,
            "{r},{alpha},{},{},{}",
            value.kl_term, value.cost_term, value.total
        );
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Per-λ minimizer summary appended by the surface command.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummaryRow {
    pub lambda: f64,
    pub argmin_r: f64,
    pub argmin_alpha: f64,
    pub min_total: f64,
}

pub fn write_surface_summary(
    path: &Path,
    rows: &[SurfaceSummaryRow],
) -> Result<(), HarnessError> {
    let mut out = String::from("lambda,argmin_r,argmin_alpha,min_total\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.lambda, row.argmin_r, row.argmin_alpha, row.min_total
        );
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// One evaluation record in the sweep-level metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Run label (commas are rejected — they would break the format).
    pub label: String,
    pub lambda: f64,
    pub seed: u64,
    pub transport_cost_rms: f64,
    pub energy_distance: f64,
    pub sliced_w2: f64,
    pub crossing_count: usize,
}

const METRICS_HEADER: &str =
    "label,lambda,seed,transport_cost_rms,energy_distance,sliced_w2,crossing_count";

/// Reads the metrics table written by [`upsert_metrics`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, message: String| HarnessError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.starts_with('#') || line == METRICS_HEADER {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(idx + 1, format!("expected 7 fields, found {}", fields.len())));
        }
        let parse_f = |i: usize| -> Result<f64, HarnessError> {
            fields[i].parse().map_err(|e| bad(idx + 1, format!("field {}: {e}", i + 1)))
        };
        rows.push(MetricsRow {
            label: fields[0].to_string(),
            lambda: parse_f(1)?,
            seed: fields[2]
                .parse()
                .map_err(|e| bad(idx + 1, format!("field 3: {e}")))?,
            transport_cost_rms: parse_f(3)?,
            energy_distance: parse_f(4)?,
            sliced_w2: parse_f(5)?,
            crossing_count: fields[6]
                .parse()
                .map_err(|e| bad(idx + 1, format!("field 7: {e}")))?,
        });
    }
    Ok(rows)
}

/// Inserts or replaces the row keyed by (label, seed) and rewrites the
/// table sorted by (lambda, label, seed). Replacement instead of blind
/// append keeps re-runs byte-identical while still letting independent
/// evaluations accumulate into one tradeoff table.
pub fn upsert_metrics(path: &Path, row: MetricsRow) -> Result<(), HarnessError> {
    if row.label.contains(',') {
        return Err(HarnessError::Invalid {
            message: format!("metrics label `{}` must not contain commas", row.label),
        });
    }
    let mut rows = if path.exists() { read_metrics(path)? } else { Vec::new() };
    rows.retain(|r| !(r.label == row.label && r.seed == row.seed));
    rows.push(row);
    rows.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| a.seed.cmp(&b.seed))
    });
    let mut out = format!("{COST_CONVENTION}\n{METRICS_HEADER}\n");
    for r in &rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.label,
            r.lambda,
            r.seed,
            r.transport_cost_rms,
            r.energy_distance,
            r.sliced_w2,
            r.crossing_count
        );
    }
    std::fs::write(path, out).map_err(io_err(path))
}
