//! Deterministic SVG figures: translation pair plots and objective-surface
//! heatmaps.
//!
//! Everything is emitted from plain string building with fixed formatting
//! and no timestamps, so the same inputs always produce identical bytes —
//! figures are diffable artifacts, same as the CSVs.

use crate::error::HarnessError;

use rdmd_core::data::PairSet;
use rdmd_core::Tensor;

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 720.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 56.0;

const SOURCE_COLOR: &str = "#1f77b4";
const OUTPUT_COLOR: &str = "#d62728";
const REFERENCE_COLOR: &str = "#2ca02c";
const SEGMENT_COLOR: &str = "#9aa0a6";

struct Bounds {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Bounds {
    fn empty() -> Bounds {
        Bounds { xmin: -1.0, xmax: 1.0, ymin: -1.0, ymax: 1.0 }
    }

    fn of_points<'a>(sets: impl Iterator<Item = &'a Tensor>) -> Bounds {
        let mut any = false;
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in sets {
            for r in 0..t.rows() {
                let p = t.row(r);
                xmin = xmin.min(p[0]);
                xmax = xmax.max(p[0]);
                ymin = ymin.min(p[1]);
                ymax = ymax.max(p[1]);
                any = true;
            }
        }
        if !any {
            return Bounds::empty();
        }
        // 5% padding; degenerate extents get a unit of breathing room.
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = *hi - *lo;
            let p = if span > 0.0 { 0.05 * span } else { 1.0 };
            *lo -= p;
            *hi += p;
        };
        pad(&mut xmin, &mut xmax);
        pad(&mut ymin, &mut ymax);
        Bounds { xmin, xmax, ymin, ymax }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.xmin) / (self.xmax - self.xmin) * self.plot_w()
    }

    fn sy(&self, y: f64) -> f64 {
        MARGIN_TOP + (self.ymax - y) / (self.ymax - self.ymin) * self.plot_h()
    }

    fn plot_w(&self) -> f64 {
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    }

    fn plot_h(&self) -> f64 {
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    }
}

/// Pixel coordinates with fixed two-decimal formatting.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// A "nice" tick step (1, 2, or 5 times a power of ten) giving roughly
/// `target` intervals across `span`.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let snapped = if norm <= 1.5 {
        1.0
    } else if norm <= 3.5 {
        2.0
    } else if norm <= 7.5 {
        5.0
    } else {
        10.0
    };
    snapped * mag
}

/// Tick positions and a decimal count that renders them exactly.
fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let step = nice_step(hi - lo, 5);
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    let values = (first..=last).map(|k| k as f64 * step).collect();
    (values, decimals)
}

fn svg_open(out: &mut String) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
}

fn draw_axes(out: &mut String, bounds: &Bounds, x_label: &str, y_label: &str, title: &str) {
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = MARGIN_TOP;
    let y1 = HEIGHT - MARGIN_BOTTOM;
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>",
        px(x0),
        px(y0),
        px(x1 - x0),
        px(y1 - y0)
    );
    let (xticks, xdec) = ticks(bounds.xmin, bounds.xmax);
    for t in xticks {
        let sx = bounds.sx(t);
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#444444\" stroke-width=\"1\"/>",
            px(sx),
            px(y1),
            px(y1 + 5.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"#222222\" text-anchor=\"middle\">{:.*}</text>",
            px(sx),
            px(y1 + 18.0),
            xdec,
            t
        );
    }
    let (yticks, ydec) = ticks(bounds.ymin, bounds.ymax);
    for t in yticks {
        let sy = bounds.sy(t);
        let _ = writeln!(
            out,
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#444444\" stroke-width=\"1\"/>",
            px(sy),
            px(x0 - 5.0),
            px(x0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"#222222\" text-anchor=\"end\">{:.*}</text>",
            px(x0 - 8.0),
            px(sy + 4.0),
            ydec,
            t
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"13\" fill=\"#222222\" text-anchor=\"middle\">{x_label}</text>",
        px((x0 + x1) / 2.0),
        px(HEIGHT - 14.0)
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"13\" fill=\"#222222\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">{y_label}</text>",
        px(18.0),
        px((y0 + y1) / 2.0),
        px(18.0),
        px((y0 + y1) / 2.0)
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"15\" fill=\"#111111\" text-anchor=\"middle\">{title}</text>",
        px(WIDTH / 2.0),
        px(28.0)
    );
}

/// Scatter of source points, generator outputs, optional target reference
/// samples, and the input→output segment for every pair. Zero-length
/// segments (an identity map) degenerate to the overlapping dots.
pub fn pair_plot(
    pairs: &PairSet,
    target_ref: Option<&Tensor>,
    title: &str,
) -> Result<String, HarnessError> {
    if pairs.dim() != 2 || target_ref.is_some_and(|t| t.cols() != 2) {
        return Err(HarnessError::Invalid {
            message: format!("pair plots are 2D only; got dimension {}", pairs.dim()),
        });
    }
    let bounds = Bounds::of_points(
        [pairs.source(), pairs.output()].into_iter().chain(target_ref),
    );
    let mut out = String::new();
    svg_open(&mut out);
    draw_axes(&mut out, &bounds, "x0", "x1", title);
    for r in 0..pairs.len() {
        let s = pairs.source().row(r);
        let g = pairs.output().row(r);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{SEGMENT_COLOR}\" stroke-width=\"0.6\" opacity=\"0.5\"/>",
            px(bounds.sx(s[0])),
            px(bounds.sy(s[1])),
            px(bounds.sx(g[0])),
            px(bounds.sy(g[1]))
        );
    }
    if let Some(reference) = target_ref {
        for r in 0..reference.rows() {
            let p = reference.row(r);
            let _ = writeln!(
                out,
                "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{REFERENCE_COLOR}\" opacity=\"0.55\"/>",
                px(bounds.sx(p[0])),
                px(bounds.sy(p[1]))
            );
        }
    }
    for r in 0..pairs.len() {
        let s = pairs.source().row(r);
        let _ = writeln!(
            out,
            "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{SOURCE_COLOR}\" opacity=\"0.8\"/>",
            px(bounds.sx(s[0])),
            px(bounds.sy(s[1]))
        );
    }
    for r in 0..pairs.len() {
        let g = pairs.output().row(r);
        let _ = writeln!(
            out,
            "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{OUTPUT_COLOR}\" opacity=\"0.8\"/>",
            px(bounds.sx(g[0])),
            px(bounds.sy(g[1]))
        );
    }
    let legend = [
        (SOURCE_COLOR, "source"),
        (OUTPUT_COLOR, "generated"),
        (REFERENCE_COLOR, "target"),
    ];
    for (i, (color, name)) in legend.iter().enumerate() {
        let y = MARGIN_TOP + 16.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT - 110.0;
        let _ = writeln!(out, "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{color}\"/>", px(x), px(y));
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"#222222\">{name}</text>",
            px(x + 10.0),
            px(y + 4.0)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Five-stop colormap from dark violet to yellow.
fn heat_color(t: f64) -> String {
    const STOPS: [(f64, [u8; 3]); 5] = [
        (0.00, [68, 1, 84]),
        (0.25, [59, 82, 139]),
        (0.50, [33, 145, 140]),
        (0.75, [94, 201, 98]),
        (1.00, [253, 231, 37]),
    ];
    let t = t.clamp(0.0, 1.0);
    let mut rgb = STOPS[4].1;
    for w in STOPS.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            rgb = std::array::from_fn(|i| {
                (c0[i] as f64 + f * (c1[i] as f64 - c0[i] as f64)).round() as u8
            });
            break;
        }
    }
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

/// Heatmap of the analytic objective over the (r, α) grid, α horizontal,
/// r vertical, with the grid argmin marked. `totals` is row-major with r
/// as the outer index.
pub fn surface_heatmap(
    r_values: &[f64],
    alpha_values: &[f64],
    totals: &[f64],
    argmin: (f64, f64),
    title: &str,
) -> Result<String, HarnessError> {
    let (nr, na) = (r_values.len(), alpha_values.len());
    if nr == 0 || na == 0 || totals.len() != nr * na {
        return Err(HarnessError::Invalid {
            message: format!(
                "surface grid is {nr}x{na} but {} values were supplied",
                totals.len()
            ),
        });
    }
    let vmin = totals.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let bounds = Bounds {
        xmin: alpha_values[0],
        xmax: alpha_values[na - 1],
        ymin: r_values[0],
        ymax: r_values[nr - 1],
    };
    let cell_w = bounds.plot_w() / na as f64;
    let cell_h = bounds.plot_h() / nr as f64;
    let mut out = String::new();
    svg_open(&mut out);
    for (ir, _) in r_values.iter().enumerate() {
        for (ia, _) in alpha_values.iter().enumerate() {
            let v = totals[ir * na + ia];
            // Quarter-power display gamma: the valley floor of a KL
            // surface is orders of magnitude below the rim, and a linear
            // ramp would render it as one flat dark field.
            let t = ((v - vmin) / span).powf(0.25);
            let x = MARGIN_LEFT + ia as f64 * cell_w;
            let y = MARGIN_TOP + (nr - 1 - ir) as f64 * cell_h;
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                px(x),
                px(y),
                px(cell_w + 0.05),
                px(cell_h + 0.05),
                heat_color(t)
            );
        }
    }
    draw_axes(&mut out, &bounds, "alpha", "r", title);
    let _ = writeln!(
        out,
        "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"#ffffff\" stroke=\"#000000\" stroke-width=\"1.5\"/>",
        px(bounds.sx(argmin.1)),
        px(bounds.sy(argmin.0))
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"#222222\">min {vmin:.6} max {vmax:.6}</text>",
        px(MARGIN_LEFT),
        px(HEIGHT - 36.0)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rdmd_core::rng::Rng;

    fn demo_pairs(n: usize) -> PairSet {
        let mut rng = Rng::new(3);
        let source = Tensor::new(vec![n, 2], rng.normal_vec(2 * n)).unwrap();
        let output = Tensor::new(vec![n, 2], rng.normal_vec(2 * n)).unwrap();
        PairSet::new(source, output).unwrap()
    }

    #[test]
    fn pair_plot_is_deterministic() {
        let pairs = demo_pairs(25);
        let a = pair_plot(&pairs, None, "demo").unwrap();
        let b = pair_plot(&pairs, None, "demo").unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_pair_set_still_renders_axes() {
        let pairs = PairSet::new(Tensor::zeros(vec![0, 2]), Tensor::zeros(vec![0, 2])).unwrap();
        let svg = pair_plot(&pairs, None, "empty").unwrap();
        assert!(svg.contains("<text"), "axes and labels should render");
        assert!(svg.contains("stroke=\"#444444\""), "frame should render");
        assert!(!svg.contains("<line x1=\"NaN\""));
    }

    #[test]
    fn identity_pairs_render_as_points() {
        let mut rng = Rng::new(4);
        let pts = Tensor::new(vec![10, 2], rng.normal_vec(20)).unwrap();
        let pairs = PairSet::new(pts.clone(), pts).unwrap();
        let svg = pair_plot(&pairs, None, "identity").unwrap();
        // Segments are present but degenerate: endpoints coincide.
        for line in svg.lines().filter(|l| l.starts_with("<line x1") && l.contains(SEGMENT_COLOR)) {
            let x1 = line.split("x1=\"").nth(1).unwrap().split('"').next().unwrap();
            let x2 = line.split("x2=\"").nth(1).unwrap().split('"').next().unwrap();
            let y1 = line.split("y1=\"").nth(1).unwrap().split('"').next().unwrap();
            let y2 = line.split("y2=\"").nth(1).unwrap().split('"').next().unwrap();
            assert_eq!((x1, y1), (x2, y2), "{line}");
        }
    }

    #[test]
    fn reference_points_render_in_their_own_color() {
        let pairs = demo_pairs(5);
        let mut rng = Rng::new(5);
        let reference = Tensor::new(vec![7, 2], rng.normal_vec(14)).unwrap();
        let svg = pair_plot(&pairs, Some(&reference), "with ref").unwrap();
        assert_eq!(svg.matches(REFERENCE_COLOR).count(), 7 + 1, "7 dots + legend");
    }

    #[test]
    fn heatmap_colors_span_the_map_and_mark_the_argmin() {
        let rs = [1.0, 1.5, 2.0];
        let alphas = [-1.0, 0.0, 1.0];
        let mut totals = vec![1.0; 9];
        totals[4] = 0.0; // center cell (r=1.5, alpha=0) is the minimum
        let svg = surface_heatmap(&rs, &alphas, &totals, (1.5, 0.0), "demo").unwrap();
        assert!(svg.contains(&heat_color(0.0)));
        assert!(svg.contains(&heat_color(1.0)));
        assert!(svg.contains("stroke=\"#000000\""), "argmin marker present");
        let again = surface_heatmap(&rs, &alphas, &totals, (1.5, 0.0), "demo").unwrap();
        assert_eq!(svg, again);
    }

    #[test]
    fn heatmap_rejects_mismatched_grids() {
        assert!(surface_heatmap(&[1.0], &[1.0, 2.0], &[0.0], (0.0, 0.0), "bad").is_err());
    }

    #[test]
    fn colormap_endpoints_are_the_declared_stops() {
        assert_eq!(heat_color(0.0), "#440154");
        assert_eq!(heat_color(1.0), "#fde725");
        assert_eq!(heat_color(-5.0), "#440154");
        assert_eq!(heat_color(7.0), "#fde725");
    }

    #[test]
    fn tick_labels_round_cleanly() {
        let (values, decimals) = ticks(-3.1, 2.9);
        assert!(values.contains(&0.0));
        assert_eq!(decimals, 0);
        let (values, decimals) = ticks(0.5, 2.5);
        assert!(decimals >= 1);
        assert!(values.iter().all(|v| (*v * 10f64.powi(decimals as i32)).fract().abs() < 1e-9));
    }
}
