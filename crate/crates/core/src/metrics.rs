//! Evaluation metrics for translation maps and sample sets.

use crate::data::PairSet;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

/// Root-mean-square transport cost per coordinate:
/// sqrt( Σᵢ‖xᵢ − yᵢ‖² / (n·d) ). The per-coordinate convention keeps the
/// number comparable across dimensions.
pub fn transport_cost_rms(pairs: &PairSet) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sq: f64 = pairs
        .source()
        .data()
        .iter()
        .zip(pairs.output().data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (sq / pairs.source().len() as f64).sqrt()
}

fn check_point_set(t: &Tensor, op: &'static str) -> Result<(), TensorError> {
    if t.rank() != 2 || t.rows() == 0 {
        return Err(TensorError::Invalid {
            op,
            msg: format!("expected a nonempty (n, d) sample set, got shape {:?}", t.shape()),
        });
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Energy distance between two sample sets:
/// 2·E‖A−B‖ − E‖A−A′‖ − E‖B−B′‖, with V-statistic (all-pairs) estimates.
/// Zero iff the laws coincide; O(n²) pairwise distances.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64, TensorError> {
    check_point_set(a, "energy_distance")?;
    check_point_set(b, "energy_distance")?;
    if a.cols() != b.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "energy_distance",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (na, nb) = (a.rows(), b.rows());
    let mut cross = 0.0;
    for i in 0..na {
        let ra = a.row(i);
        for j in 0..nb {
            cross += dist(ra, b.row(j));
        }
    }
    cross /= (na * nb) as f64;
    let within = |t: &Tensor| {
        let n = t.rows();
        let mut acc = 0.0;
        for i in 0..n {
            let ri = t.row(i);
            for j in i + 1..n {
                acc += dist(ri, t.row(j));
            }
        }
        // All ordered pairs: double the upper triangle, diagonal is zero.
        2.0 * acc / (n * n) as f64
    };
    Ok(2.0 * cross - within(a) - within(b))
}

/// Sliced 2-Wasserstein distance: project both sets onto random unit
/// directions, match empirical quantiles in 1D, and return the root of the
/// mean squared quantile gap averaged over projections.
pub fn sliced_w2(
    a: &Tensor,
    b: &Tensor,
    n_projections: usize,
    rng: &mut Rng,
) -> Result<f64, TensorError> {
    check_point_set(a, "sliced_w2")?;
    check_point_set(b, "sliced_w2")?;
    if a.cols() != b.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "sliced_w2",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if n_projections == 0 {
        return Err(TensorError::Invalid { op: "sliced_w2", msg: "need at least one projection".into() });
    }
    let d = a.cols();
    let mut acc = 0.0;
    for _ in 0..n_projections {
        // Random unit direction from a spherical normal.
        let mut dir = rng.normal_vec(d);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut dir {
            *v /= norm;
        }
        let project = |t: &Tensor| {
            let mut proj: Vec<f64> = (0..t.rows())
                .map(|r| t.row(r).iter().zip(&dir).map(|(x, w)| x * w).sum())
                .collect();
            proj.sort_by(|x, y| x.partial_cmp(y).expect("finite projections"));
            proj
        };
        let pa = project(a);
        let pb = project(b);
        // Mean squared gap on a shared quantile grid (exact match when the
        // set sizes are equal; linear interpolation otherwise).
        let m = pa.len().max(pb.len());
        let quantile = |sorted: &[f64], q: f64| -> f64 {
            let pos = q * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] * (1.0 - frac) + sorted[hi] * frac
        };
        let mut w2 = 0.0;
        for i in 0..m {
            let q = if m == 1 { 0.5 } else { i as f64 / (m - 1) as f64 };
            let gap = quantile(&pa, q) - quantile(&pb, q);
            w2 += gap * gap;
        }
        acc += w2 / m as f64;
    }
    Ok((acc / n_projections as f64).sqrt())
}

/// Counts proper crossings among the straight segments x→y of a random
/// subsample of at most `subsample` pairs. Segments that merely share an
/// endpoint or touch at one do not count. Straight OT-like maps in the
/// plane produce no crossings; entangled maps produce many.
pub fn crossing_count(
    pairs: &PairSet,
    subsample: usize,
    rng: &mut Rng,
) -> Result<usize, TensorError> {
    if pairs.dim() != 2 {
        return Err(TensorError::Invalid {
            op: "crossing_count",
            msg: format!("crossings are defined in the plane; got dimension {}", pairs.dim()),
        });
    }
    if subsample == 0 || pairs.is_empty() {
        return Ok(0);
    }
    // Partial Fisher-Yates draw of distinct indices.
    let n = pairs.len();
    let m = subsample.min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = i + rng.below(n - i);
        indices.swap(i, j);
    }
    let seg = |idx: usize| -> ([f64; 2], [f64; 2]) {
        let s = pairs.source().row(indices[idx]);
        let o = pairs.output().row(indices[idx]);
        ([s[0], s[1]], [o[0], o[1]])
    };
    let orient = |a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]| -> f64 {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let mut count = 0;
    for i in 0..m {
        let (a, b) = seg(i);
        for j in i + 1..m {
            let (c, d) = seg(j);
            let o1 = orient(&a, &b, &c);
            let o2 = orient(&a, &b, &d);
            let o3 = orient(&c, &d, &a);
            let o4 = orient(&c, &d, &b);
            // Strictly opposite orientations on both segments: a proper
            // interior crossing. Any zero (collinear or endpoint touch)
            // is excluded by the strict inequalities.
            if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
                count += 1;
            }
        }
    }
    Ok(count)
}
