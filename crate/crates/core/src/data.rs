//! Source and target samplers for the 2D experiments.
//!
//! Two laws cover everything here: the unit Gaussian (the translation
//! source) and the ring of eight Gaussians (the classic hard 2D target:
//! mode-seeking objectives drop modes, mode-covering ones bridge them).

use crate::oracle::{AnalyticDist, GaussianDist, GaussianMixture};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

use std::f64::consts::PI;

/// Default evaluation-set size for experiments.
pub const DEFAULT_SAMPLE_COUNT: usize = 5000;

/// Geometry of the eight-Gaussians ring: equal-weight isotropic components
/// at angles k·45° on a circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EightGaussiansSpec {
    pub radius: f64,
    pub component_std: f64,
}

impl Default for EightGaussiansSpec {
    fn default() -> EightGaussiansSpec {
        EightGaussiansSpec { radius: 10.0, component_std: 0.5 }
    }
}

impl EightGaussiansSpec {
    pub fn centers(&self) -> [[f64; 2]; 8] {
        std::array::from_fn(|k| {
            let angle = k as f64 * PI / 4.0;
            [self.radius * angle.cos(), self.radius * angle.sin()]
        })
    }
}

/// n standard-normal points in the plane, rows are points.
pub fn sample_source_gaussian(n: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_raw(vec![n, 2], rng.normal_vec(2 * n))
}

/// n draws from the eight-Gaussians ring: uniform component, then an
/// isotropic normal around its center.
pub fn sample_8gaussians(n: usize, spec: &EightGaussiansSpec, rng: &mut Rng) -> Tensor {
    let centers = spec.centers();
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let c = centers[rng.below(8)];
        data.push(c[0] + spec.component_std * rng.normal());
        data.push(c[1] + spec.component_std * rng.normal());
    }
    Tensor::from_raw(vec![n, 2], data)
}

/// The same ring as an analytic mixture, for closed-form scores.
pub fn eight_gaussians_mixture(spec: &EightGaussiansSpec) -> GaussianMixture {
    let var = spec.component_std * spec.component_std;
    let components = spec
        .centers()
        .iter()
        .map(|c| GaussianDist::isotropic(c, var).expect("isotropic component is SPD"))
        .collect();
    GaussianMixture::new(vec![1.0; 8], components).expect("weights are valid")
}

/// A named sampleable law, used for both sources and targets.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    UnitGaussian,
    EightGaussians(EightGaussiansSpec),
}

impl DataSpec {
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        match self {
            DataSpec::UnitGaussian => sample_source_gaussian(n, rng),
            DataSpec::EightGaussians(spec) => sample_8gaussians(n, spec, rng),
        }
    }

    /// The law as an analytic density (exact scores, exact denoising).
    pub fn analytic(&self) -> AnalyticDist {
        match self {
            DataSpec::UnitGaussian => AnalyticDist::Gaussian(
                GaussianDist::isotropic(&[0.0, 0.0], 1.0).expect("unit covariance is SPD"),
            ),
            DataSpec::EightGaussians(spec) => {
                AnalyticDist::Mixture(eight_gaussians_mixture(spec))
            }
        }
    }
}

/// Matched (source point, mapped point) rows; the unit the translation
/// metrics consume.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    source: Tensor,
    output: Tensor,
}

impl PairSet {
    pub fn new(source: Tensor, output: Tensor) -> Result<PairSet, TensorError> {
        if source.rank() != 2 || source.shape() != output.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "pair_set",
                lhs: source.shape().to_vec(),
                rhs: output.shape().to_vec(),
            });
        }
        Ok(PairSet { source, output })
    }

    pub fn source(&self) -> &Tensor {
        &self.source
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn len(&self) -> usize {
        self.source.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.source.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samplers_are_seed_deterministic() {
        let spec = EightGaussiansSpec::default();
        let a = sample_8gaussians(500, &spec, &mut Rng::new(4));
        let b = sample_8gaussians(500, &spec, &mut Rng::new(4));
        assert_eq!(a, b);
        let c = sample_source_gaussian(500, &mut Rng::new(4));
        let d = sample_source_gaussian(500, &mut Rng::new(4));
        assert_eq!(c, d);
        assert_ne!(a, c);
    }

    #[test]
    fn ring_center_of_mass_is_origin() {
        let spec = EightGaussiansSpec::default();
        let centers = spec.centers();
        let (mut sx, mut sy) = (0.0, 0.0);
        for c in centers {
            sx += c[0];
            sy += c[1];
            assert!(((c[0] * c[0] + c[1] * c[1]).sqrt() - 10.0).abs() < 1e-12);
        }
        assert!(sx.abs() < 1e-12 && sy.abs() < 1e-12);
    }

    #[test]
    fn ring_sample_moments() {
        // Mean 0; covariance (s² + R²/2)·I = 50.25·I for the default ring.
        let spec = EightGaussiansSpec::default();
        let n = 200_000;
        let x = sample_8gaussians(n, &spec, &mut Rng::new(11));
        let mut mean = [0.0; 2];
        for r in 0..n {
            mean[0] += x.row(r)[0];
            mean[1] += x.row(r)[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        assert!(mean[0].abs() < 0.1 && mean[1].abs() < 0.1, "{mean:?}");
        let mut var = [0.0; 2];
        let mut cross = 0.0;
        for r in 0..n {
            let p = x.row(r);
            var[0] += (p[0] - mean[0]).powi(2);
            var[1] += (p[1] - mean[1]).powi(2);
            cross += (p[0] - mean[0]) * (p[1] - mean[1]);
        }
        for v in &mut var {
            *v /= n as f64;
        }
        cross /= n as f64;
        assert!((var[0] - 50.25).abs() < 0.6, "{var:?}");
        assert!((var[1] - 50.25).abs() < 0.6, "{var:?}");
        assert!(cross.abs() < 0.5, "{cross}");
    }

    #[test]
    fn source_moments() {
        let n = 200_000;
        let x = sample_source_gaussian(n, &mut Rng::new(12));
        let mean: f64 = x.data().iter().sum::<f64>() / (2.0 * n as f64);
        let var: f64 = x.data().iter().map(|v| v * v).sum::<f64>() / (2.0 * n as f64);
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn mixture_agrees_with_sampler_geometry() {
        let spec = EightGaussiansSpec::default();
        let mixture = eight_gaussians_mixture(&spec);
        assert_eq!(mixture.components().len(), 8);
        for (c, expected) in mixture.components().iter().zip(spec.centers()) {
            assert!((c.mean()[0] - expected[0]).abs() < 1e-12);
            assert!((c.mean()[1] - expected[1]).abs() < 1e-12);
            assert!((c.cov()[(0, 0)] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_set_rejects_mismatched_shapes() {
        let a = Tensor::zeros(vec![5, 2]);
        let b = Tensor::zeros(vec![4, 2]);
        assert!(PairSet::new(a, b).is_err());
    }
}
