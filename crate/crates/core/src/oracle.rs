//! Closed-form Gaussian oracles.
//!
//! Everything trained in this crate can be checked against something exact:
//! perturbed scores of Gaussians and Gaussian mixtures, KL between
//! Gaussians, the pushforward law of a rotation/scale linear generator, the
//! distillation objective restricted to that family (a 2D surface in (r, α)),
//! and the optimal transport map between Gaussians.

use nalgebra::{DMatrix, DVector};

use crate::net::Denoise;
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Tensor, TensorError};

use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    /// A covariance failed its symmetric-positive-definite check.
    NotSpd { context: &'static str },
    /// Vector/matrix dimensions disagree.
    DimMismatch { context: &'static str, expected: usize, got: usize },
    /// Mixture weights are empty, negative, or sum to zero.
    BadWeights,
    /// Anything else (bad quadrature sizes, empty inputs, ...).
    Invalid { context: &'static str, msg: String },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::NotSpd { context } => {
                write!(f, "{context}: matrix is not symmetric positive definite")
            }
            OracleError::DimMismatch { context, expected, got } => {
                write!(f, "{context}: expected dimension {expected}, got {got}")
            }
            OracleError::BadWeights => write!(f, "mixture weights must be positive"),
            OracleError::Invalid { context, msg } => write!(f, "{context}: {msg}"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Symmetry tolerance for covariance inputs, relative to their magnitude.
const SYMMETRY_TOL: f64 = 1e-10;

/// A multivariate Gaussian with cached factorizations.
#[derive(Debug, Clone)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Lower Cholesky factor of the covariance.
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det_cov: f64,
}

impl GaussianDist {
    /// Builds from a mean and a row-major covariance, which must be
    /// symmetric positive definite.
    pub fn new(mean: &[f64], cov_row_major: &[f64]) -> Result<GaussianDist, OracleError> {
        let d = mean.len();
        if cov_row_major.len() != d * d {
            return Err(OracleError::DimMismatch {
                context: "gaussian",
                expected: d * d,
                got: cov_row_major.len(),
            });
        }
        let cov = DMatrix::from_row_slice(d, d, cov_row_major);
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        if (&cov - cov.transpose()).iter().any(|v| v.abs() > SYMMETRY_TOL * scale) {
            return Err(OracleError::NotSpd { context: "gaussian" });
        }
        let chol = cov.clone().cholesky().ok_or(OracleError::NotSpd { context: "gaussian" })?;
        let log_det_cov = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(GaussianDist {
            mean: DVector::from_column_slice(mean),
            precision: chol.inverse(),
            chol_lower: chol.l(),
            cov,
            log_det_cov,
        })
    }

    /// Isotropic Gaussian N(mean, variance·I).
    pub fn isotropic(mean: &[f64], variance: f64) -> Result<GaussianDist, OracleError> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = variance;
        }
        GaussianDist::new(mean, &cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Convolution with N(0, σ²I): the law of x + σε.
    pub fn perturbed(&self, sigma: f64) -> Result<GaussianDist, OracleError> {
        check_sigma(sigma)?;
        let d = self.dim();
        let mut cov = self.cov.clone();
        for i in 0..d {
            cov[(i, i)] += sigma * sigma;
        }
        let mean: Vec<f64> = self.mean.iter().copied().collect();
        let cov_rows: Vec<f64> = row_major(&cov);
        GaussianDist::new(&mean, &cov_rows)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, OracleError> {
        let diff = self.centered(x, "log_density")?;
        let quad = (&self.precision * &diff).dot(&diff);
        Ok(-0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.log_det_cov + quad))
    }

    /// Gradient of the log density, −Σ⁻¹(x − μ).
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let diff = self.centered(x, "score")?;
        Ok((-(&self.precision * diff)).iter().copied().collect())
    }

    /// Draws `n` samples as rows, via μ + L·z with L the Cholesky factor.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z = DVector::from_vec(rng.normal_vec(d));
            let x = &self.mean + &self.chol_lower * z;
            data.extend(x.iter());
        }
        Tensor::from_raw(vec![n, d], data)
    }

    fn centered(&self, x: &[f64], context: &'static str) -> Result<DVector<f64>, OracleError> {
        if x.len() != self.dim() {
            return Err(OracleError::DimMismatch { context, expected: self.dim(), got: x.len() });
        }
        Ok(DVector::from_column_slice(x) - &self.mean)
    }
}

fn check_sigma(sigma: f64) -> Result<(), OracleError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(OracleError::Invalid {
            context: "perturb",
            msg: format!("sigma must be nonnegative, got {sigma}"),
        });
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// KL(p ‖ q) between Gaussians, in nats:
/// ½ [tr(Σq⁻¹Σp) − d + (μq−μp)ᵀΣq⁻¹(μq−μp) + ln(det Σq / det Σp)].
pub fn kl_gaussian(p: &GaussianDist, q: &GaussianDist) -> Result<f64, OracleError> {
    if p.dim() != q.dim() {
        return Err(OracleError::DimMismatch {
            context: "kl_gaussian",
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let d = p.dim() as f64;
    let trace = (&q.precision * &p.cov).trace();
    let dm = &q.mean - &p.mean;
    let quad = (&q.precision * &dm).dot(&dm);
    Ok(0.5 * (trace - d + quad + q.log_det_cov - p.log_det_cov))
}

/// A finite Gaussian mixture. Weights are normalized at construction.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<GaussianDist>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianDist>) -> Result<GaussianMixture, OracleError> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(OracleError::BadWeights);
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(OracleError::BadWeights);
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(OracleError::DimMismatch { context: "mixture", expected: d, got: 0 });
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(GaussianMixture { weights, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianDist] {
        &self.components
    }

    pub fn perturbed(&self, sigma: f64) -> Result<GaussianMixture, OracleError> {
        let components = self
            .components
            .iter()
            .map(|c| c.perturbed(sigma))
            .collect::<Result<Vec<_>, _>>()?;
        GaussianMixture::new(self.weights.clone(), components)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, OracleError> {
        let mut terms = Vec::with_capacity(self.weights.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            terms.push(w.ln() + c.log_density(x)?);
        }
        Ok(log_sum_exp(&terms))
    }

    /// Mixture score: responsibility-weighted component scores.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut log_terms = Vec::with_capacity(self.weights.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            log_terms.push(w.ln() + c.log_density(x)?);
        }
        let log_total = log_sum_exp(&log_terms);
        let mut out = vec![0.0; self.dim()];
        for (lt, c) in log_terms.iter().zip(&self.components) {
            let resp = (lt - log_total).exp();
            for (o, s) in out.iter_mut().zip(c.score(x)?) {
                *o += resp * s;
            }
        }
        Ok(out)
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut pick = self.weights.len() - 1;
            for (k, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let row = self.components[pick].sample(1, rng);
            data.extend_from_slice(row.data());
        }
        Tensor::from_raw(vec![n, d], data)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// A reference density with closed-form perturbed scores: a Gaussian or a
/// Gaussian mixture. Acts as an exact denoiser via Tweedie's identity.
#[derive(Debug, Clone)]
pub enum AnalyticDist {
    Gaussian(GaussianDist),
    Mixture(GaussianMixture),
}

impl AnalyticDist {
    pub fn dim(&self) -> usize {
        match self {
            AnalyticDist::Gaussian(g) => g.dim(),
            AnalyticDist::Mixture(m) => m.dim(),
        }
    }

    /// Log density of the σ-perturbed law at a point. σ = 0 means the
    /// unperturbed density.
    pub fn perturbed_log_density(&self, sigma: f64, x: &[f64]) -> Result<f64, OracleError> {
        check_sigma(sigma)?;
        match self {
            AnalyticDist::Gaussian(g) => g.perturbed(sigma)?.log_density(x),
            AnalyticDist::Mixture(m) => m.perturbed(sigma)?.log_density(x),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        match self {
            AnalyticDist::Gaussian(g) => g.sample(n, rng),
            AnalyticDist::Mixture(m) => m.sample(n, rng),
        }
    }
}

/// Score of the σ-perturbed distribution at a point.
pub fn perturbed_score(dist: &AnalyticDist, sigma: f64, x: &[f64]) -> Result<Vec<f64>, OracleError> {
    check_sigma(sigma)?;
    match dist {
        AnalyticDist::Gaussian(g) => g.perturbed(sigma)?.score(x),
        AnalyticDist::Mixture(m) => m.perturbed(sigma)?.score(x),
    }
}

impl Denoise for AnalyticDist {
    /// Tweedie's identity: E[x₀ | x, σ] = x + σ²·∇log p_σ(x).
    fn denoise_batch(&self, x: &Tensor, sigmas: &[f64]) -> Result<Tensor, TensorError> {
        let to_tensor_err = |e: OracleError| TensorError::Invalid {
            op: "analytic_denoise",
            msg: e.to_string(),
        };
        let d = self.dim();
        if x.rank() != 2 || x.cols() != d {
            return Err(TensorError::Invalid {
                op: "analytic_denoise",
                msg: format!("expected rank-2 batch of dimension {d}, got shape {:?}", x.shape()),
            });
        }
        if sigmas.len() != 1 && sigmas.len() != x.rows() {
            return Err(TensorError::Invalid {
                op: "analytic_denoise",
                msg: format!("got {} noise levels for a batch of {}", sigmas.len(), x.rows()),
            });
        }
        // Factor each distinct perturbation once; the shared-σ case is the
        // common one, and per-row draws in training repeat levels rarely.
        let mut cache: Vec<(f64, AnalyticDist)> = Vec::new();
        let mut data = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            let sigma = sigmas[if sigmas.len() == 1 { 0 } else { r }];
            if cache.last().map(|(s, _)| *s != sigma).unwrap_or(true) {
                let perturbed = match self {
                    AnalyticDist::Gaussian(g) => {
                        AnalyticDist::Gaussian(g.perturbed(sigma).map_err(to_tensor_err)?)
                    }
                    AnalyticDist::Mixture(m) => {
                        AnalyticDist::Mixture(m.perturbed(sigma).map_err(to_tensor_err)?)
                    }
                };
                cache.push((sigma, perturbed));
            }
            let (_, perturbed) = cache.last().unwrap();
            let row = x.row(r);
            let score = match perturbed {
                AnalyticDist::Gaussian(g) => g.score(row).map_err(to_tensor_err)?,
                AnalyticDist::Mixture(m) => m.score(row).map_err(to_tensor_err)?,
            };
            let s2 = sigma * sigma;
            data.extend(row.iter().zip(score).map(|(xv, sv)| xv + s2 * sv));
        }
        Ok(Tensor::from_raw(vec![x.rows(), d], data))
    }
}

/// The linear generator family G(x) = r·C(α)·x with C(α) a plane rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotScaleGenerator {
    pub r: f64,
    pub alpha: f64,
}

impl RotScaleGenerator {
    /// The 2×2 matrix r·C(α), row-major.
    pub fn matrix(&self) -> [f64; 4] {
        let (s, c) = self.alpha.sin_cos();
        [self.r * c, -self.r * s, self.r * s, self.r * c]
    }

    /// Applies the map to a batch of row points.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        if x.rank() != 2 || x.cols() != 2 {
            return Err(TensorError::Invalid {
                op: "rot_scale_apply",
                msg: format!("expected (n, 2) points, got {:?}", x.shape()),
            });
        }
        let m = self.matrix();
        let mut data = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            let p = x.row(r);
            data.push(m[0] * p[0] + m[1] * p[1]);
            data.push(m[2] * p[0] + m[3] * p[1]);
        }
        Ok(Tensor::from_raw(vec![x.rows(), 2], data))
    }

    /// Mean transport cost E‖x − G(x)‖² under x ~ N(0, I₂):
    /// the squared Frobenius norm of I − r·C(α), i.e. 2(1 + r² − 2r·cos α).
    pub fn transport_cost(&self) -> f64 {
        2.0 * (1.0 + self.r * self.r - 2.0 * self.r * self.alpha.cos())
    }
}

/// Law of G(x) + σε for x ~ N(0, I₂): the rotation drops out, leaving
/// N(0, (r² + σ²)·I₂).
pub fn pushforward_law(generator: &RotScaleGenerator, sigma: f64) -> Result<GaussianDist, OracleError> {
    check_sigma(sigma)?;
    let variance = generator.r * generator.r + sigma * sigma;
    if variance <= 0.0 {
        return Err(OracleError::NotSpd { context: "pushforward" });
    }
    GaussianDist::isotropic(&[0.0, 0.0], variance)
}

/// Weighting of the KL-across-noise-levels term in the analytic objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceWeight {
    /// Constant 1/T over the full band [sigma_min, t_max]; the default for
    /// plotting the landscape.
    ConstantOverHorizon,
    /// σ_t² times the log-uniform sampling density on [lo, hi]. This is the
    /// exact expected objective of the stochastic trainer in σ²-constant
    /// weighting mode, which makes gradients comparable one-to-one.
    SigmaSqLogUniform { lo: f64, hi: f64 },
}

/// One evaluation of the analytic objective surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceValue {
    /// Weighted integral of KL(pushforward_t ‖ target_t) over noise levels.
    pub kl_term: f64,
    /// Mean squared transport cost of the linear map (λ-free).
    pub cost_term: f64,
    /// kl_term + lambda·cost_term.
    pub total: f64,
}

/// Evaluates the distillation objective for the linear generator family
/// against the isotropic target N(0, sigma_target²·I₂), by composite
/// Simpson quadrature in log σ with `intervals` panels (even, ≥ 2).
pub fn rdmd_surface(
    generator: &RotScaleGenerator,
    lambda: f64,
    sigma_target: f64,
    schedule: &NoiseSchedule,
    weight: &SurfaceWeight,
    intervals: usize,
) -> Result<SurfaceValue, OracleError> {
    if intervals < 2 || intervals % 2 != 0 {
        return Err(OracleError::Invalid {
            context: "rdmd_surface",
            msg: format!("Simpson quadrature needs an even interval count >= 2, got {intervals}"),
        });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(OracleError::Invalid {
            context: "rdmd_surface",
            msg: format!("lambda must be nonnegative, got {lambda}"),
        });
    }
    let (lo, hi) = match *weight {
        SurfaceWeight::ConstantOverHorizon => (schedule.sigma_min, schedule.t_max),
        SurfaceWeight::SigmaSqLogUniform { lo, hi } => (lo, hi),
    };
    if !(lo > 0.0 && hi > lo) {
        return Err(OracleError::Invalid {
            context: "rdmd_surface",
            msg: format!("bad integration band [{lo}, {hi}]"),
        });
    }
    // KL between the isotropic 2D laws at noise level t:
    //   KL(N(0, a·I₂) ‖ N(0, b·I₂)) = a/b − 1 + ln(b/a),
    // with a = r² + t² and b = sigma_target² + t².
    let r2 = generator.r * generator.r;
    let tgt2 = sigma_target * sigma_target;
    let kl_at = |t: f64| {
        let a = r2 + t * t;
        let b = tgt2 + t * t;
        a / b - 1.0 + (b / a).ln()
    };
    // Integrate f(t)·KL(t) dt in u = ln t: ∫ f(e^u)·KL(e^u)·e^u du.
    let integrand_u = |u: f64| {
        let t = u.exp();
        let weight_value = match *weight {
            SurfaceWeight::ConstantOverHorizon => 1.0 / schedule.t_max,
            // σ_t² × density 1/(t·ln(hi/lo)).
            SurfaceWeight::SigmaSqLogUniform { lo, hi } => t * t / (t * (hi / lo).ln()),
        };
        weight_value * kl_at(t) * t
    };
    let (u_lo, u_hi) = (lo.ln(), hi.ln());
    let h = (u_hi - u_lo) / intervals as f64;
    let mut acc = integrand_u(u_lo) + integrand_u(u_hi);
    for i in 1..intervals {
        let coeff = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += coeff * integrand_u(u_lo + i as f64 * h);
    }
    let kl_term = acc * h / 3.0;
    let cost_term = generator.transport_cost();
    Ok(SurfaceValue { kl_term, cost_term, total: kl_term + lambda * cost_term })
}

/// An affine map x ↦ A·x + b.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x) + &self.offset).iter().copied().collect()
    }

    pub fn apply_batch(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let d = self.offset.len();
        if x.rank() != 2 || x.cols() != d {
            return Err(TensorError::Invalid {
                op: "affine_apply",
                msg: format!("expected (n, {d}) points, got {:?}", x.shape()),
            });
        }
        let mut data = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            data.extend(self.apply(x.row(r)));
        }
        Ok(Tensor::from_raw(vec![x.rows(), d], data))
    }
}

/// Optimal transport map between Gaussians under quadratic cost:
/// x ↦ μ_t + Σs^{-1/2}·(Σs^{1/2}·Σt·Σs^{1/2})^{1/2}·Σs^{-1/2}·(x − μ_s).
pub fn ot_map_gaussian(source: &GaussianDist, target: &GaussianDist) -> Result<AffineMap, OracleError> {
    if source.dim() != target.dim() {
        return Err(OracleError::DimMismatch {
            context: "ot_map",
            expected: source.dim(),
            got: target.dim(),
        });
    }
    let s_sqrt = spd_power(&source.cov, 0.5, "ot_map source")?;
    let s_inv_sqrt = spd_power(&source.cov, -0.5, "ot_map source")?;
    let inner = &s_sqrt * &target.cov * &s_sqrt;
    let inner_sqrt = spd_power(&inner, 0.5, "ot_map inner")?;
    let matrix = &s_inv_sqrt * inner_sqrt * s_inv_sqrt;
    let offset = &target.mean - &matrix * &source.mean;
    Ok(AffineMap { matrix, offset })
}

/// M^p for symmetric positive-definite M via eigendecomposition. Symmetrizes
/// the input first (products of SPD factors accumulate asymmetry in the last
/// ulp) and rejects matrices with meaningfully negative eigenvalues.
fn spd_power(m: &DMatrix<f64>, p: f64, context: &'static str) -> Result<DMatrix<f64>, OracleError> {
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    if (m - m.transpose()).iter().any(|v| v.abs() > SYMMETRY_TOL * scale) {
        return Err(OracleError::NotSpd { context });
    }
    let (rows, cols) = (sym.nrows(), sym.ncols());
    let eig = sym.symmetric_eigen();
    let mut powered = eig.eigenvalues.clone();
    for v in powered.iter_mut() {
        if *v <= 0.0 || (p < 0.0 && *v < SYMMETRY_TOL * scale) {
            return Err(OracleError::NotSpd { context });
        }
        *v = v.powf(p);
    }
    let mut out = DMatrix::zeros(rows, cols);
    for (k, lambda) in powered.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        out += *lambda * &v * v.transpose();
    }
    Ok(out)
}
