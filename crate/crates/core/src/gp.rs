//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! The posterior keeps a packed lower-triangular Cholesky factor of
//! `K + diag(noise) + jitter * I` built row by row, so a new observation can
//! be appended in O(n^2) while the hyperparameters stay fixed. Every fitted
//! posterior is immutable from the caller's point of view except through
//! [`GpPosterior::push`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Position;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Jitter ladder, as multiples of the kernel amplitude.
const JITTER_START: f64 = 1e-9;
const JITTER_MAX: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("Gram matrix is not positive definite even with jitter {jitter:e}")]
    FactorizationFailure { jitter: f64 },
    #[error("hyperparameter search needs at least {needed} points (got {got})")]
    TooFewPoints { needed: usize, got: usize },
    #[error("hyperparameter search grid is empty")]
    EmptyGrid,
    #[error("every hyperparameter candidate failed to factorize")]
    AllCandidatesFailed,
}

/// Covariance function seam. Only the RBF kernel ships.
pub trait Kernel {
    fn covariance(&self, a: &Position, b: &Position) -> f64;
    /// `k(x, x)`, the prior variance at any point.
    fn prior_variance(&self) -> f64;
}

/// RBF amplitude `v`, length scale `l` and homoscedastic noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub amplitude: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(amplitude: f64, length_scale: f64, noise_variance: f64) -> Result<Self, GpError> {
        let p = Self {
            amplitude,
            length_scale,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(GpError::InvalidParams(format!(
                "amplitude must be finite and > 0, got {}",
                self.amplitude
            )));
        }
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(GpError::InvalidParams(format!(
                "length_scale must be finite and > 0, got {}",
                self.length_scale
            )));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(GpError::InvalidParams(format!(
                "noise_variance must be finite and >= 0, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

impl Kernel for KernelParams {
    #[inline]
    fn covariance(&self, a: &Position, b: &Position) -> f64 {
        kernel_eval(self, a, b)
    }

    fn prior_variance(&self) -> f64 {
        self.amplitude
    }
}

/// `v * exp(-|a - b|^2 / (2 l^2))`.
#[inline]
pub fn kernel_eval(p: &KernelParams, a: &Position, b: &Position) -> f64 {
    let l2 = p.length_scale * p.length_scale;
    p.amplitude * (-a.squared_distance(b) / (2.0 * l2)).exp()
}

/// Measurement pairs with optional per-point extra noise on top of the
/// kernel's homoscedastic noise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledDataset {
    points: Vec<Position>,
    values: Vec<f64>,
    extra_noise: Option<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(points: Vec<Position>, values: Vec<f64>) -> Result<Self, GpError> {
        if points.len() != values.len() {
            return Err(GpError::InvalidData(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(GpError::InvalidData(format!("non-finite value {v}")));
        }
        Ok(Self {
            points,
            values,
            extra_noise: None,
        })
    }

    pub fn with_extra_noise(
        points: Vec<Position>,
        values: Vec<f64>,
        extra_noise: Vec<f64>,
    ) -> Result<Self, GpError> {
        let mut d = Self::new(points, values)?;
        if extra_noise.len() != d.len() {
            return Err(GpError::InvalidData(format!(
                "{} extra-noise terms for {} points",
                extra_noise.len(),
                d.len()
            )));
        }
        if let Some(e) = extra_noise.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(GpError::InvalidData(format!("extra noise {e} must be >= 0")));
        }
        d.extra_noise = Some(extra_noise);
        Ok(d)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Position] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn extra_noise(&self, i: usize) -> f64 {
        self.extra_noise.as_ref().map_or(0.0, |e| e[i])
    }

    pub fn extra_noise_all(&self) -> Option<&[f64]> {
        self.extra_noise.as_deref()
    }

    pub fn push(&mut self, point: Position, value: f64, extra_noise: f64) {
        if extra_noise != 0.0 && self.extra_noise.is_none() {
            self.extra_noise = Some(vec![0.0; self.points.len()]);
        }
        if let Some(e) = self.extra_noise.as_mut() {
            e.push(extra_noise);
        }
        self.points.push(point);
        self.values.push(value);
    }

    /// Same points and noise with `delta` added to every value.
    pub fn offset(&self, delta: f64) -> LabeledDataset {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v += delta);
        out
    }

    /// Concatenate `other` after `self`, keeping per-point noise.
    pub fn concat(&self, other: &LabeledDataset) -> LabeledDataset {
        let mut out = self.clone();
        for i in 0..other.len() {
            out.push(other.points[i], other.values[i], other.extra_noise(i));
        }
        out
    }
}

/// Posterior mean and variance at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Zero-mean GP prior at any point.
pub fn predict_prior(params: &KernelParams) -> Prediction {
    Prediction {
        mean: 0.0,
        variance: params.amplitude,
    }
}

/// Outcome of appending an observation to a fitted posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    /// The factor grew by one row; earlier rows are untouched.
    Appended,
    /// The new point forced a jitter increase and a full refactorization.
    Refactored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    params: KernelParams,
    training: LabeledDataset,
    prior_mean: Vec<f64>,
    /// Packed rows of the lower Cholesky factor: row `i` has `i + 1` entries.
    chol: Vec<f64>,
    /// `L^{-1} (y - m)`.
    whitened_residual: Vec<f64>,
    /// `(K + noise)^{-1} (y - m)`.
    dual_weights: Vec<f64>,
    jitter: f64,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GpPosterior {
    /// Fit the posterior. `prior_mean`, when given, holds the prior mean at
    /// each training point; the prior mean elsewhere is zero.
    pub fn fit(
        params: KernelParams,
        data: LabeledDataset,
        prior_mean: Option<&[f64]>,
    ) -> Result<Self, GpError> {
        params.validate()?;
        if data.is_empty() {
            return Err(GpError::InvalidData("cannot fit on an empty dataset".into()));
        }
        let prior_mean = match prior_mean {
            Some(m) if m.len() != data.len() => {
                return Err(GpError::InvalidData(format!(
                    "prior mean has {} entries for {} points",
                    m.len(),
                    data.len()
                )))
            }
            Some(m) => m.to_vec(),
            None => vec![0.0; data.len()],
        };
        Self::factorize(params, data, prior_mean, JITTER_START * params.amplitude)
    }

    fn factorize(
        params: KernelParams,
        training: LabeledDataset,
        prior_mean: Vec<f64>,
        mut jitter: f64,
    ) -> Result<Self, GpError> {
        let ceiling = JITTER_MAX * params.amplitude * (1.0 + 1e-12);
        loop {
            if let Some(chol) = build_cholesky(&params, &training, jitter) {
                let mut post = Self {
                    params,
                    training,
                    prior_mean,
                    chol,
                    whitened_residual: Vec::new(),
                    dual_weights: Vec::new(),
                    jitter,
                };
                post.solve_weights();
                return Ok(post);
            }
            jitter *= 10.0;
            if jitter > ceiling {
                return Err(GpError::FactorizationFailure { jitter: jitter / 10.0 });
            }
        }
    }

    fn solve_weights(&mut self) {
        let residual: Vec<f64> = self
            .training
            .values
            .iter()
            .zip(&self.prior_mean)
            .map(|(y, m)| y - m)
            .collect();
        self.whitened_residual = self.forward_solve(&residual);
        self.dual_weights = self.backward_solve(&self.whitened_residual);
    }

    /// Solve `L x = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        debug_assert_eq!(b.len(), n);
        let mut x = Vec::with_capacity(n);
        for (i, bi) in b.iter().enumerate() {
            let row = &self.chol[row_start(i)..row_start(i) + i + 1];
            let s = bi - dot(&row[..i], &x);
            x.push(s / row[i]);
        }
        x
    }

    /// Solve `L^T x = b`.
    fn backward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let row = &self.chol[row_start(i)..row_start(i) + i + 1];
            x[i] /= row[i];
            let xi = x[i];
            for (xj, lij) in x[..i].iter_mut().zip(&row[..i]) {
                *xj -= lij * xi;
            }
        }
        x
    }

    pub fn len(&self) -> usize {
        self.training.len()
    }

    pub fn is_empty(&self) -> bool {
        self.training.is_empty()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn training(&self) -> &LabeledDataset {
        &self.training
    }

    pub fn prior_mean_at_points(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn dual_weights(&self) -> &[f64] {
        &self.dual_weights
    }

    pub fn whitened_residual(&self) -> &[f64] {
        &self.whitened_residual
    }

    /// Diagonal jitter actually used for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Row `i` of the Cholesky factor, diagonal last.
    pub fn cholesky_row(&self, i: usize) -> &[f64] {
        &self.chol[row_start(i)..row_start(i) + i + 1]
    }

    /// Total noise on the Gram diagonal for training point `i`, jitter excluded.
    pub fn noise_at(&self, i: usize) -> f64 {
        self.params.noise_variance + self.training.extra_noise(i)
    }

    /// Kernel vector between the training points and `x`.
    pub fn kernel_vector(&self, x: &Position) -> Vec<f64> {
        self.training
            .points
            .iter()
            .map(|p| kernel_eval(&self.params, p, x))
            .collect()
    }

    /// Posterior mean only, O(n).
    pub fn predict_mean(&self, x: &Position) -> f64 {
        self.training
            .points
            .iter()
            .zip(&self.dual_weights)
            .map(|(p, w)| kernel_eval(&self.params, p, x) * w)
            .sum()
    }

    pub fn predict(&self, x: &Position) -> Prediction {
        let k = self.kernel_vector(x);
        let mean = dot(&k, &self.dual_weights);
        let w = self.forward_solve(&k);
        let variance = clamp_variance(self.params.amplitude - dot(&w, &w), self.params.amplitude);
        Prediction { mean, variance }
    }

    pub fn predict_many(&self, xs: &[Position]) -> Vec<Prediction> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Append one observation without refactorizing the existing rows.
    pub fn push(
        &mut self,
        point: Position,
        value: f64,
        extra_noise: f64,
        prior_mean: f64,
    ) -> Result<Extension, GpError> {
        if !value.is_finite() || !prior_mean.is_finite() {
            return Err(GpError::InvalidData(format!("non-finite value {value}")));
        }
        if !(extra_noise.is_finite() && extra_noise >= 0.0) {
            return Err(GpError::InvalidData(format!("extra noise {extra_noise} must be >= 0")));
        }
        let k = self.kernel_vector(&point);
        let l = self.forward_solve(&k);
        let diag = self.params.amplitude + self.params.noise_variance + extra_noise + self.jitter;
        let d2 = diag - dot(&l, &l);

        self.training.push(point, value, extra_noise);
        self.prior_mean.push(prior_mean);
        if d2 > 0.0 && d2.is_finite() {
            let d = d2.sqrt();
            let z_new = (value - prior_mean - dot(&l, &self.whitened_residual)) / d;
            self.chol.extend_from_slice(&l);
            self.chol.push(d);
            self.whitened_residual.push(z_new);
            self.dual_weights = self.backward_solve(&self.whitened_residual);
            Ok(Extension::Appended)
        } else {
            let training = std::mem::take(&mut self.training);
            let prior = std::mem::take(&mut self.prior_mean);
            *self = Self::factorize(self.params, training, prior, self.jitter * 10.0)?;
            Ok(Extension::Refactored)
        }
    }

    /// Exact log marginal likelihood of the training values under the prior.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len();
        let fit = dot(&self.whitened_residual, &self.whitened_residual);
        let log_det: f64 = (0..n).map(|i| self.chol[row_start(i) + i].ln()).sum();
        -0.5 * fit - log_det - 0.5 * n as f64 * LN_2PI
    }
}

pub(crate) fn clamp_variance(v: f64, amplitude: f64) -> f64 {
    v.clamp(0.0, amplitude)
}

fn build_cholesky(params: &KernelParams, data: &LabeledDataset, jitter: f64) -> Option<Vec<f64>> {
    let n = data.len();
    let mut chol = Vec::with_capacity(row_start(n));
    let mut k = vec![0.0; n];
    for i in 0..n {
        let pi = data.points[i];
        for (j, kj) in k[..i].iter_mut().enumerate() {
            *kj = kernel_eval(params, &data.points[j], &pi);
        }
        // forward substitution against the rows built so far
        let start = chol.len();
        for j in 0..i {
            let rj = &chol[row_start(j)..row_start(j) + j + 1];
            let s = k[j] - dot(&rj[..j], &chol[start..start + j]);
            chol.push(s / rj[j]);
        }
        let l = &chol[start..start + i];
        let d2 = params.amplitude + params.noise_variance + data.extra_noise(i) + jitter - dot(l, l);
        if !(d2 > 0.0 && d2.is_finite()) {
            return None;
        }
        chol.push(d2.sqrt());
    }
    Some(chol)
}

/// Pick the candidate with the largest exact log marginal likelihood.
/// Candidates that fail to factorize are skipped; ties keep the earliest.
pub fn select_hyperparameters(
    data: &LabeledDataset,
    search_grid: &[KernelParams],
) -> Result<KernelParams, GpError> {
    if data.len() < 2 {
        return Err(GpError::TooFewPoints {
            needed: 2,
            got: data.len(),
        });
    }
    if search_grid.is_empty() {
        return Err(GpError::EmptyGrid);
    }
    let mut best: Option<(f64, KernelParams)> = None;
    for candidate in search_grid {
        let Ok(post) = GpPosterior::fit(*candidate, data.clone(), None) else {
            continue;
        };
        let score = post.log_marginal_likelihood();
        if score.is_nan() {
            continue;
        }
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, *candidate));
        }
    }
    best.map(|(_, p)| p).ok_or(GpError::AllCandidatesFailed)
}

/// Amplitude multipliers applied to the output scale.
pub const AMPLITUDE_FACTORS: [f64; 3] = [0.25, 1.0, 4.0];
/// Length scales as fractions of the domain diagonal.
pub const LENGTH_FRACTIONS: [f64; 5] = [0.025, 0.05, 0.10, 0.20, 0.40];
/// Noise variances as fractions of the output scale.
pub const NOISE_FRACTIONS: [f64; 3] = [0.001, 0.01, 0.1];

/// Output scale of a zero-mean GP: the mean squared value about zero.
/// Falls back to 1 when every value is zero or there is no data.
pub fn output_scale(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let s = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Log-spaced default grid (45 candidates), amplitude-major order.
pub fn default_search_grid(domain_diagonal: f64, values: &[f64]) -> Vec<KernelParams> {
    let scale = output_scale(values);
    let diag = if domain_diagonal > 0.0 { domain_diagonal } else { 1.0 };
    let mut grid = Vec::with_capacity(45);
    for a in AMPLITUDE_FACTORS {
        for l in LENGTH_FRACTIONS {
            for s in NOISE_FRACTIONS {
                grid.push(KernelParams {
                    amplitude: a * scale,
                    length_scale: l * diag,
                    noise_variance: s * scale,
                });
            }
        }
    }
    grid
}

/// Kernel parameters relative to the data: multiples of the output scale
/// and a fraction of the domain diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelShape {
    pub amplitude_factor: f64,
    pub length_fraction: f64,
    pub noise_fraction: f64,
}

impl KernelShape {
    pub const DEFAULT: KernelShape = KernelShape {
        amplitude_factor: 0.25,
        length_fraction: 0.05,
        noise_fraction: 0.01,
    };

    pub fn params(&self, domain_diagonal: f64, values: &[f64]) -> KernelParams {
        let scale = output_scale(values);
        let diag = if domain_diagonal > 0.0 { domain_diagonal } else { 1.0 };
        KernelParams {
            amplitude: self.amplitude_factor * scale,
            length_scale: self.length_fraction * diag,
            noise_variance: self.noise_fraction * scale,
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.amplitude_factor)
            && ok(self.length_fraction)
            && self.noise_fraction.is_finite()
            && self.noise_fraction >= 0.0
        {
            Ok(())
        } else {
            Err(GpError::InvalidParams(format!("invalid kernel shape {self:?}")))
        }
    }
}

impl Default for KernelShape {
    fn default() -> Self {
        Self::DEFAULT
    }
}
