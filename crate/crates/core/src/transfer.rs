//! Instance transfer from a previously measured surface.
//!
//! The difference between target and source is modelled with a GP fitted on
//! target residuals `y_i - mu'(x_i)` (optionally after an affine shift of the
//! source mean). Source observations are then relabelled as
//! `y'_j + mu_diff(x'_j)` and appended to the target training set with
//! per-point noise `sigma^2 + sigma'^2(x'_j)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Position;
use crate::gp::{
    default_search_grid, select_hyperparameters, GpError, GpPosterior, KernelParams,
    KernelShape, LabeledDataset,
};

/// Variance of the source mean over the target points below which the scale
/// parameter is treated as unidentifiable.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// The same floor relative to the variance of the source values: target
/// points that all sit on a flat stretch of the source say nothing about
/// the scale.
pub const DEGENERATE_FRACTION: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("target dataset is empty")]
    EmptyTarget,
    #[error("source dataset is empty")]
    EmptySource,
    #[error("source mean does not explain the target points; falling back to gamma={gamma}, eta={eta}")]
    DegenerateDesign { gamma: f64, eta: f64 },
    #[error("invalid transfer settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Which source value the location-scale variant starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LssBase {
    /// `y'_j + mu_diff(x'_j)`.
    Raw,
    /// `gamma * y'_j + eta + mu_diff(x'_j)`.
    #[default]
    Shifted,
}

impl std::str::FromStr for LssBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "shifted" => Ok(Self::Shifted),
            other => Err(format!("unknown lss_base '{other}' (expected raw|shifted)")),
        }
    }
}

/// Source observations together with the GP fitted on them.
#[derive(Debug, Clone)]
pub struct SourceDataset {
    data: LabeledDataset,
    posterior: GpPosterior,
    variance_at_points: Vec<f64>,
    value_variance: f64,
}

impl SourceDataset {
    /// Keep every `stride`-th observation, select hyperparameters by
    /// marginal likelihood and fit the source posterior.
    pub fn fit(data: LabeledDataset, stride: usize) -> Result<Self, TransferError> {
        let data = thin(&data, stride)?;
        let diag = bounding_diagonal(data.points());
        let params = if data.len() >= 2 {
            select_hyperparameters(&data, &default_search_grid(diag, data.values()))?
        } else {
            KernelShape::DEFAULT.params(diag, data.values())
        };
        Self::with_params(data, params)
    }

    pub fn with_params(data: LabeledDataset, params: KernelParams) -> Result<Self, TransferError> {
        if data.is_empty() {
            return Err(TransferError::EmptySource);
        }
        let posterior = GpPosterior::fit(params, data.clone(), None)?;
        let variance_at_points = data
            .points()
            .iter()
            .map(|p| posterior.predict(p).variance)
            .collect();
        let ys = data.values();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let value_variance = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        Ok(Self {
            data,
            posterior,
            variance_at_points,
            value_variance,
        })
    }

    pub fn data(&self) -> &LabeledDataset {
        &self.data
    }

    pub fn posterior(&self) -> &GpPosterior {
        &self.posterior
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `sigma'^2` at each source point.
    pub fn variance_at_points(&self) -> &[f64] {
        &self.variance_at_points
    }
}

fn thin(data: &LabeledDataset, stride: usize) -> Result<LabeledDataset, TransferError> {
    if stride == 0 {
        return Err(TransferError::InvalidSettings("source stride must be >= 1".into()));
    }
    if stride == 1 {
        return Ok(data.clone());
    }
    let mut out = LabeledDataset::empty();
    for i in (0..data.len()).step_by(stride) {
        out.push(data.points()[i], data.values()[i], data.extra_noise(i));
    }
    Ok(out)
}

fn bounding_diagonal(points: &[Position]) -> f64 {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let d = (x1 - x0).hypot(y1 - y0);
    if d.is_finite() && d > 0.0 {
        d
    } else {
        1.0
    }
}

/// Source points relabelled as pseudo-target observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedDataset {
    pub points: Vec<Position>,
    pub values: Vec<f64>,
    /// `sigma'^2(x'_j)`, the source posterior variance at each point.
    pub source_variance: Vec<f64>,
    /// Target observation noise `sigma^2`.
    pub target_noise: f64,
    /// `(gamma, eta)`; `(1, 0)` for plain Diff-GP.
    pub shift: (f64, f64),
    /// Set when the scale parameter could not be identified.
    pub degenerate: bool,
}

impl TransformedDataset {
    /// Untouched copy of the source, used before any target data exists.
    pub fn passthrough(source: &SourceDataset, params: &KernelParams) -> Self {
        Self {
            points: source.data.points().to_vec(),
            values: source.data.values().to_vec(),
            source_variance: source.variance_at_points.clone(),
            target_noise: params.noise_variance,
            shift: (1.0, 0.0),
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `sigma^2 + sigma'^2(x'_j)`.
    pub fn per_point_noise(&self) -> Vec<f64> {
        self.source_variance
            .iter()
            .map(|s| self.target_noise + s)
            .collect()
    }
}

/// Plain Diff-GP relabelling.
pub fn diff_gp_transform(
    target: &LabeledDataset,
    source: &SourceDataset,
    params: &KernelParams,
) -> Result<TransformedDataset, TransferError> {
    transform_with_shift(target, source, params, 1.0, 0.0, LssBase::Raw, false)
}

/// Ordinary least squares fit of `y_i ~ gamma * mu'(x_i) + eta`.
pub fn lss_fit(target: &LabeledDataset, source: &SourceDataset) -> Result<(f64, f64), TransferError> {
    if target.is_empty() {
        return Err(TransferError::EmptyTarget);
    }
    let mu: Vec<f64> = target
        .points()
        .iter()
        .map(|p| source.posterior.predict(p).mean)
        .collect();
    let ys = target.values();
    let n = ys.len() as f64;
    let mu_bar = mu.iter().sum::<f64>() / n;
    let y_bar = ys.iter().sum::<f64>() / n;
    let (sxx, sxy) = mu
        .iter()
        .zip(ys)
        .fold((0.0, 0.0), |(sxx, sxy), (m, y)| {
            let dm = m - mu_bar;
            (sxx + dm * dm, sxy + dm * (y - y_bar))
        });
    let floor = DEGENERATE_VARIANCE.max(DEGENERATE_FRACTION * source.value_variance);
    let flat_source = target.len() < 2 || sxx / n < floor;
    // a near-zero slope means the source carries nothing about the target,
    // e.g. every target value so far sits on one plateau
    let flat_fit = !flat_source && sxy * sxy / sxx / n < DEGENERATE_FRACTION * floor;
    if flat_source || flat_fit {
        let eta = ys.iter().zip(&mu).map(|(y, m)| y - m).sum::<f64>() / n;
        return Err(TransferError::DegenerateDesign { gamma: 1.0, eta });
    }
    let gamma = sxy / sxx;
    Ok((gamma, y_bar - gamma * mu_bar))
}

/// Diff-GP after a least-squares location-scale shift of the source mean.
/// An unidentifiable shift falls back to `(1, 0)`, i.e. plain Diff-GP, with
/// `degenerate` set on the output.
pub fn lss_diff_gp_transform(
    target: &LabeledDataset,
    source: &SourceDataset,
    params: &KernelParams,
    base: LssBase,
) -> Result<TransformedDataset, TransferError> {
    let (gamma, eta, degenerate) = match lss_fit(target, source) {
        Ok((g, e)) => (g, e, false),
        Err(TransferError::DegenerateDesign { .. }) => (1.0, 0.0, true),
        Err(e) => return Err(e),
    };
    transform_with_shift(target, source, params, gamma, eta, base, degenerate)
}

/// As [`lss_diff_gp_transform`] with the shift supplied by the caller.
pub fn lss_diff_gp_transform_with_shift(
    target: &LabeledDataset,
    source: &SourceDataset,
    params: &KernelParams,
    shift: (f64, f64),
    base: LssBase,
) -> Result<TransformedDataset, TransferError> {
    transform_with_shift(target, source, params, shift.0, shift.1, base, false)
}

fn transform_with_shift(
    target: &LabeledDataset,
    source: &SourceDataset,
    params: &KernelParams,
    gamma: f64,
    eta: f64,
    base: LssBase,
    degenerate: bool,
) -> Result<TransformedDataset, TransferError> {
    if target.is_empty() {
        return Err(TransferError::EmptyTarget);
    }
    let (prior, source_var): (Vec<f64>, Vec<f64>) = target
        .points()
        .iter()
        .map(|p| {
            let pred = source.posterior.predict(p);
            (gamma * pred.mean + eta, pred.variance)
        })
        .unzip();
    let residual_data = LabeledDataset::with_extra_noise(
        target.points().to_vec(),
        target.values().to_vec(),
        source_var,
    )?;
    let diff = GpPosterior::fit(*params, residual_data, Some(&prior))?;

    let source_points = source.data.points();
    let values = source_points
        .iter()
        .zip(source.data.values())
        .map(|(p, y)| {
            let start = match base {
                LssBase::Raw => *y,
                LssBase::Shifted => gamma * y + eta,
            };
            start + diff.predict_mean(p)
        })
        .collect();
    Ok(TransformedDataset {
        points: source_points.to_vec(),
        values,
        source_variance: source.variance_at_points.clone(),
        target_noise: params.noise_variance,
        shift: (gamma, eta),
        degenerate,
    })
}

/// Target observations followed by the transformed source points.
pub fn augment(target: &LabeledDataset, transformed: &TransformedDataset) -> LabeledDataset {
    let mut out = target.clone();
    for j in 0..transformed.len() {
        out.push(
            transformed.points[j],
            transformed.values[j],
            transformed.source_variance[j],
        );
    }
    out
}
