use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::classify::{
    classify_in_place, select_next, straddle, CredibleInterval, LevelSetPartition, PartitionCounts,
};
use super::field::GridField;
use crate::baselines::{nonadaptive_order, random_next};
use crate::domain::{GridDomain, Position};
use crate::gp::{
    default_search_grid, select_hyperparameters, Extension, GpError, GpPosterior, KernelParams,
    KernelShape, LabeledDataset, Prediction,
};
use crate::transfer::{
    augment, diff_gp_transform, lss_diff_gp_transform, lss_diff_gp_transform_with_shift, LssBase,
    SourceDataset, TransferError, TransformedDataset,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every grid point has been measured")]
    Exhausted,
    #[error("iteration budget of {0} measurements is used up")]
    BudgetExhausted(usize),
    #[error("no undetermined points remain")]
    Converged,
    #[error("grid index {0} has already been measured")]
    DuplicateMeasurement(usize),
    #[error("grid index {0} is not on the grid")]
    OffGridIndex(usize),
    #[error("measurement value {0} is not finite")]
    ValueNotFinite(f64),
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Al,
    Atl,
    LssAtl,
    Random,
    NonAdaptive,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Al,
        Strategy::Atl,
        Strategy::LssAtl,
        Strategy::Random,
        Strategy::NonAdaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Al => "al",
            Strategy::Atl => "atl",
            Strategy::LssAtl => "lss-atl",
            Strategy::Random => "random",
            Strategy::NonAdaptive => "non-adaptive",
        }
    }

    pub fn uses_transfer(self) -> bool {
        matches!(self, Strategy::Atl | Strategy::LssAtl)
    }

    /// Whether the next point comes from the straddle acquisition.
    pub fn is_acquisition(self) -> bool {
        matches!(self, Strategy::Al | Strategy::Atl | Strategy::LssAtl)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy '{s}' (expected al|atl|lss-atl|random|non-adaptive)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitDesign {
    /// `k` distinct grid points drawn from the session seed.
    RandomK { k: usize },
    Explicit { indices: Vec<usize> },
}

impl Default for InitDesign {
    fn default() -> Self {
        InitDesign::RandomK { k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KernelSettings {
    /// A fixed shape rescaled to the data on every ingest.
    Scaled { shape: KernelShape },
    /// Marginal-likelihood search over the default grid every
    /// `refit_every` acquisitions once `min_points` observations exist;
    /// the default shape before that.
    Search {
        refit_every: usize,
        min_points: usize,
    },
    Fixed {
        params: KernelParams,
    },
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings::Scaled {
            shape: KernelShape::DEFAULT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub strategy: Strategy,
    pub theta: f64,
    pub epsilon: f64,
    /// Iteration cap `T`; the grid size when absent.
    pub max_iterations: Option<usize>,
    pub seed: u64,
    pub init: InitDesign,
    pub kernel: KernelSettings,
    pub sticky_classification: bool,
    pub lss_base: LssBase,
    /// Pin `(gamma, eta)` instead of fitting it (lss-atl only).
    pub forced_shift: Option<(f64, f64)>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Al,
            theta: 2.0,
            epsilon: 0.0,
            max_iterations: None,
            seed: 0,
            init: InitDesign::default(),
            kernel: KernelSettings::default(),
            sticky_classification: true,
            lss_base: LssBase::default(),
            forced_shift: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    /// No undetermined points remain.
    Converged,
    /// Iteration cap reached or every point measured.
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionKind {
    InitialDesign,
    Acquisition,
    GridCenter,
    Random,
    NonAdaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Number of measurements taken before this suggestion.
    pub step: usize,
    pub index: usize,
    pub position: Position,
    pub kind: SuggestionKind,
    pub straddle: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub index: usize,
    pub value: f64,
    /// Taken somewhere other than the pending suggestion.
    pub deviation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub step: usize,
    pub counts: PartitionCounts,
    pub status: SessionStatus,
    pub deviation: bool,
}

/// State of the partition after a given number of measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    pub step: usize,
    pub n_measured: usize,
    pub partition: LevelSetPartition,
    /// Posterior mean per grid point; the zero prior before any fit.
    pub means: Vec<f64>,
    pub last: Option<Measurement>,
}

/// GP over `y - theta`: the prior sits on the threshold, so unexplored
/// points are never classified by the prior alone.
#[derive(Debug, Clone)]
struct Model {
    posterior: GpPosterior,
    field: GridField,
    predictions: Vec<Prediction>,
}

impl Model {
    fn build(posterior: GpPosterior, grid: &[Position], theta: f64) -> Self {
        let field = GridField::build(&posterior, grid);
        let mut m = Self {
            posterior,
            field,
            predictions: Vec::new(),
        };
        m.shift(theta);
        m
    }

    fn shift(&mut self, theta: f64) {
        self.predictions.clear();
        self.predictions.extend(self.field.predictions().iter().map(|p| Prediction {
            mean: p.mean + theta,
            variance: p.variance,
        }));
    }
}

/// One level-set estimation run over a grid.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    domain: GridDomain,
    grid: Arc<[Position]>,
    source: Option<Arc<SourceDataset>>,
    nonadaptive: Option<Arc<[usize]>>,
    measurements: Vec<Measurement>,
    measured: Vec<bool>,
    init_queue: VecDeque<usize>,
    partition: LevelSetPartition,
    model: Option<Model>,
    params: Option<KernelParams>,
    shift: Option<(f64, f64)>,
    /// Set once a non-degenerate least-squares shift has been fitted.
    shift_identified: bool,
    step: usize,
    suggestion: Option<Suggestion>,
}

impl Session {
    /// Set up a session. Transfer strategies need a source dataset and fit
    /// their first model from it straight away.
    pub fn new(
        config: SessionConfig,
        domain: GridDomain,
        source: Option<Arc<SourceDataset>>,
    ) -> Result<Self, EngineError> {
        let n = domain.len();
        validate_config(&config, n)?;
        if config.strategy.uses_transfer() && source.is_none() {
            return Err(EngineError::InvalidConfig(format!(
                "strategy {} needs a source dataset",
                config.strategy
            )));
        }
        let source = if config.strategy.uses_transfer() { source } else { None };

        let init_queue: VecDeque<usize> = if config.strategy.is_acquisition() {
            match &config.init {
                InitDesign::RandomK { k } => {
                    if *k > n {
                        return Err(EngineError::InvalidConfig(format!(
                            "initial design of {k} points exceeds grid size {n}"
                        )));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rand::seq::index::sample(&mut rng, n, *k).into_iter().collect()
                }
                InitDesign::Explicit { indices } => {
                    let mut seen = vec![false; n];
                    for &i in indices {
                        if i >= n {
                            return Err(EngineError::InvalidConfig(format!(
                                "initial point {i} is off the grid (size {n})"
                            )));
                        }
                        if std::mem::replace(&mut seen[i], true) {
                            return Err(EngineError::InvalidConfig(format!(
                                "initial point {i} is listed twice"
                            )));
                        }
                    }
                    indices.iter().copied().collect()
                }
            }
        } else {
            VecDeque::new()
        };

        let nonadaptive = (config.strategy == Strategy::NonAdaptive)
            .then(|| Arc::from(nonadaptive_order(&domain)));

        let mut session = Self {
            partition: LevelSetPartition::new(n, config.theta, config.epsilon),
            grid: Arc::from(domain.points()),
            config,
            domain,
            source,
            nonadaptive,
            measurements: Vec::new(),
            measured: vec![false; n],
            init_queue,
            model: None,
            params: None,
            shift: None,
            shift_identified: false,
            step: 0,
            suggestion: None,
        };
        if session.source.is_some() {
            session.refresh_transfer_model()?;
            session.classify();
        }
        session.suggestion = session.compute_suggestion();
        Ok(session)
    }

    /// Rebuild a session by feeding a measurement log through [`Session::ingest`].
    pub fn replay(
        config: SessionConfig,
        domain: GridDomain,
        source: Option<Arc<SourceDataset>>,
        log: &[(usize, f64)],
    ) -> Result<Self, EngineError> {
        let mut s = Self::new(config, domain, source)?;
        for &(index, value) in log {
            s.ingest(index, value)?;
        }
        Ok(s)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn partition(&self) -> &LevelSetPartition {
        &self.partition
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn measured_mask(&self) -> &[bool] {
        &self.measured
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn max_iterations(&self) -> usize {
        self.config.max_iterations.unwrap_or(self.domain.len())
    }

    pub fn params(&self) -> Option<&KernelParams> {
        self.params.as_ref()
    }

    /// `(gamma, eta)` used by the last transfer step.
    pub fn transfer_shift(&self) -> Option<(f64, f64)> {
        self.shift
    }

    pub fn pending_initial(&self) -> impl Iterator<Item = usize> + '_ {
        self.init_queue.iter().copied()
    }

    /// Posterior predictions on the grid, once a model exists.
    pub fn predictions(&self) -> Option<&[Prediction]> {
        self.model.as_ref().map(|m| m.predictions.as_slice())
    }

    /// Fitted GP; it models `y - theta`.
    pub fn posterior(&self) -> Option<&GpPosterior> {
        self.model.as_ref().map(|m| &m.posterior)
    }

    pub fn means(&self) -> Vec<f64> {
        match self.predictions() {
            Some(p) => p.iter().map(|p| p.mean).collect(),
            None => vec![0.0; self.domain.len()],
        }
    }

    pub fn status(&self) -> SessionStatus {
        if self.model.is_some() && self.partition.is_resolved() {
            SessionStatus::Converged
        } else if self.step >= self.max_iterations() || self.measurements.len() == self.domain.len()
        {
            SessionStatus::Exhausted
        } else {
            SessionStatus::Active
        }
    }

    /// Next point to measure; stable until the next ingest. `None` once
    /// the session has converged or is exhausted.
    pub fn suggestion(&self) -> Option<&Suggestion> {
        self.suggestion.as_ref()
    }

    pub fn snapshot(&self) -> StepSnapshot {
        StepSnapshot {
            step: self.step,
            n_measured: self.measurements.len(),
            partition: self.partition.clone(),
            means: self.means(),
            last: self.measurements.last().copied(),
        }
    }

    /// Record a measurement at any unmeasured grid point and advance one step.
    pub fn ingest(&mut self, index: usize, value: f64) -> Result<IngestOutcome, EngineError> {
        if index >= self.domain.len() {
            return Err(EngineError::OffGridIndex(index));
        }
        if self.measured[index] {
            return Err(EngineError::DuplicateMeasurement(index));
        }
        if !value.is_finite() {
            return Err(EngineError::ValueNotFinite(value));
        }
        if self.step >= self.max_iterations() {
            return Err(EngineError::BudgetExhausted(self.max_iterations()));
        }
        if self.status() == SessionStatus::Converged {
            return Err(EngineError::Converged);
        }
        let deviation = self.suggestion.as_ref().is_some_and(|s| s.index != index);
        self.measurements.push(Measurement {
            index,
            value,
            deviation,
        });
        self.measured[index] = true;
        self.init_queue.retain(|&i| i != index);
        self.step += 1;

        if self.source.is_some() {
            self.refresh_transfer_model()?;
        } else {
            self.update_model()?;
        }
        self.classify();
        self.suggestion = self.compute_suggestion();
        Ok(IngestOutcome {
            step: self.step,
            counts: self.partition.counts(),
            status: self.status(),
            deviation,
        })
    }

    fn target_data(&self) -> LabeledDataset {
        let (points, values) = self
            .measurements
            .iter()
            .map(|m| (self.grid[m.index], m.value))
            .unzip();
        LabeledDataset::new(points, values).expect("measurements are validated on ingest")
    }

    fn reselect_due(&self) -> bool {
        let t = self.step;
        self.params.is_none()
            || match self.config.kernel {
                KernelSettings::Fixed { .. } => false,
                KernelSettings::Scaled { .. } => true,
                KernelSettings::Search {
                    refit_every,
                    min_points,
                } => t <= min_points || t.is_multiple_of(refit_every),
            }
    }

    fn choose_params(&mut self, data: &LabeledDataset) -> Result<KernelParams, EngineError> {
        let diag = self.domain.diagonal();
        let params = match &self.config.kernel {
            KernelSettings::Fixed { params } => *params,
            KernelSettings::Scaled { shape, .. } => shape.params(diag, data.values()),
            KernelSettings::Search { min_points, .. } => {
                if data.len() >= (*min_points).max(2) {
                    select_hyperparameters(data, &default_search_grid(diag, data.values()))?
                } else {
                    KernelShape::DEFAULT.params(diag, data.values())
                }
            }
        };
        self.params = Some(params);
        Ok(params)
    }

    fn update_model(&mut self) -> Result<(), EngineError> {
        if self.measurements.is_empty() {
            self.model = None;
            return Ok(());
        }
        let theta = self.config.theta;
        if let (false, Some(model)) = (self.reselect_due(), self.model.as_mut()) {
            let m = *self.measurements.last().expect("non-empty");
            match model
                .posterior
                .push(self.grid[m.index], m.value - theta, 0.0, 0.0)?
            {
                Extension::Appended => model.field.extend(&model.posterior, &self.grid),
                Extension::Refactored => {
                    model.field = GridField::build(&model.posterior, &self.grid)
                }
            }
            model.shift(theta);
            return Ok(());
        }
        let data = self.target_data().offset(-theta);
        let params = match self.params {
            Some(p) if !self.reselect_due() => p,
            _ => self.choose_params(&data)?,
        };
        let posterior = GpPosterior::fit(params, data, None)?;
        self.model = Some(Model::build(posterior, &self.grid, theta));
        Ok(())
    }

    fn transform(&self, params: &KernelParams) -> Result<TransformedDataset, EngineError> {
        let source = self.source.as_ref().expect("transfer session has a source");
        let target = self.target_data();
        let out = match self.config.strategy {
            Strategy::LssAtl => match self.config.forced_shift {
                Some(shift) => lss_diff_gp_transform_with_shift(
                    &target,
                    source,
                    params,
                    shift,
                    self.config.lss_base,
                ),
                None => lss_diff_gp_transform(&target, source, params, self.config.lss_base),
            },
            _ => diff_gp_transform(&target, source, params),
        };
        match out {
            Ok(t) => Ok(t),
            Err(TransferError::EmptyTarget) => Ok(TransformedDataset::passthrough(source, params)),
            Err(e) => Err(e.into()),
        }
    }

    fn refresh_transfer_model(&mut self) -> Result<(), EngineError> {
        let source = self.source.clone().expect("transfer session has a source");
        let previous = match (&self.config.kernel, self.params) {
            (KernelSettings::Fixed { params }, _) => *params,
            (_, Some(p)) => p,
            (_, None) => *source.posterior().params(),
        };
        let theta = self.config.theta;
        let params = if self.reselect_due() {
            let provisional =
                augment(&self.target_data(), &self.transform(&previous)?).offset(-theta);
            self.choose_params(&provisional)?
        } else {
            self.params = Some(previous);
            previous
        };
        let transformed = self.transform(&params)?;
        self.shift = Some(transformed.shift);
        self.shift_identified = !self.measurements.is_empty() && !transformed.degenerate;
        let data = augment(&self.target_data(), &transformed).offset(-theta);
        let posterior = GpPosterior::fit(params, data, None)?;
        self.model = Some(Model::build(posterior, &self.grid, theta));
        Ok(())
    }

    /// A fitted shift is only trusted once the initial design is in;
    /// labels committed from the unshifted source would be permanent.
    fn labels_ready(&self) -> bool {
        match (self.config.strategy, self.config.forced_shift) {
            (Strategy::LssAtl, None) => self.shift_identified && self.init_queue.is_empty(),
            _ => true,
        }
    }

    fn classify(&mut self) {
        if !self.labels_ready() {
            return;
        }
        if let Some(model) = &self.model {
            classify_in_place(
                &model.predictions,
                &mut self.partition,
                self.config.sticky_classification,
            );
        }
    }

    fn compute_suggestion(&self) -> Option<Suggestion> {
        if self.status() != SessionStatus::Active {
            return None;
        }
        let queued = self
            .init_queue
            .iter()
            .copied()
            .find(|&i| !self.measured[i]);
        let (index, kind) = match (queued, self.config.strategy) {
            (Some(i), _) => (i, SuggestionKind::InitialDesign),
            (None, Strategy::Al | Strategy::Atl | Strategy::LssAtl) => match self.predictions() {
                Some(preds) => (
                    select_next(preds, &self.measured, self.config.theta)?,
                    SuggestionKind::Acquisition,
                ),
                None => {
                    let c = self.domain.center_index();
                    let i = if self.measured[c] {
                        self.measured.iter().position(|m| !m)?
                    } else {
                        c
                    };
                    (i, SuggestionKind::GridCenter)
                }
            },
            (None, Strategy::Random) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                // one stream per step keeps suggestions a pure function of state
                rng.set_stream(self.step as u64 + 1);
                (random_next(&self.measured, &mut rng)?, SuggestionKind::Random)
            }
            (None, Strategy::NonAdaptive) => {
                let order = self.nonadaptive.as_ref().expect("non-adaptive order");
                let i = order.iter().copied().find(|&i| !self.measured[i])?;
                (i, SuggestionKind::NonAdaptive)
            }
        };
        let pred = self.predictions().map(|p| p[index]);
        Some(Suggestion {
            step: self.step,
            index,
            position: self.grid[index],
            kind,
            straddle: pred
                .map(|p| straddle(&CredibleInterval::from_prediction(&p), self.config.theta)),
            mean: pred.map(|p| p.mean),
            sd: pred.map(|p| p.sd()),
        })
    }
}

fn validate_config(config: &SessionConfig, n: usize) -> Result<(), EngineError> {
    let bad = |m: String| Err(EngineError::InvalidConfig(m));
    if !config.theta.is_finite() {
        return bad(format!("theta must be finite, got {}", config.theta));
    }
    if !(config.epsilon.is_finite() && config.epsilon >= 0.0) {
        return bad(format!("epsilon must be finite and >= 0, got {}", config.epsilon));
    }
    if let Some(t) = config.max_iterations {
        if t > n {
            return bad(format!("max_iterations {t} exceeds grid size {n}"));
        }
    }
    match &config.kernel {
        KernelSettings::Search { refit_every: 0, .. } => {
            return bad("refit_every must be >= 1".into())
        }
        KernelSettings::Scaled { shape } => shape
            .validate()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?,
        KernelSettings::Fixed { params } => params
            .validate()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?,
        _ => {}
    }
    if let Some((g, e)) = config.forced_shift {
        if !(g.is_finite() && e.is_finite()) {
            return bad("forced_shift must be finite".into());
        }
    }
    Ok(())
}

/// Drive a session with an oracle until it converges, runs out of points or
/// spends `budget` measurements. The returned trajectory starts with the
/// state before the first measurement.
pub fn run_batch<F, E>(
    session: &mut Session,
    mut oracle: F,
    budget: usize,
) -> Result<Vec<StepSnapshot>, EngineError>
where
    F: FnMut(usize) -> Result<f64, E>,
    E: fmt::Display,
{
    run_batch_with(session, &mut oracle, budget, |_| {})
}

/// As [`run_batch`], calling `observe` after each ingest.
pub fn run_batch_with<F, E, O>(
    session: &mut Session,
    oracle: &mut F,
    budget: usize,
    mut observe: O,
) -> Result<Vec<StepSnapshot>, EngineError>
where
    F: FnMut(usize) -> Result<f64, E>,
    E: fmt::Display,
    O: FnMut(&Session),
{
    let remaining = session.domain().len() - session.measurements().len();
    if budget > remaining {
        return Err(EngineError::InvalidConfig(format!(
            "budget {budget} exceeds the {remaining} unmeasured points"
        )));
    }
    let mut trajectory = vec![session.snapshot()];
    for _ in 0..budget {
        let Some(s) = session.suggestion() else { break };
        let index = s.index;
        let value = oracle(index).map_err(|e| EngineError::Oracle(e.to_string()))?;
        session.ingest(index, value)?;
        observe(session);
        trajectory.push(session.snapshot());
    }
    Ok(trajectory)
}
