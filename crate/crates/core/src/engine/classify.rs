use serde::{Deserialize, Serialize};

use crate::gp::Prediction;

/// Half-width multiplier of the 95% credible interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    /// Super-level set: `f(x) >= theta`.
    #[serde(rename = "U")]
    Upper,
    /// Sub-level set: `f(x) < theta`.
    #[serde(rename = "L")]
    Lower,
    #[serde(rename = "C")]
    Undetermined,
}

impl Label {
    pub fn as_char(self) -> char {
        match self {
            Label::Upper => 'U',
            Label::Lower => 'L',
            Label::Undetermined => 'C',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'U' => Some(Label::Upper),
            'L' => Some(Label::Lower),
            'C' => Some(Label::Undetermined),
            _ => None,
        }
    }
}

/// `[mu - 1.96 sd, mu + 1.96 sd]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CredibleInterval {
    pub center: f64,
    pub halfwidth: f64,
}

impl CredibleInterval {
    pub fn new(mean: f64, sd: f64) -> Self {
        Self {
            center: mean,
            halfwidth: Z95 * sd.max(0.0),
        }
    }

    pub fn from_prediction(p: &Prediction) -> Self {
        Self::new(p.mean, p.sd())
    }

    pub fn lower(&self) -> f64 {
        self.center - self.halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.center + self.halfwidth
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lower() <= theta && theta <= self.upper()
    }
}

/// Straddle score `1.96 sd - |mu - theta|`. Negative when the interval
/// misses the threshold.
pub fn straddle(ci: &CredibleInterval, theta: f64) -> f64 {
    ci.halfwidth - (ci.center - theta).abs()
}

/// Overhang of the interval across the threshold on its shorter side.
pub fn violation(ci: &CredibleInterval, theta: f64) -> f64 {
    let below = (theta - ci.lower()).max(0.0);
    let above = (ci.upper() - theta).max(0.0);
    below.min(above)
}

/// Three-way split of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetPartition {
    theta: f64,
    epsilon: f64,
    labels: Vec<Label>,
}

impl LevelSetPartition {
    /// Everything starts undetermined.
    pub fn new(n: usize, theta: f64, epsilon: f64) -> Self {
        Self {
            theta,
            epsilon,
            labels: vec![Label::Undetermined; n],
        }
    }

    pub fn from_labels(labels: Vec<Label>, theta: f64, epsilon: f64) -> Self {
        Self {
            theta,
            epsilon,
            labels,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Label {
        self.labels[index]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn indices(&self, which: Label) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, l)| **l == which)
            .map(|(i, _)| i)
    }

    pub fn upper_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(Label::Upper)
    }

    pub fn lower_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(Label::Lower)
    }

    pub fn undetermined(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(Label::Undetermined)
    }

    /// `(|U|, |L|, |C|)`.
    pub fn counts(&self) -> PartitionCounts {
        let mut c = PartitionCounts::default();
        for l in &self.labels {
            match l {
                Label::Upper => c.upper += 1,
                Label::Lower => c.lower += 1,
                Label::Undetermined => c.undetermined += 1,
            }
        }
        c
    }

    pub fn determined_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l != Label::Undetermined)
            .count()
    }

    pub fn is_resolved(&self) -> bool {
        self.labels.iter().all(|l| *l != Label::Undetermined)
    }

    /// Label for one point from its credible interval, ignoring history.
    pub fn decide(&self, ci: &CredibleInterval) -> Label {
        if ci.lower() + self.epsilon >= self.theta {
            Label::Upper
        } else if ci.upper() - self.epsilon < self.theta {
            Label::Lower
        } else {
            Label::Undetermined
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub upper: usize,
    pub lower: usize,
    pub undetermined: usize,
}

/// Re-label the grid from posterior predictions (one per grid index).
///
/// With `sticky` set, only undetermined points are examined so the upper and
/// lower sets only ever grow. Otherwise every point is decided afresh.
pub fn classify_all(
    predictions: &[Prediction],
    partition: &LevelSetPartition,
    sticky: bool,
) -> LevelSetPartition {
    let mut next = partition.clone();
    classify_in_place(predictions, &mut next, sticky);
    next
}

pub(crate) fn classify_in_place(
    predictions: &[Prediction],
    partition: &mut LevelSetPartition,
    sticky: bool,
) {
    debug_assert_eq!(predictions.len(), partition.labels.len());
    for (i, p) in predictions.iter().enumerate() {
        if sticky && partition.labels[i] != Label::Undetermined {
            continue;
        }
        let decided = partition.decide(&CredibleInterval::from_prediction(p));
        partition.labels[i] = decided;
    }
}

/// Unmeasured grid index with the largest straddle; ties go to the lowest
/// index. `None` when every point has been measured.
pub fn select_next(predictions: &[Prediction], measured: &[bool], theta: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in predictions.iter().enumerate() {
        if measured[i] {
            continue;
        }
        let s = straddle(&CredibleInterval::from_prediction(p), theta);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}
