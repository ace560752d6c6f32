//! Ground-truth evaluation of a level-set partition.
//!
//! Undetermined points are folded into the negative side for the
//! risk-sensitive variant and into the positive side for the cost-sensitive
//! one. Rates are kept as exact fractions; a zero denominator is undefined
//! rather than 0 or 1.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{Label, LevelSetPartition};

/// Six-cell confusion table. Rows are the truth (positive = `f >= theta`),
/// columns the prediction (upper, undetermined, lower).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub up: u64,
    pub fn_: u64,
    pub fp: u64,
    pub un: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.up + self.fn_ + self.fp + self.un + self.tn
    }
}

/// Non-negative fraction `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    /// `None` when the denominator is zero.
    pub fn value(&self) -> Option<f64> {
        (self.den != 0).then(|| self.num as f64 / self.den as f64)
    }

    /// Exact comparison by cross-multiplication.
    pub fn same_ratio(&self, other: &Fraction) -> bool {
        self.num as u128 * other.den as u128 == other.num as u128 * self.den as u128
            && (self.den == 0) == (other.den == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rates {
    pub sensitivity: Fraction,
    pub specificity: Fraction,
    pub f1: Fraction,
}

/// Tally a partition against truth labels (`true` = positive).
pub fn confusion(partition: &LevelSetPartition, truth: &[bool]) -> ConfusionCounts {
    assert_eq!(partition.len(), truth.len(), "truth must cover the grid");
    let mut c = ConfusionCounts::default();
    for (label, positive) in partition.labels().iter().zip(truth) {
        match (label, positive) {
            (Label::Upper, true) => c.tp += 1,
            (Label::Undetermined, true) => c.up += 1,
            (Label::Lower, true) => c.fn_ += 1,
            (Label::Upper, false) => c.fp += 1,
            (Label::Undetermined, false) => c.un += 1,
            (Label::Lower, false) => c.tn += 1,
        }
    }
    c
}

fn rates(tp: u64, fp: u64, fn_: u64, tn: u64) -> Rates {
    Rates {
        sensitivity: Fraction::new(tp, tp + fn_),
        specificity: Fraction::new(tn, tn + fp),
        f1: Fraction::new(2 * tp, 2 * tp + fp + fn_),
    }
}

/// Undetermined points treated as defective.
pub fn risk_sensitive(c: &ConfusionCounts) -> Rates {
    rates(c.tp, c.fp, c.up + c.fn_, c.tn + c.un)
}

/// Undetermined points treated as normal.
pub fn cost_sensitive(c: &ConfusionCounts) -> Rates {
    rates(c.tp + c.up, c.fp + c.un, c.fn_, c.tn)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    Risk,
    Cost,
}

/// Scores for the AUC: posterior mean on determined points, and an extreme
/// score on undetermined ones (`-inf` for risk, `+inf` for cost).
pub fn partition_scores(partition: &LevelSetPartition, means: &[f64], mode: AucMode) -> Vec<f64> {
    let fill = match mode {
        AucMode::Risk => f64::NEG_INFINITY,
        AucMode::Cost => f64::INFINITY,
    };
    partition
        .labels()
        .iter()
        .zip(means)
        .map(|(l, m)| if *l == Label::Undetermined { fill } else { *m })
        .collect()
}

/// Rank-based (Mann-Whitney) AUC with tied scores counting one half.
/// `None` when truth has only one class.
pub fn auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len());
    let n_pos = truth.iter().filter(|t| **t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum of positives, so tied mid-ranks stay integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            j += 1;
        }
        // ranks i+1..=j share the mid-rank (i + 1 + j) / 2
        let mid_x2 = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| truth[k]).count() as u128;
        rank_sum_x2 += mid_x2 * pos_in_group;
        i = j;
    }
    let n_pos = n_pos as u128;
    // U * 2 = 2 R - n_pos (n_pos + 1)
    let u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
    Some(u_x2 as f64 / (2 * n_pos * n_neg as u128) as f64)
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub n_measured: usize,
    pub counts: ConfusionCounts,
    pub sens_risk: Option<f64>,
    pub spec_risk: Option<f64>,
    pub f1_risk: Option<f64>,
    pub auc_risk: Option<f64>,
    pub sens_cost: Option<f64>,
    pub spec_cost: Option<f64>,
    pub f1_cost: Option<f64>,
    pub auc_cost: Option<f64>,
}

impl MetricRecord {
    pub fn evaluate(
        step: usize,
        n_measured: usize,
        partition: &LevelSetPartition,
        means: &[f64],
        truth: &[bool],
    ) -> Self {
        let counts = confusion(partition, truth);
        let risk = risk_sensitive(&counts);
        let cost = cost_sensitive(&counts);
        Self {
            step,
            n_measured,
            counts,
            sens_risk: risk.sensitivity.value(),
            spec_risk: risk.specificity.value(),
            f1_risk: risk.f1.value(),
            auc_risk: auc(&partition_scores(partition, means, AucMode::Risk), truth),
            sens_cost: cost.sensitivity.value(),
            spec_cost: cost.specificity.value(),
            f1_cost: cost.f1.value(),
            auc_cost: auc(&partition_scores(partition, means, AucMode::Cost), truth),
        }
    }
}

pub const CURVE_HEADER: &str =
    "step,n_measured,sens_risk,spec_risk,f1_risk,auc_risk,sens_cost,spec_cost,f1_cost,auc_cost";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub records: Vec<MetricRecord>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| x.to_string())
}

impl MetricCurve {
    pub fn push(&mut self, record: MetricRecord) {
        self.records.push(record);
    }

    /// CSV with a fixed header; undefined values are written as `null`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CURVE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.n_measured,
                cell(r.sens_risk),
                cell(r.spec_risk),
                cell(r.f1_risk),
                cell(r.auc_risk),
                cell(r.sens_cost),
                cell(r.spec_cost),
                cell(r.f1_cost),
                cell(r.auc_cost),
            )?;
        }
        Ok(())
    }

    /// First record whose cost-sensitive F1 reaches `target`.
    pub fn first_reaching_f1_cost(&self, target: f64) -> Option<&MetricRecord> {
        self.records
            .iter()
            .find(|r| r.f1_cost.is_some_and(|f| f >= target))
    }
}
