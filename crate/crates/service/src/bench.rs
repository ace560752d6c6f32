//! Multi-seed benchmark comparing AL against the RANDOM and NON-ADAPTIVE
//! baselines on the edge-band surface.

use std::fmt::Write as _;

use redzone_core::engine::Strategy;
use redzone_core::metrics::MetricRecord;
use serde::{Deserialize, Serialize};

use crate::batch::{BatchError, PreparedRun};
use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    /// Template; strategy, seed and budget are overwritten per run.
    pub base: RunConfig,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<usize>,
    pub target_f1_cost: f64,
    /// Measurement cap for AL. RANDOM and NON-ADAPTIVE are capped at twice
    /// the AL median.
    pub al_cap: usize,
}

impl Default for BenchmarkPlan {
    fn default() -> Self {
        Self {
            base: RunConfig::default(),
            seeds: (0..10).collect(),
            checkpoints: vec![25, 50, 100],
            target_f1_cost: 0.95,
            al_cap: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub cap: usize,
    /// Measurements used when cost-sensitive F1 first reached the target.
    pub reached: Option<usize>,
    /// Undetermined count after each checkpoint's measurements.
    pub undetermined: Vec<usize>,
}

impl SeedRun {
    /// Reach count, or `cap + 1` as a lower bound when censored.
    pub fn reach_bound(&self) -> usize {
        self.reached.unwrap_or(self.cap + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: Vec<SeedRun>,
    /// Median reach, counting censored runs at `cap + 1`.
    pub median_reach_bound: f64,
    /// Whether more than half of the runs were censored.
    pub median_censored: bool,
    pub median_undetermined: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub plan: BenchmarkPlan,
    pub summaries: Vec<StrategySummary>,
    /// AL median reach over the RANDOM median reach bound.
    pub reach_ratio: Option<f64>,
    pub reach_ok: bool,
    pub checkpoints_ok: bool,
}

impl BenchmarkReport {
    pub fn summary(&self, s: Strategy) -> Option<&StrategySummary> {
        self.summaries.iter().find(|x| x.strategy == s)
    }

    pub fn passed(&self) -> bool {
        self.reach_ok && self.checkpoints_ok
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One seeded run, stopped once the target is reached and every
/// checkpoint has passed, or at `cap`.
pub fn run_seed(
    plan: &BenchmarkPlan,
    strategy: Strategy,
    seed: u64,
    cap: usize,
) -> Result<SeedRun, BatchError> {
    let mut config = plan.base.clone();
    config.session.strategy = strategy;
    config.session.seed = seed;
    let last_checkpoint = plan.checkpoints.iter().copied().max().unwrap_or(0);
    let horizon = cap.max(last_checkpoint);
    config.budget = Some(horizon);
    let run = PreparedRun::new(config)?;
    let truth = run.truth();
    let mut session = run.session()?;
    let mut oracle = run.oracle()?;

    let mut reached = None;
    let mut undetermined = vec![None; plan.checkpoints.len()];
    while session.step() < horizon {
        let Some(s) = session.suggestion() else { break };
        let index = s.index;
        session.ingest(index, oracle.query(index)?)?;
        let n = session.measurements().len();
        if reached.is_none() && n <= cap {
            let r = MetricRecord::evaluate(n, n, session.partition(), &session.means(), &truth);
            if r.f1_cost.is_some_and(|f| f >= plan.target_f1_cost) {
                reached = Some(n);
            }
        }
        for (slot, &c) in undetermined.iter_mut().zip(&plan.checkpoints) {
            if c == n {
                *slot = Some(session.partition().counts().undetermined);
            }
        }
        if (reached.is_some() || n >= cap) && n >= last_checkpoint {
            break;
        }
    }
    // a session that stops early keeps its final partition at later checkpoints
    let last = session.partition().counts().undetermined;
    Ok(SeedRun {
        seed,
        cap,
        reached,
        undetermined: undetermined.into_iter().map(|u| u.unwrap_or(last)).collect(),
    })
}

fn summarize(plan: &BenchmarkPlan, strategy: Strategy, runs: Vec<SeedRun>) -> StrategySummary {
    let bounds: Vec<f64> = runs.iter().map(|r| r.reach_bound() as f64).collect();
    let censored = runs.iter().filter(|r| r.reached.is_none()).count();
    let median_undetermined = (0..plan.checkpoints.len())
        .map(|k| median(&runs.iter().map(|r| r.undetermined[k] as f64).collect::<Vec<_>>()))
        .collect();
    StrategySummary {
        strategy,
        median_reach_bound: median(&bounds),
        median_censored: 2 * censored >= runs.len() && !runs.is_empty(),
        median_undetermined,
        runs,
    }
}

fn run_strategy(
    plan: &BenchmarkPlan,
    strategy: Strategy,
    cap: usize,
) -> Result<StrategySummary, BatchError> {
    let runs = plan
        .seeds
        .iter()
        .map(|&seed| run_seed(plan, strategy, seed, cap))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(plan, strategy, runs))
}

pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkReport, BatchError> {
    let al = run_strategy(plan, Strategy::Al, plan.al_cap)?;
    let baseline_cap = if al.median_censored {
        plan.al_cap
    } else {
        (2.0 * al.median_reach_bound).ceil() as usize
    };
    let random = run_strategy(plan, Strategy::Random, baseline_cap)?;
    let nonadaptive = run_strategy(plan, Strategy::NonAdaptive, baseline_cap)?;

    let reach_ratio =
        (!al.median_censored).then(|| al.median_reach_bound / random.median_reach_bound);
    let reach_ok = reach_ratio.is_some_and(|r| r <= 0.5);
    let checkpoints_ok = al
        .median_undetermined
        .iter()
        .zip(&random.median_undetermined)
        .zip(&nonadaptive.median_undetermined)
        .all(|((a, r), n)| a <= r && a <= n);
    Ok(BenchmarkReport {
        plan: plan.clone(),
        summaries: vec![al, random, nonadaptive],
        reach_ratio,
        reach_ok,
        checkpoints_ok,
    })
}

fn reach_cell(r: &SeedRun) -> String {
    match r.reached {
        Some(n) => n.to_string(),
        None => format!(">{}", r.cap),
    }
}

/// Plain-text table of a report.
pub fn render(report: &BenchmarkReport) -> String {
    let plan = &report.plan;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "seeds {:?}, target cost-sensitive F1 >= {}, AL cap {}",
        plan.seeds, plan.target_f1_cost, plan.al_cap
    );
    let _ = writeln!(out);
    let mut header = format!("{:<13} {:>12}", "strategy", "median reach");
    for c in &plan.checkpoints {
        let _ = write!(header, " {:>8}", format!("C@{c}"));
    }
    let _ = writeln!(out, "{header}   per-seed reach");
    for s in &report.summaries {
        let reach = if s.median_censored {
            format!(">{}", s.runs.first().map_or(0, |r| r.cap))
        } else {
            format!("{}", s.median_reach_bound)
        };
        let mut line = format!("{:<13} {:>12}", s.strategy.as_str(), reach);
        for u in &s.median_undetermined {
            let _ = write!(line, " {u:>8}");
        }
        let seeds: Vec<String> = s.runs.iter().map(reach_cell).collect();
        let _ = writeln!(out, "{line}   {}", seeds.join(" "));
    }
    let _ = writeln!(out);
    for s in &report.summaries {
        let _ = writeln!(out, "{} undetermined per seed:", s.strategy.as_str());
        for (k, c) in plan.checkpoints.iter().enumerate() {
            let v: Vec<String> = s.runs.iter().map(|r| r.undetermined[k].to_string()).collect();
            let _ = writeln!(out, "  @{c:<4} {}", v.join(" "));
        }
    }
    let _ = writeln!(out);
    let ratio = report
        .reach_ratio
        .map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
    let _ = writeln!(
        out,
        "AL/RANDOM reach ratio {ratio} (<= 0.5: {}); AL undetermined <= both baselines at every checkpoint: {}",
        report.reach_ok, report.checkpoints_ok
    );
    out
}
