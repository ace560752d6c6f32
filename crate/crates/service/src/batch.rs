//! Batch runs against a simulated oracle, and their on-disk outputs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use redzone_core::data::{DataError, GridMap, NoisyOracle};
use redzone_core::engine::{EngineError, PartitionCounts, Session, SessionStatus};
use redzone_core::metrics::{MetricCurve, MetricRecord};
use redzone_core::transfer::SourceDataset;
use redzone_core::{GridDomain, KernelParams, LevelSetPartition};
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::maps::MapError;
use crate::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A run config with its inputs loaded and defaults resolved.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub config: RunConfig,
    pub map: GridMap,
    pub source: Option<Arc<SourceDataset>>,
    pub noise_sd: f64,
    pub oracle_seed: u64,
    pub budget: usize,
}

impl PreparedRun {
    pub fn new(config: RunConfig) -> Result<Self, BatchError> {
        let map = config.map.load()?;
        let source = if config.session.strategy.uses_transfer() {
            let spec = config.source.as_ref().ok_or_else(|| {
                BatchError::Invalid(format!(
                    "strategy {} needs a source map",
                    config.session.strategy
                ))
            })?;
            Some(spec.build()?)
        } else {
            None
        };
        let noise_sd = config
            .noise_sd
            .unwrap_or(config.noise_fraction * map.range());
        let cap = config.session.max_iterations.unwrap_or(map.domain().len());
        let budget = config.budget.unwrap_or(cap);
        Ok(Self {
            oracle_seed: config.oracle_seed(),
            config,
            map,
            source,
            noise_sd,
            budget,
        })
    }

    pub fn domain(&self) -> &GridDomain {
        self.map.domain()
    }

    pub fn session(&self) -> Result<Session, BatchError> {
        Ok(Session::new(
            self.config.session.clone(),
            self.domain().clone(),
            self.source.clone(),
        )?)
    }

    pub fn oracle(&self) -> Result<NoisyOracle, BatchError> {
        Ok(NoisyOracle::new(self.map.clone(), self.noise_sd, self.oracle_seed)?)
    }

    pub fn truth(&self) -> Vec<bool> {
        self.map.truth(self.config.session.theta)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub curve: MetricCurve,
    /// Partitions at the requested snapshot steps that were reached.
    pub snapshots: Vec<(usize, LevelSetPartition)>,
    pub session: Session,
}

impl RunOutcome {
    pub fn reached_f1_cost(&self, target: f64) -> Option<usize> {
        self.curve.first_reaching_f1_cost(target).map(|r| r.n_measured)
    }
}

/// Drive the engine with the oracle for the configured budget.
pub fn execute(run: &PreparedRun) -> Result<RunOutcome, BatchError> {
    let mut session = run.session()?;
    let mut oracle = run.oracle()?;
    let remaining = run.domain().len() - session.measurements().len();
    if run.budget > remaining {
        return Err(BatchError::Invalid(format!(
            "budget {} exceeds the {remaining} unmeasured points",
            run.budget
        )));
    }
    let truth = run.truth();
    let mut curve = MetricCurve::default();
    let mut snapshots = Vec::new();
    let record = |s: &Session| {
        MetricRecord::evaluate(
            s.step(),
            s.measurements().len(),
            s.partition(),
            &s.means(),
            &truth,
        )
    };
    curve.push(record(&session));
    if run.config.snapshot_steps.contains(&0) {
        snapshots.push((0, session.partition().clone()));
    }
    for _ in 0..run.budget {
        let Some(s) = session.suggestion() else { break };
        let index = s.index;
        let value = oracle.query(index)?;
        session.ingest(index, value)?;
        curve.push(record(&session));
        if run.config.snapshot_steps.contains(&session.step()) {
            snapshots.push((session.step(), session.partition().clone()));
        }
    }
    Ok(RunOutcome {
        curve,
        snapshots,
        session,
    })
}

/// Label grid as CSV: one line per lattice row (row 0 first), one
/// `U`/`L`/`C` cell per column.
pub fn write_label_grid<W: Write>(
    mut w: W,
    domain: &GridDomain,
    partition: &LevelSetPartition,
) -> std::io::Result<()> {
    let labels = partition.labels();
    for row in labels.chunks(domain.cols()) {
        let line: Vec<String> = row.iter().map(|l| l.as_char().to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn snapshot_file_name(step: usize) -> String {
    format!("labels_step_{step:04}.csv")
}

pub const TERMINAL_FILE: &str = "labels_final.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    resolved: Resolved,
    outcome: Outcome,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    cols: usize,
    rows: usize,
    n_points: usize,
    noise_sd: f64,
    oracle_seed: u64,
    seed: u64,
    budget: usize,
}

#[derive(Debug, Serialize)]
struct Outcome {
    steps: usize,
    status: SessionStatus,
    counts: PartitionCounts,
    kernel_params: Option<KernelParams>,
    transfer_shift: Option<(f64, f64)>,
    f1_cost_095_at: Option<usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), BatchError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    body(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Write metrics, label grids and the manifest into `dir`. Returns the
/// file names written, in order.
pub fn write_outputs(
    run: &PreparedRun,
    outcome: &RunOutcome,
    dir: &Path,
) -> Result<Vec<String>, BatchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();

    write_file(&dir.join(METRICS_FILE), |w| outcome.curve.write_csv(w))?;
    files.push(METRICS_FILE.to_string());

    for (step, partition) in &outcome.snapshots {
        let name = snapshot_file_name(*step);
        write_file(&dir.join(&name), |w| write_label_grid(w, run.domain(), partition))?;
        files.push(name);
    }
    let s = &outcome.session;
    write_file(&dir.join(TERMINAL_FILE), |w| {
        write_label_grid(w, run.domain(), s.partition())
    })?;
    files.push(TERMINAL_FILE.to_string());
    files.push(MANIFEST_FILE.to_string());

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: "redzone",
        version: env!("CARGO_PKG_VERSION"),
        config: &run.config,
        resolved: Resolved {
            cols: run.domain().cols(),
            rows: run.domain().rows(),
            n_points: run.domain().len(),
            noise_sd: run.noise_sd,
            oracle_seed: run.oracle_seed,
            seed: run.config.session.seed,
            budget: run.budget,
        },
        outcome: Outcome {
            steps: s.step(),
            status: s.status(),
            counts: s.partition().counts(),
            kernel_params: s.params().copied(),
            transfer_shift: s.transfer_shift(),
            f1_cost_095_at: outcome.reached_f1_cost(0.95),
        },
        files: files.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    Ok(files)
}
