//! Level-set estimation: interval classification, grid posterior cache and
//! the measurement session.

pub mod classify;
pub mod field;
pub mod session;

pub use classify::{
    classify_all, select_next, straddle, violation, CredibleInterval, Label, LevelSetPartition,
    PartitionCounts, Z95,
};
pub use field::GridField;
pub use session::{
    run_batch, run_batch_with, EngineError, IngestOutcome, InitDesign, KernelSettings,
    Measurement, Session, SessionConfig, SessionStatus, StepSnapshot, Strategy, Suggestion,
    SuggestionKind,
};
