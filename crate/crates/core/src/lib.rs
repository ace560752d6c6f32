//! Gaussian-process level-set estimation for mapping defect regions on
//! regular 2-D measurement grids, with transfer from a prior scan.

pub mod baselines;
pub mod data;
pub mod domain;
pub mod engine;
pub mod gp;
pub mod metrics;
pub mod transfer;

pub use domain::{GridDomain, Position};
pub use engine::{Label, LevelSetPartition, Session, SessionConfig, Strategy};
pub use gp::{GpPosterior, KernelParams, LabeledDataset, Prediction};
