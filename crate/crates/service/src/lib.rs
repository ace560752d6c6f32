//! Batch runner, benchmark harness and HTTP session service built on
//! `redzone-core`.

pub mod api;
pub mod batch;
pub mod bench;
pub mod config;
pub mod maps;
pub mod store;

/// Version stamped on every JSON document the service writes.
pub const SCHEMA_VERSION: u32 = 1;
