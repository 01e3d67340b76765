//! File formats, workloads, property suites and the command line on top of
//! `trisemi-core`.

pub mod bench;
pub mod cli;
pub mod formats;
pub mod verify;
pub mod workload;

pub use trisemi_core as core;
