//! Standard-library side of the balanced DPO lab: parameter files, JSONL
//! datasets, MI reports, metrics CSVs, run manifests and the `bdpo` CLI.

pub mod annotate;
pub mod cli;
pub mod error;
pub mod jsonl;
pub mod params_io;
pub mod report;

pub use error::{LabError, Result};
