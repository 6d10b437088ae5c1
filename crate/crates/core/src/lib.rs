pub mod cli;
pub mod domain;
pub mod forest;
pub mod error;
pub mod heuristics;
pub mod ingest;
pub mod io;
pub mod labelmodel;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
