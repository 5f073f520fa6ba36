//! Bayesian agglomerative clustering with Kingman's coalescent.

pub mod cli;
pub mod data;
pub mod error;
pub mod genealogy;
pub mod greedy;
pub mod kernels;
pub mod learning;
pub mod smc;
pub mod synth;
pub mod evaluation;
pub mod util;

pub use data::{ColumnKind, CsvOptions, DataMatrix};
pub use error::{Error, Result};
pub use genealogy::{Event, Genealogy};
pub use kernels::{KernelParams, ModelKind};
