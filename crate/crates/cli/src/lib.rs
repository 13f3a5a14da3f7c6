//! Library side of the `prv` command-line accountant.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::ComposeConfig;
pub use error::{CliError, CliResult};
pub use report::{Report, ValidationReport};
pub use run::{run_compose, run_curve, run_dpsgd, validate_gaussian, DpsgdParams};
