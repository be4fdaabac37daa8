#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Command-line front end for the spatially smoothed MRCD estimator.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod model_file;

pub use error::{CliError, CliResult};
