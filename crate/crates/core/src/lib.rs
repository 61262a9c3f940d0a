//! Confusion detection from raw eye-tracking data.
//!
//! The pipeline turns raw task segments ([`data`]) into paired sequences and
//! scan-path images ([`preprocess`]), trains a GRU branch, a CNN branch, or
//! both in parallel with a small fused head ([`model`], built on the kernels
//! in [`nn`]), and evaluates the result under repeated user-grouped
//! cross-validation with ROC-based thresholds ([`eval`]).

pub mod config;
pub mod data;
pub mod eval;
pub mod io_util;
pub mod model;
pub mod nn;
pub mod preprocess;
