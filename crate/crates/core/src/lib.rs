//! Fluid-antenna port prediction.
//!
//! The crate synthesizes time-varying channel tables for every port of a UE
//! fluid antenna, trains a transformer forecaster (a GPT-2-shaped backbone
//! adapted with LoRA on its query/value projections) to predict future tables
//! from a history window, picks the port whose predicted channel stays closest
//! to a known reference channel, and scores the result with NMSE and spectral
//! efficiency against idealized and no-prediction baselines.
//!
//! Module map:
//! - [`geometry`]: steering vectors, path coefficients, channel tables
//! - [`ports`]: port indexing and argmin port selection
//! - [`dataset`]: UE trajectories, windowing, normalization, dataset files
//! - [`nn`]: the forecaster network with a hand-written backward pass
//! - [`train`]: losses, LR schedule, Adam training loop
//! - [`eval`]: NMSE / SE metrics and baselines
//! - [`config`] and [`pipeline`]: file configs and the CLI-facing commands

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod ports;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
