//! Characterization and detection of token overflow in soft context compression.
//!
//! The crate computes saturation, context-complexity and attention features,
//! labels overflow from paired reference/compressed answers, trains probing
//! classifiers and evaluates them with stratified cross-validation.

pub mod attention;
pub mod cli;
pub mod complexity;
pub mod dct;
pub mod digest;
pub mod error;
pub mod evaluation;
pub mod labeling;
pub mod probes;
pub mod saturation;
pub mod stats;
pub mod synthetic;
pub mod tensor_io;

pub use error::{Error, Result};
