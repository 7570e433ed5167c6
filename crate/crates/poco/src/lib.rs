//! File formats, dataset IO, the training driver and evaluation on top of
//! `poco-core`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use error::{Error, FormatError, Result};
