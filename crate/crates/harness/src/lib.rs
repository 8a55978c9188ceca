//! Sweep orchestration, reporting and figures on top of `sltvi`.

pub mod config;
pub mod contour;
pub mod error;
pub mod lab;
pub mod plot;
pub mod report;
pub mod sweep;

pub use error::{HarnessError, Result};
