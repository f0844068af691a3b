//! HTTP service and command-line interface for the LOK/POS engine.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod oracle;
pub mod service;

pub use error::{ApiError, AppError};
