//! File formats, parallel drivers and the command-line front end around
//! [`koopfuse_core`].

pub use koopfuse_core as core;

pub mod cli;
pub mod config;
pub mod drivers;
pub mod error;
pub mod formats;
pub mod repro;

pub use error::{AppError, AppResult};
