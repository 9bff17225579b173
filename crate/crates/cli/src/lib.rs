//! File formats, subcommands and the reproduction runner on top of
//! `survfuse-core`.

pub mod app;
pub mod checkpoint;
pub mod cohort_io;
pub mod config;
pub mod curves;
pub mod repro;
pub mod selfcheck;

pub use app::{exit_code, run};
