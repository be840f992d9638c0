//! Command-line plumbing: scenario files, runs, the built-in suite and reports.

pub mod config;
pub mod report;
pub mod runner;
pub mod suite;
