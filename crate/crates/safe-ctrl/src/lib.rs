//! Command-line runner for `safe-ctrl-core` experiments: config files, result
//! directories, cross-seed comparison and the Monte Carlo verification suites.

pub mod cli;
pub mod compare;
pub mod config;
pub mod output;
pub mod run;
pub mod verify;
