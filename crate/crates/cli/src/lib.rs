//! Front end for the `dsm` binary: configuration and command drivers.

pub mod commands;
pub mod config;
