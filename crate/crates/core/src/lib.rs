//! Detection of secret-dependent leaks in programs for a small register
//! machine, under configurable microarchitectural leakage models and
//! always-mispredict speculation.
//!
//! The pipeline: [`asm`] parses a program; [`machine`] executes it and
//! emits micro-op events; a leakage clause from [`models`] turns events into
//! a [`leakage::LeakageTrace`]; [`speculation`] explores mispredicted paths;
//! [`harness`] compares traces of low-equivalent input pairs.

pub mod asm;
pub mod cli;
pub mod corpus;
pub mod harness;
pub mod leakage;
pub mod machine;
pub mod models;
pub mod speculation;
