//! Experiment runner: configuration, run directories, the experiment drivers
//! and the verification suite.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod verify;
