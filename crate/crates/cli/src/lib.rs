//! Library side of the `pinn-forge` command: config files, experiment
//! recipes and subcommand dispatch.

pub mod app;
pub mod config;
pub mod recipes;
