//! Library side of the `agentsize` command: config loading and the
//! subcommands, kept here so tests can drive them without a process.

pub mod commands;
pub mod config;

pub use commands::{cmd_optimize, cmd_report, cmd_run, cmd_simulate, Finish, SimulateArgs};
pub use config::{load_config, ConfigError, LoadedConfig, RunConfig};
