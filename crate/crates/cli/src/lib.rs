//! Configuration, CSV output and subcommands behind the `decoyqkd` binary.

pub mod commands;
pub mod config;
pub mod table;

pub use commands::{keyrate, optimize, simulate, sweep, CommandError, Coverage, PointReport, RunRecord};
pub use config::{ConfigError, Origin, RunConfig};
pub use table::{write_csv, Outcome, Row, HEADER};
