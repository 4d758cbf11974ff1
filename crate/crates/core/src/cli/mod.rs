//! Command-line orchestration: configuration, subcommands, manifests and
//! exit codes.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::Path;

pub use commands::{cmd_analyze, cmd_topk, cmd_visualize, Outcome};
pub use config::{IcaConfig, Overrides, PresetConfig, RunConfig, Selection, Thresholds};
pub use manifest::{FileDigest, Manifest};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::MissingUpstream { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Topk,
    Analyze,
    Visualize,
}

/// Per-invocation options that are not part of the configuration file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub layer: Option<u16>,
    /// Worker cap; 0 means the rayon default.
    pub threads: usize,
    pub overrides: Overrides,
}

/// Loads and validates the config, then runs `command` on a pool of
/// `options.threads` workers.
pub fn run(command: Command, config: &Path, options: RunOptions) -> Result<Outcome> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(options.overrides);
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match command {
        Command::Topk => cmd_topk(&cfg, options.layer),
        Command::Analyze => cmd_analyze(&cfg, options.layer),
        Command::Visualize => cmd_visualize(&cfg, options.layer),
    })
}

/// Exit status for a finished command.
pub fn status(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.is_partial() => EXIT_PARTIAL,
        Ok(_) => EXIT_OK,
        Err(e) => exit_code(e),
    }
}
