//! Error categories with fixed exit codes.
//!
//! Every failure leaves the process through one of four categories so
//! scripts can branch on the exit code alone:
//!
//! - `config` (2): a config file, ruleset, or flag value could not be used
//! - `schema` (3): an input document is malformed or inconsistent
//! - `params` (4): numeric parameters are out of their documented ranges
//! - `io` (5): the filesystem failed underneath us

use std::fmt::Display;

use sewerkit::formats::FormatError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Schema(String),
    Params(String),
    Io(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Schema(_) => "schema",
            CliError::Params(_) => "params",
            CliError::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Schema(m) | CliError::Params(m) | CliError::Io(m) => m,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Params(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

/// For failures loading config-like files (specs, profiles, rulesets,
/// config overrides): whatever went wrong, the configuration is unusable.
pub fn config_err(e: impl Display) -> CliError {
    CliError::Config(e.to_string())
}

/// For failures loading input documents: io stays io, everything else is a
/// schema violation.
pub fn doc_err(e: FormatError) -> CliError {
    match e {
        FormatError::Io { .. } => CliError::Io(e.to_string()),
        other => CliError::Schema(other.to_string()),
    }
}

/// For out-of-range numeric parameters, wherever they were specified.
pub fn params_err(e: impl Display) -> CliError {
    CliError::Params(e.to_string())
}

/// For failures writing outputs.
pub fn write_err(e: impl Display) -> CliError {
    CliError::Io(e.to_string())
}
