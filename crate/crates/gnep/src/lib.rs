//! Scenario files, result writers and subcommands of the `gnep` tool.

pub mod commands;
pub mod expr;
pub mod manifest;
pub mod scenario;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or input files: exit code 1.
    #[error("{0}")]
    Input(String),
    /// A solve or simulation failed: exit code 2.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}
