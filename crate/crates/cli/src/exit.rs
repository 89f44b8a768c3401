//! Process exit codes. Every failure path maps to its own code; the table
//! is mirrored in docs/cli.md.

use std::fmt;
use std::process::ExitCode;

use srv6_stamp::control::{ControlError, ErrorCode};
use srv6_stamp::loadgen::LoadgenError;
use srv6_stamp::scenario::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success,
    Internal,
    /// Reserved for argument parsing; clap exits with it directly.
    Usage,
    ReadInput,
    InvalidInput,
    Unreachable,
    Protocol,
    InvalidArgument,
    ControlBind,
    WriteOutput,
    /// A node answered with a typed error.
    Remote(ErrorCode),
    NonMonotone,
    NoPassingRate,
    SutUnreachable,
}

impl Exit {
    pub fn code(self) -> u8 {
        match self {
            Exit::Success => 0,
            Exit::Internal => 1,
            Exit::Usage => 2,
            Exit::ReadInput => 3,
            Exit::InvalidInput => 4,
            Exit::Unreachable => 5,
            Exit::Protocol => 6,
            Exit::InvalidArgument => 7,
            Exit::ControlBind => 8,
            Exit::WriteOutput => 9,
            Exit::Remote(c) => 10 + c.to_wire() as u8,
            Exit::NonMonotone => 40,
            Exit::NoPassingRate => 41,
            Exit::SutUnreachable => 42,
        }
    }
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        CliError {
            exit,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        let exit = match &e {
            ControlError::Remote { code, .. } => Exit::Remote(*code),
            ControlError::Unreachable(_) => Exit::Unreachable,
            ControlError::Protocol(_) => Exit::Protocol,
        };
        CliError::new(exit, e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io(_) => CliError::new(Exit::ReadInput, e.to_string()),
            ScenarioError::Parse { .. } | ScenarioError::Invalid(_) => {
                CliError::new(Exit::InvalidInput, e.to_string())
            }
            ScenarioError::Control(c) => c.into(),
        }
    }
}

impl From<LoadgenError> for CliError {
    fn from(e: LoadgenError) -> Self {
        let exit = match e {
            LoadgenError::InvalidMix(_) | LoadgenError::InvalidSearch(_) => Exit::InvalidInput,
            LoadgenError::NonMonotone { .. } => Exit::NonMonotone,
            LoadgenError::NoPassingRate { .. } => Exit::NoPassingRate,
            LoadgenError::SutUnreachable(_) => Exit::SutUnreachable,
        };
        CliError::new(exit, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Writes the diagnostic to stderr and converts to a process exit code.
pub fn finish(r: CliResult<()>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit.code())
        }
    }
}
