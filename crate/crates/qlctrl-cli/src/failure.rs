//! Terminal failures of a CLI run and their process exit statuses.
//!
//! Every failure is classified into one of four exit classes so that scripts
//! driving the tool can tell a bad scenario file apart from a system that is
//! genuinely not steerable or a solve that ran out of budget:
//!
//! | class           | exit status |
//! |-----------------|-------------|
//! | success         | 0           |
//! | config          | 2           |
//! | controllability | 3           |
//! | divergence      | 4           |
//! | other           | 1           |

use std::fmt;

use qlctrl::Error as SolverError;

/// Result alias used throughout the CLI.
pub type CliResult<T> = Result<T, Failure>;

/// A terminal failure, carrying the message shown on stderr.
#[derive(Debug)]
pub enum Failure {
    /// The scenario file or the flags are unusable.
    Config(String),
    /// The scenario's system cannot be steered (singular Gramian).
    Controllability(String),
    /// The solver ran but blew up, hit a window cap, or missed its tolerance.
    Divergence(String),
    /// Anything else: I/O trouble, coefficient evaluation failures, ...
    Other(String),
}

impl Failure {
    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Controllability(_) => 3,
            Failure::Divergence(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    /// Shorthand for a configuration failure.
    pub fn config(message: impl Into<String>) -> Self {
        Failure::Config(message.into())
    }

    /// Classifies a solver error. The wrapper variants that tag an iteration,
    /// window, or path index are drilled through to the root cause; the full
    /// chained message is kept either way.
    pub fn from_solver(err: SolverError) -> Self {
        if err.is_uncontrollable() {
            return Failure::Controllability(err.to_string());
        }
        if err.is_blow_up() {
            return Failure::Divergence(err.to_string());
        }
        let mut root = &err;
        loop {
            match root {
                SolverError::Iteration { source, .. }
                | SolverError::Window { source, .. }
                | SolverError::Path { source, .. } => root = source,
                _ => break,
            }
        }
        match root {
            SolverError::InvalidParameter(_) => Failure::Config(err.to_string()),
            SolverError::NonTermination { .. } | SolverError::Overflow(_) => {
                Failure::Divergence(err.to_string())
            }
            _ => Failure::Other(err.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m)
            | Failure::Controllability(m)
            | Failure::Divergence(m)
            | Failure::Other(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Other(format!("i/o: {err}"))
    }
}
