//! Library half of the `qlctrl` command line tool.
//!
//! The binary in `main.rs` only parses flags and dispatches; everything it
//! does lives here so integration tests can drive the same code paths
//! in-process:
//!
//! - [`scenario`]: the scenario JSON schema and its instantiation
//! - [`commands`]: the `check` / `solve` / `sde` / `expm-study` runners
//! - [`artifacts`]: CSV/JSON table emission
//! - [`failure`]: exit-status classification

pub mod artifacts;
pub mod commands;
pub mod failure;
pub mod scenario;
