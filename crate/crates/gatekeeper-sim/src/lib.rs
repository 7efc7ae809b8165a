//! Closed-loop simulation, scenario files, and reporting around
//! `gatekeeper-core`.
//!
//! The library half of the `gatekeeper` binary. [`scenario`] defines the
//! TOML scenario format and a seeded scenario generator, [`sim`] runs the
//! multi-agent loop under either safety method and collects metrics, and
//! [`report`] serializes runs to plot-ready CSV/JSON. [`cli`] wires those
//! into the command-line verbs.

#![warn(missing_docs)]

pub mod cli;
pub mod report;
pub mod scenario;
pub mod sim;

use gatekeeper_core::Error as CoreError;

/// Errors of the simulation layer.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    /// The scenario file failed to parse or validate; the message carries
    /// the offending field path.
    #[error("scenario: {0}")]
    Scenario(String),
    /// The leader path planner failed on the scenario field.
    #[error("leader planning failed: {0}")]
    LeaderPlanning(CoreError),
    /// No initial backup commitment exists for a follower, so the run
    /// cannot start safely.
    #[error("initial commitment failed for agent {agent}: {err}")]
    InitialCommit {
        /// Agent that could not be seeded.
        agent: usize,
        /// Underlying planner error.
        err: CoreError,
    },
    /// The scenario generator exhausted its placement attempts.
    #[error("scenario generation failed: {0}")]
    Generation(String),
    /// Any other core-library failure during the run.
    #[error("{0}")]
    Core(#[from] CoreError),
    /// Filesystem failure while reading or writing run artifacts.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
