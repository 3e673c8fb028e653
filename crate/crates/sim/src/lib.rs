//! Deterministic synthetic classroom sessions with ground truth.

pub mod activity;
pub mod builtin;
pub mod generate;
pub mod oracle;
pub mod projection;
pub mod spec;

use thiserror::Error;

pub use generate::{generate, Fixture, GroundTruth};
pub use projection::project;
pub use spec::ScenarioSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    SpecViolation(String),
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}
