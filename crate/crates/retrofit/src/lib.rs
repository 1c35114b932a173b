//! Config-driven runner for the `retrofit-core` toolkit: builds a system or
//! scenario from JSON, classifies and reverse-engineers it, applies the
//! requested retrofits, simulates every variant, checks rate certificates and
//! writes a JSON report with CSV trajectories and optional SVG plots.

pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;

pub use config::{Config, Overrides};
pub use error::{AppError, Result};
pub use pipeline::{Outcome, Pipeline, Report};
