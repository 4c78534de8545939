//! Deterministic en-route air traffic control simulation and agent assessment.
//!
//! The crate simulates sector traffic under clearances issued by pluggable
//! controller agents, grades runs against a competency rubric, checks the
//! simulator against reference traces by clearance replay, and computes
//! inter-rater reliability statistics over grading data.

pub mod agents;
pub mod airspace;
pub mod assessment;
pub mod cmaes;
pub mod error;
pub mod fidelity;
pub mod harness;
pub mod irr;
pub mod safety;
pub mod simcore;

pub use error::{Error, Result};
