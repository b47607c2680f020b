//! Deterministic crawl simulation for quality-driven frontier policies, plus
//! the metrics and retrieval harness used to evaluate them.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod frontier;
pub mod metrics;
pub mod policy;
pub mod quality;
pub mod retrieval;
pub mod simulator;
pub mod synthgen;

pub use error::{Error, Result};
