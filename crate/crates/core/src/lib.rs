//! Deterministic simulator of provider-managed prompt caching for multi-turn
//! tool-calling agent sessions.
//!
//! The pipeline is: [`workload`] generates or ingests transcripts,
//! [`strategy`] turns each request into a prompt with fresh breaker tokens,
//! [`cache`] matches and stores exact prefixes, [`policy`] prices the call,
//! [`replay`] adds the latency model and virtual clock, and [`report`] compares
//! conditions with [`stats`]. [`runner`] drives whole experiments from JSON.

pub mod cache;
pub mod error;
pub mod policy;
pub mod replay;
pub mod report;
pub mod runner;
pub mod seed;
pub mod stats;
pub mod strategy;
pub mod token;
pub mod workload;

pub use error::{Error, Result};
