//! Structure-following multiagent diagnosis boards.
//!
//! The pipeline learns a global feature-importance structure from binned
//! tabular data, checks a prosocial gate, runs rounds of mock or remote
//! agents with consensus voting and early stopping, records every agent
//! output in an append-only log, and evaluates classification and
//! reasoning alignment.

pub mod dataset;
pub mod notes;
pub mod prosocial;
pub mod structure;
pub mod agents;
pub mod eval;
pub mod voting;
pub mod mar;
pub mod rounds;
pub mod report;
pub mod pipeline;
