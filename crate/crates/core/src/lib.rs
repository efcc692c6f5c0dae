//! Repository documentation agent.
//!
//! The pipeline parses a Python repository into documentation units
//! (components, modules, the repository itself), orders them so that every
//! unit is visited after its dependencies and children, and then runs a
//! READ / WRITE / VERIFY / FINISH loop per unit against a persistent shared
//! memory of committed documents.
//!
//! Module map:
//!
//! - [`source`]: syntactic model of the repository, raw dependencies, entity sets
//! - [`graph`]: unified dependency graph, SCC condensation, traversal order
//! - [`memory`]: append-only documentation store and search cache
//! - [`backends`]: generator / entailment / search clients and offline mocks
//! - [`verify`]: self-evaluation, NLI conflict checks, combined score
//! - [`metrics`]: section presence and entity coverage
//! - [`prompts`]: prompt texts and document formats
//! - [`agent`]: the trajectory driver
//! - [`config`]: run configuration

pub mod agent;
pub mod backends;
pub mod config;
pub mod error;
pub mod graph;
pub mod memory;
pub mod metrics;
pub mod prompts;
pub mod source;
pub mod verify;

pub use error::{Error, Result};
