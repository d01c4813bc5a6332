//! Bootstrapped induction of logical entity-tagging rules.
//!
//! Starting from a dependency-parsed corpus and a prompt oracle, the
//! pipeline labels high-confidence seed chunks, grows an instance pool with
//! a self-trained tagger, and distills the candidate rules that fit the pool.

pub mod bootstrap;
pub mod config;
pub mod corpus;
pub mod error;
pub mod miner;
pub mod oracle;
pub mod pipeline;
pub mod rules;
pub mod synthetic;
pub mod tagger;

pub use error::{Error, Result};
