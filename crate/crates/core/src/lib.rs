//! Core of the EHR-as-text pipeline.
//!
//! Everything here is pure computation over in-memory values: turning coded
//! patient event streams into token-budgeted text documents, composing
//! embeddings from a pluggable provider, training classification heads and
//! scoring them under a few-shot protocol. File formats, HTTP, caching and
//! the command line live in the `ehrtext` companion crate.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]

extern crate alloc;

pub mod counts;
pub mod embed;
pub mod eval;
pub mod heads;
pub mod instructions;
pub mod model;
pub mod ontology;
pub mod serialize;
pub mod time;

pub use model::{ClinicalEvent, Code, EventValue, Patient, PredictionInstance, TaskGroup, TaskSpec};
pub use time::{TimeWindow, Timestamp};
