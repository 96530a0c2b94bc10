//! File formats, providers and the batch pipeline around `ehrtext-core`.
//!
//! The core crate holds the pure logic. This crate adds ingestion of event
//! and label files, the on-disk embedding cache, the HTTP embedding client,
//! a stub embedding server for offline runs, the synthetic cohort
//! generator, and the resumable pipeline stages behind the `ehrtext` binary.

pub mod cache;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod provider;
pub mod remote;
pub mod report;
pub mod store;
pub mod stub;
pub mod synthetic;

pub use ehrtext_core as core;
pub use error::{Error, Result};
