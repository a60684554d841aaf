//! Reproducible experiment harness: configuration, dataset builds, training
//! runs, checkpointing, evaluation, comparison reports, and field-image
//! export.

pub mod checkpoint;
pub mod cli;
pub mod compare;
pub mod config;
pub mod csvio;
pub mod demo;
pub mod digest;
pub mod fields;
pub mod manifest;
pub mod pgm;
pub mod runner;
