//! Deterministic desk-scale laboratory for multi-domain teacher-student
//! acoustic-model training.
//!
//! The crate generates synthetic multi-domain sequence corpora, trains a
//! multi-condition baseline, fine-tunes per-domain teacher models, trains a
//! single student via domain-routed soft targets, and produces per-domain
//! error-rate reports and frame-accuracy curves. Everything is seeded and
//! bit-reproducible.

pub mod config;
pub mod eval;
pub mod losses;
pub mod netgraph;
pub mod numcore;
pub mod synthcorpus;
pub mod trainer;

pub mod parallel;
