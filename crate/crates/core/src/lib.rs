//! Benchmarking platform for crash root cause analysis.
//!
//! Root cause analysis is split into two interchangeable steps: an
//! augmenter fuzzes a crashing seed into a dataset of crashing and
//! non-crashing samples, and an extractor ranks source locations by how
//! strongly they separate the two classes. The bench orchestrator runs every
//! augmenter/extractor pairing against targets with registered ground truth
//! and records the rank of the true root cause over augmentation time.

pub mod augment;
pub mod bench;
pub mod extract;
pub mod harness;
pub mod manifest;
pub mod mock;
pub mod mocks;
pub mod model;
pub mod report;
pub mod store;
pub mod trace;
