//! Measures what a unified dataflow layer costs compared with writing the same
//! stateless streaming queries against native engine APIs.
//!
//! Everything runs in one process: an append-only log broker provides the
//! input and output topics and stamps every record with its append time; two
//! mini engines (tuple-at-a-time and micro-batch) execute jobs; the `unified`
//! layer translates portable pipelines onto either engine; the `harness`
//! drives ingest, execution and reporting.

pub mod corpus;
pub mod dataflow;
pub mod engine;
pub mod harness;
pub mod minilog;
pub mod queries;
pub mod unified;
