//! Diagnostic decomposition of video question-answering benchmarks.
//!
//! Each question is probed by two judge models under four presentations
//! (text only, ordered frames, two frame shuffles) and sorted into
//! LLM-answerable, semantic, temporal or other questions. Evaluated models
//! are then scored per category and on the semantic plus temporal subset.

pub mod backend;
pub mod classifier;
pub mod frameplan;
pub mod grader;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod pipeline;
pub mod selftest;
pub mod simfixtures;
