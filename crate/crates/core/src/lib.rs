//! Reflection-token guided retrieval-augmented generation.
//!
//! The crate wires together:
//! - [`reflection`]: the control-token vocabulary, completion parsing, and
//!   weighted candidate ranking;
//! - [`adaptive`]: sequence-confidence scores and the retrieve/skip
//!   threshold decision, with sweep tooling;
//! - [`moe`]: a desk-scale sparse mixture-of-experts block (top-k router,
//!   frozen shared FFN, trainable bottleneck adapters) with gradient
//!   checking and sparse upcycling from dense checkpoints;
//! - [`datagen`]: multi-hop training-data preparation in the reflection
//!   grammar;
//! - [`engine`]: end-to-end inference over pluggable language-model
//!   backends and file-based retrievers;
//! - [`evalkit`]: EM/F1/accuracy metrics and run evaluation.

pub mod adaptive;
pub mod backend;
pub mod datagen;
pub mod engine;
pub mod evalkit;
pub mod moe;
pub mod reflection;
