//! Streaming social event detection and evolution.

pub mod config;
pub mod detection;
pub mod embedding;
pub mod entropy;
pub mod evolution;
pub mod kb;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod text;
