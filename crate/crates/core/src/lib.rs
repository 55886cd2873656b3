//! Text-to-SQL prompt engineering and evaluation toolkit.
//!
//! The crate covers the whole loop around a completion endpoint: loading
//! BIRD-format benchmarks, rendering schemas and prompts, curating few-shot
//! examples, keeping prompts inside a token budget, talking to (or replaying)
//! a model server, multi-step chain-of-thought orchestration, and scoring
//! predictions by execution accuracy with an error taxonomy.

pub mod bench;
pub mod budget;
pub mod cot;
pub mod curation;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod prompt;
pub mod schema;
pub mod skeleton;
pub mod taxonomy;
