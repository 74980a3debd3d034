//! CMA-ES for multimodal minimization with niche-weighted composite
//! objectives, a deterministic multimodal benchmark generator, detection
//! metrics and a restart harness.

pub mod bench;
pub mod cma;
pub mod harness;
pub mod metrics;
pub mod niche;
pub mod seed;
