//! Predicate prediction for scene graphs with parallel per-category
//! transformer encoders, a channel-shuffle fusion stage, and
//! frequency-weighted cross entropy, all on a small auditable f64
//! autodiff engine.
//!
//! Everything runs on one CPU core at desk scale: synthetic long-tailed
//! scene corpora stand in for detector output, and gradient checks plus
//! brute-force metric oracles keep the numerics honest. See the crate
//! `examples/` directory for one runnable walkthrough per capability and
//! the `sg-shuffle` binary for the batch interface.

pub mod data;
pub mod model;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;
