//! Measures how the diversity of the content users consume changes over time.
//!
//! The pipeline embeds contents from a user-content bipartite graph
//! ([`graph`], [`embedding`]), clusters them ([`clustering`]), scores each
//! user's start and end viewing blocks ([`corpus`], [`diversity`]) and tests
//! for shifts with paired and Welch t-tests ([`stats`]). [`synth`] produces
//! logs with planted structure so every stage can be checked end to end, and
//! [`pipeline`] wires the stages together with content-addressed caching.

// Negated comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod corpus;
pub mod diversity;
pub mod embedding;
mod error;
pub mod graph;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Creates the crate's standard generator from a seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Round-trip text for a float; exponent form for very small or large
/// magnitudes so p-values and memberships stay short.
pub(crate) fn fmt_float(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}
