//! End-to-end drug-drug interaction extraction and generation.
//!
//! The pipeline: parse an annotated corpus into sentence/pair records, enrich
//! each target pair with typed boundary markers and anonymized surfaces,
//! tokenize into subwords, encode with a small transformer, classify with an
//! attention + packed-BiGRU fusion head trained under weighted cross-entropy,
//! and mine new candidate interactions with per-relation causal language
//! models whose samples are rule-filtered and ranked by classifier score.

pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod generator;
pub mod metrics;
pub mod nninit;
pub mod synth;
pub mod tape;
pub mod tensor_store;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};

/// Derive a subsystem seed from the run seed. FNV-1a over the seed bytes and
/// the subsystem name; stable across platforms and releases, unlike
/// `DefaultHasher`.
pub fn derive_seed(seed: u64, subsystem: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(subsystem.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}
