//! Synthetic trace generators for desk-scale testing.
//!
//! The pattern family covers the qualitative structures real datacenter and
//! HPC traces exhibit: near-uniform noise, degenerate repetition, strict
//! periodicity, diagonal-block locality, and a bursty-then-diffuse phase
//! change.

use super::{Request, Trace, TraceError, TraceMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthPattern {
    /// (src, dst) drawn i.i.d. uniform over the full node range.
    UniformRandom,
    /// One fixed pair repeated for the whole trace.
    ConstantPair { src: u32, dst: u32 },
    /// Request i is (i mod n, (i+1) mod n).
    PeriodicRing,
    /// Sources uniform; destination uniform within the source's diagonal
    /// block. `blocks` contiguous blocks partition the node range.
    BlockDiagonal { blocks: u32 },
    /// First half: runs of `run_len` copies of one of `hot_pairs` fixed
    /// pairs. Second half: i.i.d. uniform.
    TwoPhaseBursty { hot_pairs: u32, run_len: u32 },
}

/// Deterministically generate a synthetic trace.
///
/// Same (pattern, n_nodes, length, seed) always yields the same trace; the
/// name and trace_id only label the result.
pub fn synth_trace(
    pattern: SynthPattern,
    n_nodes: u32,
    length: usize,
    seed: u64,
    name: impl Into<String>,
    trace_id: u32,
) -> Result<Trace, TraceError> {
    if n_nodes == 0 {
        return Err(TraceError::BadPattern("n_nodes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_nodes;
    let mut requests = Vec::with_capacity(length);
    match pattern {
        SynthPattern::UniformRandom => {
            for _ in 0..length {
                requests.push(Request::new(rng.random_range(0..n), rng.random_range(0..n)));
            }
        }
        SynthPattern::ConstantPair { src, dst } => {
            if src >= n || dst >= n {
                return Err(TraceError::BadPattern(format!(
                    "constant pair ({src},{dst}) outside n_nodes = {n}"
                )));
            }
            requests.resize(length, Request::new(src, dst));
        }
        SynthPattern::PeriodicRing => {
            for i in 0..length {
                let s = (i as u64 % n as u64) as u32;
                requests.push(Request::new(s, (s + 1) % n));
            }
        }
        SynthPattern::BlockDiagonal { blocks } => {
            if blocks == 0 || blocks > n {
                return Err(TraceError::BadPattern(format!(
                    "blocks = {blocks} must be in [1, n_nodes = {n}]"
                )));
            }
            let base = n / blocks;
            let block_bounds = |s: u32| -> (u32, u32) {
                // Remainder nodes go to the last block.
                let b = (s / base).min(blocks - 1);
                let lo = b * base;
                let hi = if b == blocks - 1 { n } else { lo + base };
                (lo, hi)
            };
            for _ in 0..length {
                let s = rng.random_range(0..n);
                let (lo, hi) = block_bounds(s);
                requests.push(Request::new(s, rng.random_range(lo..hi)));
            }
        }
        SynthPattern::TwoPhaseBursty { hot_pairs, run_len } => {
            if hot_pairs == 0 || run_len == 0 {
                return Err(TraceError::BadPattern(
                    "hot_pairs and run_len must be >= 1".into(),
                ));
            }
            if hot_pairs > n {
                return Err(TraceError::BadPattern(format!(
                    "hot_pairs = {hot_pairs} exceeds n_nodes = {n}"
                )));
            }
            let split = length / 2;
            while requests.len() < split {
                let k = rng.random_range(0..hot_pairs);
                let pair = Request::new(k, (k + 1) % n);
                let run = run_len.min((split - requests.len()) as u32);
                for _ in 0..run {
                    requests.push(pair);
                }
            }
            for _ in split..length {
                requests.push(Request::new(rng.random_range(0..n), rng.random_range(0..n)));
            }
        }
    }
    Ok(Trace {
        meta: TraceMeta::new(name, trace_id, n_nodes, 1),
        requests,
    })
}
