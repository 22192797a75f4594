//! Trace data model, preprocessing, traffic matrices, and synthetic traces.
//!
//! A [`Trace`] is an ordered sequence of [`Request`]s over `n_nodes` nodes;
//! node IDs live in `[0, n_nodes)`. Order is significant everywhere: it is
//! what the temporal fidelity measures look at, so every operation here
//! preserves it. Traces are immutable after construction; every operation
//! returns a new trace.

mod io;
mod matrix;
mod synth;

pub use io::{load_sidecar, load_trace, load_trace_auto, save_sidecar, save_trace, sidecar_path, TraceFormat};
pub use matrix::{matrix_similarity, TrafficMatrix};
pub use synth::{synth_trace, SynthPattern};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed line: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: ID {id} out of range (n_nodes = {n_nodes})")]
    IdOutOfRange {
        path: String,
        line: usize,
        id: u64,
        n_nodes: u32,
    },
    #[error("trace file {path} contains no requests")]
    EmptyFile { path: String },
    #[error("trace '{name}' is empty after filtering")]
    EmptyAfterFilter { name: String },
    #[error("shift by {delta} would move ID {id} below zero")]
    NegativeShift { delta: i64, id: u32 },
    #[error("request ({src},{dst}) violates n_nodes = {n_nodes}")]
    InvalidRequest { src: u32, dst: u32, n_nodes: u32 },
    #[error("bad sidecar {path}: {msg}")]
    BadSidecar { path: String, msg: String },
    #[error("traffic matrix dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("cosine similarity undefined for an all-zero matrix")]
    ZeroMatrix,
    #[error("invalid synthetic pattern: {0}")]
    BadPattern(String),
}

/// One packet, reduced to its source and destination node IDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Request {
    pub src: u32,
    pub dst: u32,
}

impl Request {
    pub fn new(src: u32, dst: u32) -> Self {
        Request { src, dst }
    }

    /// Collapse the pair into a single symbol in `[0, n_nodes^2)`.
    ///
    /// Used by the entropy-rate and n-gram machinery, which operate on
    /// request symbols rather than on token pairs.
    pub fn symbol(&self, n_nodes: u32) -> u64 {
        self.src as u64 * n_nodes as u64 + self.dst as u64
    }
}

/// Identity and shape of a trace: its name, dataset-wide ID, node count,
/// and the number of segments its token stream is divided into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub name: String,
    pub trace_id: u32,
    pub n_nodes: u32,
    pub segment_count: u32,
}

impl TraceMeta {
    pub fn new(name: impl Into<String>, trace_id: u32, n_nodes: u32, segment_count: u32) -> Self {
        TraceMeta {
            name: name.into(),
            trace_id,
            n_nodes,
            segment_count,
        }
    }
}

/// An ordered request sequence plus its metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub requests: Vec<Request>,
}

impl Trace {
    /// Build a trace, validating every request against `meta.n_nodes`.
    pub fn new(meta: TraceMeta, requests: Vec<Request>) -> Result<Self, TraceError> {
        for r in &requests {
            if r.src >= meta.n_nodes || r.dst >= meta.n_nodes {
                return Err(TraceError::InvalidRequest {
                    src: r.src,
                    dst: r.dst,
                    n_nodes: meta.n_nodes,
                });
            }
        }
        Ok(Trace { meta, requests })
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Largest node ID observed, or None for an empty trace.
    pub fn max_id(&self) -> Option<u32> {
        self.requests.iter().map(|r| r.src.max(r.dst)).max()
    }

    /// Drop requests whose destination never appears as a source, then remap
    /// the surviving IDs onto a consecutive range `[0, n')` by ascending
    /// original ID.
    ///
    /// The drop rule is applied to a fixpoint: removing a request can remove
    /// the last occurrence of a source node, which can strand further
    /// destinations. Iterating until stable is what makes the operation
    /// idempotent and guarantees dst-set ⊆ src-set in the result.
    pub fn filter_and_remap(&self) -> Result<Trace, TraceError> {
        let mut survivors: Vec<Request> = self.requests.clone();
        loop {
            let src_set: BTreeSet<u32> = survivors.iter().map(|r| r.src).collect();
            let before = survivors.len();
            survivors.retain(|r| src_set.contains(&r.dst));
            if survivors.len() == before {
                break;
            }
        }
        if survivors.is_empty() {
            return Err(TraceError::EmptyAfterFilter {
                name: self.meta.name.clone(),
            });
        }

        let ids: BTreeSet<u32> = survivors.iter().flat_map(|r| [r.src, r.dst]).collect();
        let remap: std::collections::HashMap<u32, u32> = ids
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new as u32))
            .collect();
        let requests = survivors
            .iter()
            .map(|r| Request::new(remap[&r.src], remap[&r.dst]))
            .collect();

        let mut meta = self.meta.clone();
        meta.n_nodes = ids.len() as u32;
        Ok(Trace { meta, requests })
    }

    /// Shift every ID by `delta` and adjust `n_nodes` to match.
    pub fn shift_ids(&self, delta: i64) -> Result<Trace, TraceError> {
        if delta < 0 {
            if let Some(min_id) = self.requests.iter().map(|r| r.src.min(r.dst)).min() {
                if (min_id as i64) + delta < 0 {
                    return Err(TraceError::NegativeShift { delta, id: min_id });
                }
            }
        }
        let requests = self
            .requests
            .iter()
            .map(|r| {
                Request::new(
                    (r.src as i64 + delta) as u32,
                    (r.dst as i64 + delta) as u32,
                )
            })
            .collect();
        let mut meta = self.meta.clone();
        meta.n_nodes = (meta.n_nodes as i64 + delta).max(0) as u32;
        Ok(Trace { meta, requests })
    }

    /// Keep only the first `max_len` requests.
    pub fn truncate(&self, max_len: usize) -> Trace {
        let keep = self.len().min(max_len);
        Trace {
            meta: self.meta.clone(),
            requests: self.requests[..keep].to_vec(),
        }
    }

    /// Count every (src, dst) occurrence into an `n_nodes` x `n_nodes` matrix.
    pub fn traffic_matrix(&self) -> TrafficMatrix {
        let n = self.meta.n_nodes as usize;
        let mut m = TrafficMatrix::zeros(n);
        for r in &self.requests {
            m.counts[r.src as usize * n + r.dst as usize] += 1;
        }
        m
    }

    /// The trace as a flat symbol sequence (`src * n + dst` per request).
    pub fn symbols(&self) -> Vec<u64> {
        let n = self.meta.n_nodes;
        self.requests.iter().map(|r| r.symbol(n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(pairs: &[(u32, u32)], n: u32) -> Trace {
        let requests = pairs.iter().map(|&(s, d)| Request::new(s, d)).collect();
        Trace::new(TraceMeta::new("t", 0, n, 1), requests).unwrap()
    }

    #[test]
    fn new_rejects_out_of_range() {
        let r = Trace::new(TraceMeta::new("t", 0, 2, 1), vec![Request::new(2, 0)]);
        assert!(matches!(r, Err(TraceError::InvalidRequest { .. })));
    }

    #[test]
    fn filter_and_remap_hand_trace() {
        // srcs = {5, 9}; (5,7) is dropped, then 5 -> 0, 9 -> 1.
        let t = trace_of(&[(5, 9), (9, 5), (5, 7)], 10);
        let f = t.filter_and_remap().unwrap();
        assert_eq!(f.requests, vec![Request::new(0, 1), Request::new(1, 0)]);
        assert_eq!(f.meta.n_nodes, 2);
    }

    #[test]
    fn filter_is_noop_when_dsts_covered() {
        let t = trace_of(&[(0, 1), (1, 0), (1, 1)], 2);
        let f = t.filter_and_remap().unwrap();
        assert_eq!(f.requests, t.requests);
        assert_eq!(f.meta.n_nodes, 2);
    }

    #[test]
    fn filter_single_self_pair() {
        let t = trace_of(&[(3, 3)], 4);
        let f = t.filter_and_remap().unwrap();
        assert_eq!(f.requests, vec![Request::new(0, 0)]);
        assert_eq!(f.meta.n_nodes, 1);
    }

    #[test]
    fn filter_cascades_to_fixpoint() {
        // Dropping (2,3) strands (1,2)'s destination only if 2 never remains
        // a source; here it does not, so both go.
        let t = trace_of(&[(1, 2), (2, 3)], 4);
        let err = t.filter_and_remap();
        assert!(matches!(err, Err(TraceError::EmptyAfterFilter { .. })));
    }

    #[test]
    fn filter_idempotent_after_cascade() {
        let t = trace_of(&[(1, 2), (2, 3), (2, 1), (1, 1)], 4);
        let once = t.filter_and_remap().unwrap();
        let twice = once.filter_and_remap().unwrap();
        assert_eq!(once, twice);
        // dst-set ⊆ src-set and IDs consecutive from 0.
        let srcs: BTreeSet<u32> = once.requests.iter().map(|r| r.src).collect();
        let dsts: BTreeSet<u32> = once.requests.iter().map(|r| r.dst).collect();
        assert!(dsts.is_subset(&srcs));
        let all: BTreeSet<u32> = once.requests.iter().flat_map(|r| [r.src, r.dst]).collect();
        assert_eq!(
            all,
            (0..once.meta.n_nodes).collect::<BTreeSet<u32>>()
        );
    }

    #[test]
    fn shift_ids_down_and_identity() {
        let t = trace_of(&[(1, 2)], 3);
        let s = t.shift_ids(-1).unwrap();
        assert_eq!(s.requests, vec![Request::new(0, 1)]);
        assert_eq!(s.meta.n_nodes, 2);
        assert_eq!(t.shift_ids(0).unwrap(), t);
    }

    #[test]
    fn shift_ids_rejects_negative() {
        let t = trace_of(&[(0, 1)], 2);
        assert!(matches!(
            t.shift_ids(-1),
            Err(TraceError::NegativeShift { .. })
        ));
    }

    #[test]
    fn truncate_cases() {
        let t = trace_of(&[(0, 1), (1, 0), (0, 0)], 2);
        assert_eq!(t.truncate(2).len(), 2);
        assert_eq!(t.truncate(2).requests, t.requests[..2]);
        assert_eq!(t.truncate(10), t);
        assert_eq!(t.truncate(0).len(), 0);
    }

    #[test]
    fn traffic_matrix_counts_and_conservation() {
        let t = trace_of(&[(0, 1), (0, 1), (1, 0)], 2);
        let m = t.traffic_matrix();
        assert_eq!(m.get(0, 1), 2);
        assert_eq!(m.get(1, 0), 1);
        assert_eq!(m.get(0, 0), 0);
        assert_eq!(m.get(1, 1), 0);
        assert_eq!(m.total(), t.len() as u64);
    }

    #[test]
    fn traffic_matrix_empty_trace() {
        let t = trace_of(&[], 3);
        let m = t.traffic_matrix();
        assert_eq!(m.total(), 0);
    }
}
