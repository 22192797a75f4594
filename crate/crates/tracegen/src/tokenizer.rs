//! Trace tokenization and the combined meta-data token stream.
//!
//! A trace becomes a flat token sequence by interleaving source and
//! destination IDs: `[s0, d0, s1, d1, ...]`. Alongside it runs a meta-data
//! token sequence that encodes, per position, which header field the token
//! belongs to (source/destination), which segment of the trace it falls in,
//! and which trace it came from. The three components combine into one
//! integer:
//!
//! ```text
//! meta = seg + field * s + trace_id * f * s
//! ```
//!
//! which is a bijection onto `[0, f*s*tr)`. Segments are consecutive
//! equal-length runs over the token stream; positions past `s *
//! segment_length` clamp into the final segment.

use crate::trace::{Trace, TraceMeta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("meta component out of range: seg {seg} field {field} trace {trace_id} vs (s={s}, f={f}, tr={tr})")]
    MetaOutOfRange {
        seg: u32,
        field: u32,
        trace_id: u32,
        s: u32,
        f: u32,
        tr: u32,
    },
    #[error("segment count {segments} exceeds token count {tokens}: segment length would be 0")]
    SegmentTooShort { segments: u32, tokens: usize },
    #[error("trace declares {trace_segments} segments but params expect {param_segments}")]
    SegmentMismatch {
        trace_segments: u32,
        param_segments: u32,
    },
    #[error("token stream has odd length {0}")]
    OddLength(usize),
    #[error("token {token} out of range for n_nodes = {n_nodes}")]
    TokenOutOfRange { token: u32, n_nodes: u32 },
    #[error("start index {0} must be even so the field phase starts at a source")]
    OddStartIndex(usize),
}

/// Meta-vocabulary shape: `f` header fields, `s` segments per trace, `tr`
/// traces in the dataset. Vocabulary size is `f * s * tr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaParams {
    pub fields: u32,
    pub segments: u32,
    pub traces: u32,
}

impl MetaParams {
    pub fn new(fields: u32, segments: u32, traces: u32) -> Self {
        MetaParams {
            fields,
            segments,
            traces,
        }
    }

    /// Shape used throughout: two fields (source, destination).
    pub fn src_dst(segments: u32, traces: u32) -> Self {
        MetaParams::new(2, segments, traces)
    }

    pub fn vocab_size(&self) -> u32 {
        self.fields * self.segments * self.traces
    }

    pub fn is_valid(&self) -> bool {
        self.fields >= 1 && self.segments >= 1 && self.traces >= 1
    }
}

/// Parallel token / meta-token sequences for one trace
/// plus the scheduling facts needed to extend the meta stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedStream {
    pub tokens: Vec<u32>,
    pub meta_tokens: Vec<u32>,
    pub params: MetaParams,
    pub trace_id: u32,
    /// Tokens per segment: `floor(token_count / s)`.
    pub segment_length: usize,
}

impl TokenizedStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Debug dump: one `token meta_token` pair per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (t, m) in self.tokens.iter().zip(&self.meta_tokens) {
            out.push_str(&format!("{t} {m}\n"));
        }
        out
    }
}

/// Combine (segment, field, trace ID) into a single meta token.
pub fn meta_token(
    seg: u32,
    field: u32,
    trace_id: u32,
    params: MetaParams,
) -> Result<u32, TokenizeError> {
    if seg >= params.segments || field >= params.fields || trace_id >= params.traces {
        return Err(TokenizeError::MetaOutOfRange {
            seg,
            field,
            trace_id,
            s: params.segments,
            f: params.fields,
            tr: params.traces,
        });
    }
    Ok(seg + field * params.segments + trace_id * params.fields * params.segments)
}

/// Segment component for an absolute token index: consecutive equal-length
/// runs of `segment_length`, clamped into the last segment.
pub fn segment_token_for_index(index: usize, segment_length: usize, segments: u32) -> u32 {
    debug_assert!(segment_length >= 1);
    ((index / segment_length) as u64).min(segments as u64 - 1) as u32
}

/// Build the meta-token sequence for `length` positions starting at absolute
/// token index `start_index`. The field component alternates 0,1,0,1,...
/// with sources on even absolute indices.
pub fn build_meta_stream(
    length: usize,
    trace_id: u32,
    segment_length: usize,
    params: MetaParams,
    start_index: usize,
) -> Result<Vec<u32>, TokenizeError> {
    if start_index % 2 != 0 {
        return Err(TokenizeError::OddStartIndex(start_index));
    }
    let mut out = Vec::with_capacity(length);
    for j in 0..length {
        let i = start_index + j;
        let field = (i % 2) as u32;
        let seg = segment_token_for_index(i, segment_length, params.segments);
        out.push(meta_token(seg, field, trace_id, params)?);
    }
    Ok(out)
}

/// Interleave a trace into tokens and build its full meta stream.
///
/// The trace's declared segment count must match `params.segments`; every
/// trace in a dataset shares one segment count, so their meta vocabularies
/// line up.
pub fn tokenize(trace: &Trace, params: MetaParams) -> Result<TokenizedStream, TokenizeError> {
    if trace.meta.segment_count != params.segments {
        return Err(TokenizeError::SegmentMismatch {
            trace_segments: trace.meta.segment_count,
            param_segments: params.segments,
        });
    }
    let token_count = trace.len() * 2;
    let segment_length = token_count / params.segments as usize;
    if segment_length == 0 {
        return Err(TokenizeError::SegmentTooShort {
            segments: params.segments,
            tokens: token_count,
        });
    }
    let mut tokens = Vec::with_capacity(token_count);
    for r in &trace.requests {
        tokens.push(r.src);
        tokens.push(r.dst);
    }
    let meta_tokens = build_meta_stream(token_count, trace.meta.trace_id, segment_length, params, 0)?;
    Ok(TokenizedStream {
        tokens,
        meta_tokens,
        params,
        trace_id: trace.meta.trace_id,
        segment_length,
    })
}

/// Pair consecutive tokens back into requests.
pub fn detokenize(tokens: &[u32], n_nodes: u32) -> Result<Trace, TokenizeError> {
    if tokens.len() % 2 != 0 {
        return Err(TokenizeError::OddLength(tokens.len()));
    }
    let mut requests = Vec::with_capacity(tokens.len() / 2);
    for pair in tokens.chunks_exact(2) {
        for &t in pair {
            if t >= n_nodes {
                return Err(TokenizeError::TokenOutOfRange { token: t, n_nodes });
            }
        }
        requests.push(crate::trace::Request::new(pair[0], pair[1]));
    }
    Ok(Trace {
        meta: TraceMeta::new("detokenized", 0, n_nodes, 1),
        requests,
    })
}

/// Decompose a meta token back into (segment, field, trace_id). Inverse of
/// [`meta_token`]; mostly useful in tests and debugging dumps.
pub fn split_meta_token(meta: u32, params: MetaParams) -> (u32, u32, u32) {
    let seg = meta % params.segments;
    let field = (meta / params.segments) % params.fields;
    let trace_id = meta / (params.fields * params.segments);
    (seg, field, trace_id)
}
