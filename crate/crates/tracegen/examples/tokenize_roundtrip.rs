//! Tokenization walkthrough: interleave a small trace into tokens, build the
//! combined field/segment/trace-ID meta stream, decode it back, and verify
//! the round trip.
//!
//! Run with: cargo run --release --example tokenize_roundtrip

use tracegen::tokenizer::{detokenize, split_meta_token, tokenize, MetaParams};
use tracegen::trace::{synth_trace, SynthPattern};

fn main() {
    // 2 fields, 4 segments, 3 traces -> meta vocabulary of 24 tokens.
    let params = MetaParams::src_dst(4, 3);
    println!("meta vocabulary: {} tokens", params.vocab_size());

    let mut trace = synth_trace(SynthPattern::PeriodicRing, 6, 16, 0, "ring", 1).unwrap();
    trace.meta.segment_count = params.segments;
    let stream = tokenize(&trace, params).unwrap();
    println!(
        "trace of {} requests -> {} tokens, segment length {}",
        trace.len(),
        stream.len(),
        stream.segment_length
    );

    println!("\nindex  token  meta  (segment, field, trace)");
    for (i, (tok, meta)) in stream.tokens.iter().zip(&stream.meta_tokens).enumerate() {
        let (seg, field, tid) = split_meta_token(*meta, params);
        let field_name = if field == 0 { "src" } else { "dst" };
        println!("{i:>5}  {tok:>5}  {meta:>4}  (seg {seg}, {field_name}, trace {tid})");
    }

    let back = detokenize(&stream.tokens, trace.meta.n_nodes).unwrap();
    assert_eq!(back.requests, trace.requests);
    println!("\nround trip ok: detokenize(tokenize(trace)) == trace");
}
