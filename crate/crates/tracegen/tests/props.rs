//! Property tests for the invariants that hold across all inputs:
//! I/O round trips, tokenizer bijections, preprocessing idempotence, matrix
//! conservation, and the incremental burst scan against its oracle.

use proptest::prelude::*;
use tracegen::fidelity::{burst_series, burst_series_naive};
use tracegen::tokenizer::{
    build_meta_stream, detokenize, meta_token, split_meta_token, tokenize, MetaParams,
};
use tracegen::trace::{
    load_trace, save_trace, synth_trace, Request, SynthPattern, Trace, TraceFormat, TraceMeta,
};

fn arb_trace(max_nodes: u32, max_len: usize) -> impl Strategy<Value = Trace> {
    (2..=max_nodes).prop_flat_map(move |n| {
        proptest::collection::vec((0..n, 0..n), 1..max_len).prop_map(move |pairs| {
            Trace::new(
                TraceMeta::new("prop", 0, n, 1),
                pairs.iter().map(|&(s, d)| Request::new(s, d)).collect(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_identity_both_formats(trace in arb_trace(50, 300)) {
        for format in [TraceFormat::CsvPairs, TraceFormat::WsPairs] {
            let f = tempfile::NamedTempFile::new().unwrap();
            save_trace(&trace, f.path(), format).unwrap();
            let back = load_trace(f.path(), format, trace.meta.clone()).unwrap();
            prop_assert_eq!(&back.requests, &trace.requests);
        }
    }

    #[test]
    fn tokenize_round_trip(trace in arb_trace(30, 200)) {
        let params = MetaParams::src_dst(1, 1);
        let stream = tokenize(&trace, params).unwrap();
        let back = detokenize(&stream.tokens, trace.meta.n_nodes).unwrap();
        prop_assert_eq!(&back.requests, &trace.requests);
        // Every request contributes two tokens.
        prop_assert_eq!(stream.len(), 2 * trace.len());
    }

    #[test]
    fn meta_stream_fields_alternate(
        len in 1usize..400,
        trace_id in 0u32..3,
        seg_len in 1usize..50,
        start in (0usize..200).prop_map(|x| x * 2),
    ) {
        let params = MetaParams::src_dst(8, 3);
        let metas = build_meta_stream(len, trace_id, seg_len, params, start).unwrap();
        for (j, &m) in metas.iter().enumerate() {
            let (_, field, tid) = split_meta_token(m, params);
            prop_assert_eq!(field as usize, (start + j) % 2);
            prop_assert_eq!(tid, trace_id);
        }
    }

    #[test]
    fn meta_stream_shift_consistency(
        len in 1usize..200,
        k in (0usize..100).prop_map(|x| x * 2),
        seg_len in 1usize..40,
    ) {
        let params = MetaParams::src_dst(6, 2);
        let full = build_meta_stream(len + k, 1, seg_len, params, 0).unwrap();
        let suffix = build_meta_stream(len, 1, seg_len, params, k).unwrap();
        prop_assert_eq!(&full[k..], &suffix[..]);
    }

    #[test]
    fn meta_token_injective_on_random_domains(
        f in 1u32..4,
        s in 1u32..12,
        tr in 1u32..6,
    ) {
        let params = MetaParams::new(f, s, tr);
        let mut seen = std::collections::HashSet::new();
        for trace_id in 0..tr {
            for field in 0..f {
                for seg in 0..s {
                    let m = meta_token(seg, field, trace_id, params).unwrap();
                    prop_assert!(m < params.vocab_size());
                    prop_assert!(seen.insert(m), "collision at {}", m);
                }
            }
        }
        prop_assert_eq!(seen.len() as u32, params.vocab_size());
    }

    #[test]
    fn traffic_matrix_conserves_length(trace in arb_trace(40, 400)) {
        let m = trace.traffic_matrix();
        prop_assert_eq!(m.total(), trace.len() as u64);
    }

    #[test]
    fn filter_and_remap_invariants(trace in arb_trace(20, 200)) {
        match trace.filter_and_remap() {
            Err(_) => {} // everything filtered away
            Ok(once) => {
                let twice = once.filter_and_remap().unwrap();
                prop_assert_eq!(&once, &twice);
                let srcs: std::collections::BTreeSet<u32> =
                    once.requests.iter().map(|r| r.src).collect();
                let dsts: std::collections::BTreeSet<u32> =
                    once.requests.iter().map(|r| r.dst).collect();
                prop_assert!(dsts.is_subset(&srcs));
                // IDs form a consecutive range from 0.
                let all: std::collections::BTreeSet<u32> = once
                    .requests
                    .iter()
                    .flat_map(|r| [r.src, r.dst])
                    .collect();
                prop_assert_eq!(all.len() as u32, once.meta.n_nodes);
                prop_assert_eq!(*all.iter().next().unwrap(), 0);
                prop_assert_eq!(*all.iter().last().unwrap(), once.meta.n_nodes - 1);
            }
        }
    }

    #[test]
    fn synth_traces_reproducible(seed in 0u64..1000, len in 1usize..500) {
        let a = synth_trace(SynthPattern::UniformRandom, 16, len, seed, "x", 0).unwrap();
        let b = synth_trace(SynthPattern::UniformRandom, 16, len, seed, "x", 0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn burst_scan_equals_oracle(
        trace in arb_trace(12, 500),
        w in 1usize..60,
        stride in 1usize..8,
    ) {
        prop_assume!(w <= trace.len());
        let fast = burst_series(&trace, w, stride).unwrap();
        let slow = burst_series_naive(&trace, w, stride).unwrap();
        prop_assert_eq!(fast, slow);
    }
}
