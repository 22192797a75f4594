//! Generate one trace per synthetic pattern and print its shape: traffic
//! matrix occupancy, entropy-rate estimate, and burst behavior.
//!
//! Run with: cargo run --release --example synth_patterns

use tracegen::fidelity::{burst_series, entropy_rate_estimate, mean_mb};
use tracegen::trace::{synth_trace, SynthPattern};

fn main() {
    let n_nodes = 32;
    let length = 50_000;
    let patterns = [
        ("uniform-random", SynthPattern::UniformRandom),
        ("constant-pair", SynthPattern::ConstantPair { src: 2, dst: 7 }),
        ("periodic-ring", SynthPattern::PeriodicRing),
        ("block-diagonal", SynthPattern::BlockDiagonal { blocks: 4 }),
        (
            "two-phase-bursty",
            SynthPattern::TwoPhaseBursty {
                hot_pairs: 4,
                run_len: 50,
            },
        ),
    ];

    println!("{:<18} {:>10} {:>14} {:>10}", "pattern", "cells>0", "bits/request", "mean MB");
    for (name, pattern) in patterns {
        let trace = synth_trace(pattern, n_nodes, length, 7, name, 0).unwrap();
        let matrix = trace.traffic_matrix();
        let occupied = matrix.counts.iter().filter(|&&c| c > 0).count();
        let entropy = entropy_rate_estimate(&trace).unwrap();
        let bursts = burst_series(&trace, 2000, 500).unwrap();
        println!(
            "{:<18} {:>10} {:>14.3} {:>10.2}",
            name,
            occupied,
            entropy,
            mean_mb(&bursts).unwrap()
        );
    }
}
