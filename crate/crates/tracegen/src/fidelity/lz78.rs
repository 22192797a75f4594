//! Incremental LZ78 parsing as an entropy-rate estimator.
//!
//! The sequence is parsed into phrases, each the longest previously seen
//! phrase extended by one symbol; the dictionary starts empty and the final
//! partial phrase counts as one. With `c` phrases over `N` symbols the
//! entropy-rate estimate is `c * log2(c) / N` bits per symbol, which
//! converges to the source entropy rate for stationary ergodic sources.

use super::FidelityError;
use crate::trace::Trace;
use std::collections::HashMap;

/// Number of phrases in the incremental LZ78 parse.
pub fn lz78_phrase_count(symbols: &[u64]) -> Result<usize, FidelityError> {
    if symbols.is_empty() {
        return Err(FidelityError::EmptyInput);
    }
    // Trie with the root as node 0; edges keyed by (node, symbol).
    let mut children: HashMap<(u32, u64), u32> = HashMap::new();
    let mut node_count = 1u32;
    let mut phrases = 0usize;
    let mut node = 0u32;
    for &sym in symbols {
        match children.get(&(node, sym)) {
            Some(&child) => node = child,
            None => {
                children.insert((node, sym), node_count);
                node_count += 1;
                phrases += 1;
                node = 0;
            }
        }
    }
    if node != 0 {
        phrases += 1;
    }
    Ok(phrases)
}

/// `c * log2(c) / N` over an arbitrary symbol sequence.
pub fn entropy_rate_of_symbols(symbols: &[u64]) -> f64 {
    let c = lz78_phrase_count(symbols).expect("non-empty") as f64;
    c * c.log2() / symbols.len() as f64
}

/// Entropy-rate estimate of a trace, in bits per request. Requests are
/// mapped to symbols as `src * n + dst`.
pub fn entropy_rate_estimate(trace: &Trace) -> Result<f64, FidelityError> {
    if trace.len() < 2 {
        return Err(FidelityError::TraceTooShort {
            len: trace.len(),
            needed: 2,
        });
    }
    Ok(entropy_rate_of_symbols(&trace.symbols()))
}

/// Phrase count of a constant sequence of length `n`, in closed form: the
/// parse is (a)(aa)(aaa)... so `c` is the smallest k with k(k+1)/2 >= n.
pub fn constant_sequence_phrase_count(n: usize) -> usize {
    let mut k = 0usize;
    let mut covered = 0usize;
    while covered < n {
        k += 1;
        covered += k;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{synth_trace, SynthPattern};

    #[test]
    fn hand_parses() {
        // (0)(0,0)(0,0,0)
        assert_eq!(lz78_phrase_count(&[0, 0, 0, 0, 0, 0]).unwrap(), 3);
        // (0)(1)(0,0)(1,1)
        assert_eq!(lz78_phrase_count(&[0, 1, 0, 0, 1, 1]).unwrap(), 4);
        // Final partial phrase counts: (0)(0,0)(0,0,<end>)
        assert_eq!(lz78_phrase_count(&[0, 0, 0, 0, 0]).unwrap(), 3);
        assert_eq!(lz78_phrase_count(&[7]).unwrap(), 1);
        assert!(lz78_phrase_count(&[]).is_err());
    }

    #[test]
    fn phrase_count_at_most_length() {
        let mut state = 12345u64;
        for _ in 0..20 {
            let len = 1 + (crate::util::splitmix64(&mut state) % 200) as usize;
            let seq: Vec<u64> = (0..len)
                .map(|_| crate::util::splitmix64(&mut state) % 5)
                .collect();
            let c = lz78_phrase_count(&seq).unwrap();
            assert!(c <= len);
            assert!(c >= 1);
        }
    }

    #[test]
    fn constant_sequence_matches_closed_form() {
        for n in [1usize, 2, 3, 10, 100, 5000] {
            let seq = vec![3u64; n];
            assert_eq!(
                lz78_phrase_count(&seq).unwrap(),
                constant_sequence_phrase_count(n),
                "n = {n}"
            );
        }
    }

    #[test]
    fn constant_trace_estimate_equals_analytic_value() {
        // Frozen from the closed-form oracle: at N = 1e6 the parse has 1414
        // phrases, so the estimate is 1414 * log2(1414) / 1e6 ≈ 0.0148.
        let n = 1_000_000usize;
        let t = synth_trace(SynthPattern::ConstantPair { src: 0, dst: 1 }, 2, n, 0, "c", 0)
            .unwrap();
        let c = constant_sequence_phrase_count(n) as f64;
        assert_eq!(c, 1414.0);
        let expected = c * c.log2() / n as f64;
        let got = entropy_rate_estimate(&t).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(got < 0.02, "estimate {got} not near zero");
    }

    #[test]
    fn uniform_trace_estimate_tracks_true_entropy() {
        // i.i.d. uniform over 64^2 pairs has 12 bits/request. The raw
        // phrase-count estimate converges from below and at N = 1e6 sits
        // around 9.4 bits (~79% of the truth); what the complexity map
        // relies on is that two same-length draws from the same source get
        // the same estimate, so the ratio to a fresh uniform baseline is 1.
        let t = synth_trace(SynthPattern::UniformRandom, 64, 1_000_000, 3, "u", 0).unwrap();
        let est = entropy_rate_estimate(&t).unwrap();
        assert!(est > 8.5 && est < 12.5, "estimate {est} out of band");
        let baseline = synth_trace(SynthPattern::UniformRandom, 64, 1_000_000, 4, "u2", 0).unwrap();
        let ratio = est / entropy_rate_estimate(&baseline).unwrap();
        assert!((ratio - 1.0).abs() < 0.02, "self-ratio {ratio} far from 1");
    }

    #[test]
    fn estimate_is_non_negative() {
        let t = synth_trace(SynthPattern::PeriodicRing, 5, 1000, 0, "r", 0).unwrap();
        assert!(entropy_rate_estimate(&t).unwrap() >= 0.0);
    }
}
