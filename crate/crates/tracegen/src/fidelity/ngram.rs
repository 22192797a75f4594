//! N-gram novelty and uniqueness via a suffix automaton.
//!
//! An n-gram is n consecutive requests. Novelty asks whether a sampled
//! n-gram of the generated trace occurs anywhere in the original; uniqueness
//! asks whether a sampled n-gram of a trace occurs in it exactly once. Both
//! sample `samples` start positions per n (uniform, with replacement) and
//! answer membership exactly with a suffix automaton over request symbols.
//!
//! Sampling is reproducible: the positions for length n are drawn from a
//! ChaCha stream seeded with `derive_seed(seed, n)`, so an oracle given the
//! same seed sees the same n-grams.

use super::FidelityError;
use crate::trace::{Request, Trace};
use crate::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

fn request_key(r: &Request) -> u64 {
    (r.src as u64) << 32 | r.dst as u64
}

/// Suffix automaton over a symbol sequence; answers "does this window occur"
/// and "how many times" in O(window) per query.
pub struct SuffixAutomaton {
    len: Vec<u32>,
    link: Vec<i32>,
    trans: Vec<HashMap<u32, u32>>,
    occurrences: Vec<u64>,
    alphabet: HashMap<u64, u32>,
}

impl SuffixAutomaton {
    pub fn build(symbols: &[u64]) -> Self {
        let mut alphabet: HashMap<u64, u32> = HashMap::new();
        let dense: Vec<u32> = symbols
            .iter()
            .map(|&s| {
                let next = alphabet.len() as u32;
                *alphabet.entry(s).or_insert(next)
            })
            .collect();

        let mut sam = SuffixAutomaton {
            len: vec![0],
            link: vec![-1],
            trans: vec![HashMap::new()],
            occurrences: vec![0],
            alphabet,
        };
        let mut last = 0u32;
        for &c in &dense {
            last = sam.extend(last, c);
        }
        sam.propagate_counts();
        sam
    }

    fn extend(&mut self, last: u32, c: u32) -> u32 {
        let cur = self.len.len() as u32;
        self.len.push(self.len[last as usize] + 1);
        self.link.push(-1);
        self.trans.push(HashMap::new());
        self.occurrences.push(1);

        let mut p = last as i32;
        while p >= 0 && !self.trans[p as usize].contains_key(&c) {
            self.trans[p as usize].insert(c, cur);
            p = self.link[p as usize];
        }
        if p == -1 {
            self.link[cur as usize] = 0;
        } else {
            let q = self.trans[p as usize][&c];
            if self.len[p as usize] + 1 == self.len[q as usize] {
                self.link[cur as usize] = q as i32;
            } else {
                let clone = self.len.len() as u32;
                self.len.push(self.len[p as usize] + 1);
                self.link.push(self.link[q as usize]);
                self.trans.push(self.trans[q as usize].clone());
                self.occurrences.push(0);
                while p >= 0 && self.trans[p as usize].get(&c) == Some(&q) {
                    self.trans[p as usize].insert(c, clone);
                    p = self.link[p as usize];
                }
                self.link[q as usize] = clone as i32;
                self.link[cur as usize] = clone as i32;
            }
        }
        cur
    }

    /// Push per-state end-position counts up the suffix links, in order of
    /// decreasing state length.
    fn propagate_counts(&mut self) {
        let n = self.len.len();
        let max_len = *self.len.iter().max().unwrap() as usize;
        let mut buckets = vec![0usize; max_len + 2];
        for &l in &self.len {
            buckets[l as usize + 1] += 1;
        }
        for i in 1..buckets.len() {
            buckets[i] += buckets[i - 1];
        }
        let mut order = vec![0u32; n];
        for (state, &l) in self.len.iter().enumerate() {
            order[buckets[l as usize]] = state as u32;
            buckets[l as usize] += 1;
        }
        for &v in order.iter().rev() {
            let l = self.link[v as usize];
            if l >= 0 {
                self.occurrences[l as usize] += self.occurrences[v as usize];
            }
        }
    }

    fn walk(&self, window: &[u64]) -> Option<u32> {
        let mut state = 0u32;
        for sym in window {
            let c = self.alphabet.get(sym)?;
            state = *self.trans[state as usize].get(c)?;
        }
        Some(state)
    }

    /// Whether the window occurs as a contiguous subsequence.
    pub fn contains(&self, window: &[u64]) -> bool {
        self.walk(window).is_some()
    }

    /// Number of occurrences of the window.
    pub fn count(&self, window: &[u64]) -> u64 {
        self.walk(window)
            .map(|s| self.occurrences[s as usize])
            .unwrap_or(0)
    }
}

/// One measured n-gram length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramRow {
    pub n: usize,
    /// Fraction of sampled n-grams found nowhere in the reference trace.
    pub novel_fraction: Option<f64>,
    /// Fraction of sampled n-grams occurring exactly once in their trace.
    pub unique_fraction: Option<f64>,
    pub samples: usize,
}

/// Per-n novelty/uniqueness fractions plus the sampling seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramReport {
    pub seed: u64,
    pub rows: Vec<NgramRow>,
}

impl NgramReport {
    /// Merge a novelty report and a uniqueness report over the same n range.
    pub fn merged(novelty: &NgramReport, uniqueness: &NgramReport) -> NgramReport {
        let uniq: HashMap<usize, NgramRow> =
            uniqueness.rows.iter().map(|r| (r.n, *r)).collect();
        let rows = novelty
            .rows
            .iter()
            .map(|r| NgramRow {
                n: r.n,
                novel_fraction: r.novel_fraction,
                unique_fraction: uniq.get(&r.n).and_then(|u| u.unique_fraction),
                samples: r.samples,
            })
            .collect();
        NgramReport {
            seed: novelty.seed,
            rows,
        }
    }

    /// Plot-ready CSV: `n,novel_fraction,unique_fraction,samples`.
    pub fn export_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "n,novel_fraction,unique_fraction,samples")?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.n,
                fmt(r.novel_fraction),
                fmt(r.unique_fraction),
                r.samples
            )?;
        }
        w.flush()
    }
}

fn check_range(
    n_range: (usize, usize),
    samples: usize,
    limit: usize,
) -> Result<(), FidelityError> {
    let (min, max) = n_range;
    if min == 0 || min > max {
        return Err(FidelityError::BadRange { min, max });
    }
    if samples == 0 {
        return Err(FidelityError::NoSamples);
    }
    if max > limit {
        return Err(FidelityError::NgramTooLong { n: max, len: limit });
    }
    Ok(())
}

/// Reproducible sample positions for n-grams of length n.
pub fn sample_positions(seed: u64, n: usize, len: usize, samples: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, n as u64));
    (0..samples)
        .map(|_| rng.random_range(0..=(len - n) as u64) as usize)
        .collect()
}

/// Fraction of sampled generated n-grams that occur nowhere in the original,
/// for each n in `n_range` (inclusive).
pub fn ngram_novelty(
    generated: &Trace,
    original: &Trace,
    n_range: (usize, usize),
    samples: usize,
    seed: u64,
) -> Result<NgramReport, FidelityError> {
    check_range(n_range, samples, generated.len().min(original.len()))?;
    let gen_syms: Vec<u64> = generated.requests.iter().map(request_key).collect();
    let orig_syms: Vec<u64> = original.requests.iter().map(request_key).collect();
    let index = SuffixAutomaton::build(&orig_syms);

    let mut rows = Vec::new();
    for n in n_range.0..=n_range.1 {
        let mut novel = 0usize;
        for pos in sample_positions(seed, n, gen_syms.len(), samples) {
            if !index.contains(&gen_syms[pos..pos + n]) {
                novel += 1;
            }
        }
        rows.push(NgramRow {
            n,
            novel_fraction: Some(novel as f64 / samples as f64),
            unique_fraction: None,
            samples,
        });
    }
    Ok(NgramReport { seed, rows })
}

/// Fraction of sampled n-grams of `trace` that occur in it exactly once.
pub fn ngram_uniqueness(
    trace: &Trace,
    n_range: (usize, usize),
    samples: usize,
    seed: u64,
) -> Result<NgramReport, FidelityError> {
    check_range(n_range, samples, trace.len())?;
    let syms: Vec<u64> = trace.requests.iter().map(request_key).collect();
    let index = SuffixAutomaton::build(&syms);

    let mut rows = Vec::new();
    for n in n_range.0..=n_range.1 {
        let mut unique = 0usize;
        for pos in sample_positions(seed, n, syms.len(), samples) {
            if index.count(&syms[pos..pos + n]) == 1 {
                unique += 1;
            }
        }
        rows.push(NgramRow {
            n,
            novel_fraction: None,
            unique_fraction: Some(unique as f64 / samples as f64),
            samples,
        });
    }
    Ok(NgramReport { seed, rows })
}
