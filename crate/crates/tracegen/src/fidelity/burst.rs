//! Burst statistics over sliding windows.
//!
//! For a window W of w requests: U(W) is the number of distinct (src, dst)
//! pairs, MB(W) = w / U(W) is the mean burst size, and PAR(W) is the largest
//! per-pair count divided by MB(W). The scan is incremental: a multiplicity
//! map plus a count-of-multiplicities table make each slide O(stride), with
//! the running maximum maintained exactly.

use super::FidelityError;
use crate::trace::Trace;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// Mean-burst and peak-to-average series, one entry per window start.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstSeries {
    pub w: usize,
    pub stride: usize,
    pub mb: Vec<f64>,
    pub par: Vec<f64>,
}

impl BurstSeries {
    pub fn len(&self) -> usize {
        self.mb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mb.is_empty()
    }

    /// Plot-ready CSV: `start_index,mb,par`.
    pub fn export_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "start_index,mb,par")?;
        for (i, (mb, par)) in self.mb.iter().zip(&self.par).enumerate() {
            writeln!(out, "{},{},{}", i * self.stride, mb, par)?;
        }
        out.flush()
    }
}

struct WindowState {
    counts: HashMap<u64, u32>,
    /// count_of[m] = number of pairs currently at multiplicity m.
    count_of: Vec<u32>,
    distinct: usize,
    max_mult: u32,
}

impl WindowState {
    fn new(w: usize) -> Self {
        WindowState {
            counts: HashMap::new(),
            count_of: vec![0; w + 1],
            distinct: 0,
            max_mult: 0,
        }
    }

    fn add(&mut self, sym: u64) {
        let c = self.counts.entry(sym).or_insert(0);
        if *c == 0 {
            self.distinct += 1;
        } else {
            self.count_of[*c as usize] -= 1;
        }
        *c += 1;
        self.count_of[*c as usize] += 1;
        if *c > self.max_mult {
            self.max_mult = *c;
        }
    }

    fn remove(&mut self, sym: u64) {
        let c = self.counts.get_mut(&sym).expect("symbol present");
        self.count_of[*c as usize] -= 1;
        *c -= 1;
        if *c == 0 {
            self.distinct -= 1;
            self.counts.remove(&sym);
        } else {
            self.count_of[*c as usize] += 1;
        }
        while self.max_mult > 0 && self.count_of[self.max_mult as usize] == 0 {
            self.max_mult -= 1;
        }
    }
}

/// Scan every window of `w` requests starting at 0, stride, 2*stride, ...
pub fn burst_series(trace: &Trace, w: usize, stride: usize) -> Result<BurstSeries, FidelityError> {
    let len = trace.len();
    if w == 0 || w > len {
        return Err(FidelityError::BadWindow { w, len });
    }
    if stride == 0 {
        return Err(FidelityError::BadStride);
    }
    let symbols: Vec<u64> = trace
        .requests
        .iter()
        .map(|r| (r.src as u64) << 32 | r.dst as u64)
        .collect();

    let n_windows = (len - w) / stride + 1;
    let mut mb = Vec::with_capacity(n_windows);
    let mut par = Vec::with_capacity(n_windows);
    let mut state = WindowState::new(w);
    for &s in &symbols[..w] {
        state.add(s);
    }
    let mut start = 0usize;
    loop {
        let mean_burst = w as f64 / state.distinct as f64;
        mb.push(mean_burst);
        par.push(state.max_mult as f64 / mean_burst);
        let next = start + stride;
        if next + w > len {
            break;
        }
        // Drop what leaves the window, add what enters; with stride >= w the
        // windows are disjoint and this degenerates to a full rebuild.
        for &s in &symbols[start..next.min(start + w)] {
            state.remove(s);
        }
        for &s in &symbols[(start + w).max(next)..next + w] {
            state.add(s);
        }
        start = next;
    }
    debug_assert_eq!(mb.len(), n_windows);
    Ok(BurstSeries { w, stride, mb, par })
}

/// Arithmetic mean of the PAR series.
pub fn mean_par(series: &BurstSeries) -> Result<f64, FidelityError> {
    if series.is_empty() {
        return Err(FidelityError::EmptySeries);
    }
    Ok(series.par.iter().sum::<f64>() / series.par.len() as f64)
}

/// Arithmetic mean of the MB series.
pub fn mean_mb(series: &BurstSeries) -> Result<f64, FidelityError> {
    if series.is_empty() {
        return Err(FidelityError::EmptySeries);
    }
    Ok(series.mb.iter().sum::<f64>() / series.mb.len() as f64)
}

/// Naive per-window recomputation; the oracle the incremental scan is
/// checked against. Exposed so integration tests can use it too.
pub fn burst_series_naive(trace: &Trace, w: usize, stride: usize) -> Result<BurstSeries, FidelityError> {
    let len = trace.len();
    if w == 0 || w > len {
        return Err(FidelityError::BadWindow { w, len });
    }
    if stride == 0 {
        return Err(FidelityError::BadStride);
    }
    let mut mb = Vec::new();
    let mut par = Vec::new();
    let mut start = 0usize;
    while start + w <= len {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for r in &trace.requests[start..start + w] {
            *counts.entry((r.src, r.dst)).or_insert(0) += 1;
        }
        let distinct = counts.len();
        let max_mult = counts.values().copied().max().unwrap();
        let mean_burst = w as f64 / distinct as f64;
        mb.push(mean_burst);
        par.push(max_mult as f64 / mean_burst);
        start += stride;
    }
    Ok(BurstSeries { w, stride, mb, par })
}
