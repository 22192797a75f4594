//! Traffic matrices: per-pair request counts over a whole trace.

use super::TraceError;
use std::io::Write;
use std::path::Path;

/// `n x n` grid of request counts; cell `(s, d)` is the number of times the
/// pair `(s, d)` occurs in the source trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficMatrix {
    pub n: usize,
    /// Row-major counts, length `n * n`.
    pub counts: Vec<u64>,
}

impl TrafficMatrix {
    pub fn zeros(n: usize) -> Self {
        TrafficMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn get(&self, src: usize, dst: usize) -> u64 {
        self.counts[src * self.n + dst]
    }

    /// Sum of all cells; equals the source trace length.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Replace every cell by `min(cell, cap)`. Used to boost heatmap
    /// contrast before export.
    pub fn clip(&self, cap: u64) -> TrafficMatrix {
        TrafficMatrix {
            n: self.n,
            counts: self.counts.iter().map(|&c| c.min(cap)).collect(),
        }
    }

    /// Zero-pad to a larger dimension, keeping existing cells in place.
    pub fn padded_to(&self, n: usize) -> TrafficMatrix {
        assert!(n >= self.n);
        let mut out = TrafficMatrix::zeros(n);
        for s in 0..self.n {
            for d in 0..self.n {
                out.counts[s * n + d] = self.get(s, d);
            }
        }
        out
    }

    /// Plot-ready CSV export: n rows of n comma-separated integers.
    pub fn export_csv(&self, path: &Path) -> Result<(), TraceError> {
        let io_err = |source| TraceError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = std::io::BufWriter::new(file);
        for row in self.counts.chunks(self.n) {
            let mut first = true;
            for &c in row {
                if !first {
                    write!(w, ",").map_err(io_err)?;
                }
                write!(w, "{c}").map_err(io_err)?;
                first = false;
            }
            writeln!(w).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

/// Cosine similarity of two matrices flattened to vectors: 1 for
/// proportional matrices, 0 for disjoint supports.
pub fn matrix_similarity(a: &TrafficMatrix, b: &TrafficMatrix) -> Result<f64, TraceError> {
    if a.n != b.n {
        return Err(TraceError::DimensionMismatch { a: a.n, b: b.n });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.counts.iter().zip(&b.counts) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(TraceError::ZeroMatrix);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}
