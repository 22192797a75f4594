//! Machine-readable evaluation outputs: the aggregate JSON report and the
//! sweep CSV rows.

use crate::fidelity::{ComplexityProfile, NgramRow};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// A (non_temporal, temporal) point plus the raw estimates behind it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub non_temporal: f64,
    pub temporal: f64,
    pub degenerate: bool,
    pub raw_original_bits: f64,
    pub raw_shuffled_bits: f64,
    pub raw_random_bits: f64,
}

impl From<ComplexityProfile> for ProfilePoint {
    fn from(p: ComplexityProfile) -> Self {
        ProfilePoint {
            non_temporal: p.non_temporal,
            temporal: p.temporal,
            degenerate: p.degenerate,
            raw_original_bits: p.raw.original,
            raw_shuffled_bits: p.raw.shuffled,
            raw_random_bits: p.raw.random,
        }
    }
}

/// Aggregate output of `eval`: all four measures plus matrix similarity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub original: String,
    pub generated: String,
    /// Requests compared after truncating the original.
    pub requests_compared: usize,
    pub node_count_original: u32,
    pub node_count_generated: u32,
    /// Set when node counts differ (e.g. scale-masked generation); the
    /// matrices are zero-padded to a common size before comparison.
    pub node_count_mismatch: bool,
    pub matrix_similarity: f64,
    pub original_profile: ProfilePoint,
    pub generated_profile: ProfilePoint,
    pub profile_distance: f64,
    pub burst_window: usize,
    pub burst_stride: usize,
    pub original_mean_mb: f64,
    pub original_mean_par: f64,
    pub generated_mean_mb: f64,
    pub generated_mean_par: f64,
    pub ngram: Vec<NgramRow>,
    pub seed: u64,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("report serializes"))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// One row of the temperature sweep summary.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub profile_distance: f64,
    pub mean_par: f64,
}

/// `temperature,profile_distance,mean_par` CSV.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "temperature,profile_distance,mean_par")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.temperature, r.profile_distance, r.mean_par)?;
    }
    w.flush()
}

/// `trace,non_temporal,temporal` CSV for complexity-map plotting.
pub fn write_complexity_csv(
    points: &[(String, ProfilePoint)],
    path: &Path,
) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "trace,non_temporal,temporal")?;
    for (name, p) in points {
        writeln!(w, "{},{},{}", name, p.non_temporal, p.temporal)?;
    }
    w.flush()
}
