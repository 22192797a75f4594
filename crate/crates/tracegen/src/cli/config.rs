//! The single JSON run configuration shared by the pipeline commands.

use super::CliError;
use crate::model::{ModelConfig, TrainPlan};
use crate::tokenizer::MetaParams;
use crate::trace::TraceFormat;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One input trace: where it lives and how to preprocess it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub name: String,
    pub trace_id: u32,
    pub n_nodes: u32,
    pub format: TraceFormat,
    /// Clip to at most this many requests (after filtering/shifting).
    #[serde(default)]
    pub max_len: Option<usize>,
    /// Drop requests whose destination never appears as a source, then
    /// remap IDs to a consecutive range.
    #[serde(default)]
    pub filter_remap: bool,
    /// Shift every ID by this amount before anything else.
    #[serde(default)]
    pub shift: i64,
}

/// Generation defaults, overridable by CLI flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateDefaults {
    pub temperatures: Vec<f64>,
    pub requests: usize,
    #[serde(default)]
    pub scale_mask: Option<u32>,
}

impl Default for GenerateDefaults {
    fn default() -> Self {
        GenerateDefaults {
            temperatures: crate::generator::DEFAULT_TEMPERATURES.to_vec(),
            requests: 10_000,
            scale_mask: None,
        }
    }
}

/// Evaluation defaults, overridable by CLI flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalDefaults {
    pub window: usize,
    pub stride: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub ngram_samples: usize,
    /// Shuffle/uniform baseline repeats for complexity profiles.
    pub repeats: usize,
}

impl Default for EvalDefaults {
    fn default() -> Self {
        EvalDefaults {
            window: 20_000,
            stride: 1,
            ngram_min: 1,
            ngram_max: 40,
            ngram_samples: 6000,
            repeats: 3,
        }
    }
}

/// The whole pipeline configuration: datasets, meta shape, model, training
/// plan, generation and evaluation defaults, global seed, output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub datasets: Vec<DatasetEntry>,
    pub meta_params: MetaParams,
    pub model: ModelConfig,
    pub train: TrainPlan,
    #[serde(default)]
    pub generate: GenerateDefaults,
    #[serde(default)]
    pub eval: EvalDefaults,
}

impl RunConfig {
    /// Desk-scale skeleton around a dataset list: mini model, short plan.
    pub fn desk(out_dir: PathBuf, datasets: Vec<DatasetEntry>, seed: u64) -> Result<Self, CliError> {
        let max_nodes = datasets.iter().map(|d| d.n_nodes).max().unwrap_or(2);
        let meta = MetaParams::src_dst(4, datasets.len().max(1) as u32);
        let model = ModelConfig::mini(max_nodes as usize, meta, seed);
        let train = TrainPlan {
            steps: 200,
            tokens_per_step: 2048,
            lr: 1e-3,
            eval_interval: 20,
            seed,
            ..TrainPlan::default()
        };
        let config = RunConfig {
            seed,
            out_dir,
            datasets,
            meta_params: meta,
            model,
            train,
            generate: GenerateDefaults::default(),
            eval: EvalDefaults::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.datasets.is_empty() {
            return bad("no datasets configured".into());
        }
        let mut ids: Vec<u32> = self.datasets.iter().map(|d| d.trace_id).collect();
        ids.sort_unstable();
        for (want, &got) in ids.iter().enumerate() {
            if got != want as u32 {
                return bad(format!(
                    "trace_ids must be consecutive from 0; found {ids:?}"
                ));
            }
        }
        if self.meta_params.traces as usize != self.datasets.len() {
            return bad(format!(
                "meta_params.traces = {} but {} datasets configured",
                self.meta_params.traces,
                self.datasets.len()
            ));
        }
        if self.model.meta != self.meta_params {
            return bad("model.meta must equal meta_params".into());
        }
        self.model.validate().map_err(CliError::Model)?;
        for d in &self.datasets {
            if d.n_nodes == 0 {
                return bad(format!("dataset '{}': n_nodes must be >= 1", d.name));
            }
        }
        Ok(())
    }

    /// Directory of canonical preprocessed traces.
    pub fn preprocessed_dir(&self) -> PathBuf {
        self.out_dir.join("preprocessed")
    }

    /// Canonical path of one preprocessed trace.
    pub fn preprocessed_path(&self, name: &str) -> PathBuf {
        self.preprocessed_dir().join(format!("{name}.csv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("model.ckpt")
    }

    pub fn generated_dir(&self) -> PathBuf {
        self.out_dir.join("generated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, trace_id: u32) -> DatasetEntry {
        DatasetEntry {
            path: PathBuf::from(format!("/tmp/{name}.csv")),
            name: name.into(),
            trace_id,
            n_nodes: 8,
            format: TraceFormat::CsvPairs,
            max_len: None,
            filter_remap: false,
            shift: 0,
        }
    }

    #[test]
    fn json_round_trip() {
        let config = RunConfig::desk(PathBuf::from("/tmp/out"), vec![entry("a", 0), entry("b", 1)], 7)
            .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        config.save(f.path()).unwrap();
        let back = RunConfig::load(f.path()).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.datasets.len(), 2);
        assert_eq!(back.model, config.model);
    }

    #[test]
    fn readme_example_config_parses() {
        // Keep in sync with the sample in the top-level README.
        let text = r#"{
          "seed": 7,
          "out_dir": "out",
          "datasets": [
            { "path": "block_raw.csv", "name": "block", "trace_id": 0,
              "n_nodes": 64, "format": "csv-pairs",
              "max_len": 500000, "filter_remap": false, "shift": 0 }
          ],
          "meta_params": { "fields": 2, "segments": 24, "traces": 1 },
          "model": { "d_model": 128, "n_layers": 4, "n_heads": 4, "context": 256,
                     "vocab": 64, "meta": { "fields": 2, "segments": 24, "traces": 1 },
                     "mlp_ratio": 4, "seed": 1 },
          "train": { "steps": 700, "tokens_per_step": 2048, "lr": 0.001,
                     "warmup_frac": 0.01, "lr_final_frac": 0.1, "weight_decay": 0.01,
                     "grad_clip": 1.0, "val_fraction": 0.1, "eval_interval": 25,
                     "patience": 5, "min_rel_improvement": 0.001,
                     "val_windows_per_trace": 16, "seed": 2 },
          "generate": { "temperatures": [0.9, 0.95, 1.0, 1.1, 1.2], "requests": 100000 },
          "eval": { "window": 20000, "stride": 1, "ngram_min": 1, "ngram_max": 40,
                    "ngram_samples": 6000, "repeats": 3 }
        }"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.model.context, 256);
        assert_eq!(config.generate.temperatures.len(), 5);
    }

    #[test]
    fn rejects_non_consecutive_trace_ids() {
        let result = RunConfig::desk(PathBuf::from("/tmp/out"), vec![entry("a", 0), entry("b", 2)], 0);
        assert!(matches!(result, Err(CliError::Config(_))));
    }

    #[test]
    fn rejects_meta_mismatch() {
        let mut config =
            RunConfig::desk(PathBuf::from("/tmp/out"), vec![entry("a", 0)], 0).unwrap();
        config.meta_params.traces = 3;
        assert!(config.validate().is_err());
    }
}
