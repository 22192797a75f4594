//! The pipeline commands behind the `tracegen` binary.

use super::config::RunConfig;
use super::report::{
    write_complexity_csv, write_sweep_csv, EvalReport, ProfilePoint, SweepRow,
};
use super::CliError;
use crate::fidelity::{
    burst_series, complexity_profile, mean_mb, mean_par, ngram_novelty, ngram_uniqueness,
    profile_distance, NgramReport,
};
use crate::generator::{generate, GenerationSpec};
use crate::model::{
    checkpoint, load_checkpoint, save_checkpoint, train, Checkpoint, Model, OptimizerState,
};
use crate::tokenizer::tokenize;
use crate::trace::{
    load_sidecar, load_trace, load_trace_auto, matrix_similarity, save_sidecar, save_trace,
    sidecar_path, synth_trace, SynthPattern, Trace, TraceFormat, TraceMeta,
};
use crate::util::derive_seed;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Preprocess every configured dataset into canonical csv-pairs files with
/// metadata sidecars: filter/remap, ID shift, truncation, in that order.
pub fn cmd_preprocess(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    let dir = config.preprocessed_dir();
    ensure_dir(&dir)?;
    let mut outputs = Vec::new();
    for entry in &config.datasets {
        let meta = TraceMeta::new(
            entry.name.clone(),
            entry.trace_id,
            entry.n_nodes,
            config.meta_params.segments,
        );
        let mut trace = load_trace(&entry.path, entry.format, meta)?;
        if entry.filter_remap {
            trace = trace.filter_and_remap()?;
        }
        if entry.shift != 0 {
            trace = trace.shift_ids(entry.shift)?;
        }
        if let Some(max_len) = entry.max_len {
            trace = trace.truncate(max_len);
        }
        let out = config.preprocessed_path(&entry.name);
        save_trace(&trace, &out, TraceFormat::CsvPairs)?;
        save_sidecar(&trace.meta, &sidecar_path(&out))?;
        outputs.push(out);
    }
    config.save(&config.out_dir.join("preprocess.resolved.json"))?;
    Ok(outputs)
}

fn load_preprocessed(config: &RunConfig) -> Result<Vec<Trace>, CliError> {
    let mut traces = Vec::new();
    for entry in &config.datasets {
        let path = config.preprocessed_path(&entry.name);
        let meta = load_sidecar(&sidecar_path(&path))?;
        traces.push(load_trace(&path, TraceFormat::CsvPairs, meta)?);
    }
    Ok(traces)
}

/// Tokenize the preprocessed dataset and run the training plan. Writes the
/// checkpoint, the loss CSV, and a resolved-config echo; returns the
/// checkpoint path.
pub fn cmd_train(config: &RunConfig) -> Result<PathBuf, CliError> {
    config.validate()?;
    ensure_dir(&config.out_dir)?;
    let traces = load_preprocessed(config)?;

    // Refuse before training if the vocabulary cannot hold the data.
    let max_id = traces.iter().filter_map(|t| t.max_id()).max().unwrap_or(0);
    if (max_id as usize) >= config.model.vocab {
        return Err(CliError::Config(format!(
            "model vocab {} too small for observed ID {max_id}",
            config.model.vocab
        )));
    }

    let mut streams = Vec::new();
    let mut names = Vec::new();
    for trace in &traces {
        streams.push(tokenize(trace, config.meta_params)?);
        names.push(trace.meta.name.clone());
    }

    let mut model = Model::init(config.model)?;
    let outcome = train(&mut model, &streams, &names, &config.train)?;

    let ckpt = Checkpoint::from_model(
        &model,
        Some(OptimizerState {
            step: outcome.optimizer_step,
            m: outcome.optimizer_m,
            v: outcome.optimizer_v,
        }),
        outcome.log.clone(),
    );
    let ckpt_path = config.checkpoint_path();
    save_checkpoint(&ckpt, &ckpt_path)?;
    crate::model::train::write_loss_csv(&outcome.log, &config.out_dir.join("loss.csv"))
        .map_err(io_err(&config.out_dir))?;
    config.save(&config.out_dir.join("train.resolved.json"))?;
    Ok(ckpt_path)
}

/// Flag-level overrides for `generate`; `None` means "use the config".
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerateOverrides {
    pub trace_id: Option<u32>,
    pub requests: Option<usize>,
    pub temperature: Option<f64>,
    pub scale_mask: Option<u32>,
    pub segment_length: Option<usize>,
}

/// Provenance sidecar written next to each generated trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationProvenance {
    pub spec: GenerationSpec,
    pub checkpoint: String,
    pub checkpoint_checksum: String,
    pub model_config: crate::model::ModelConfig,
}

/// Generate one trace file per (trace, temperature) pair: by default every
/// configured trace at every configured temperature; flags narrow or
/// override. Each output gets a metadata sidecar and a provenance JSON.
pub fn cmd_generate(
    config: &RunConfig,
    checkpoint_path: &Path,
    overrides: &GenerateOverrides,
) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    let ckpt = load_checkpoint(checkpoint_path)?;
    let checksum = checkpoint::file_checksum(checkpoint_path)?;
    let model_config = ckpt.config;
    let model = ckpt.into_model()?;
    let dir = config.generated_dir();
    ensure_dir(&dir)?;

    let entries: Vec<_> = match overrides.trace_id {
        Some(id) => {
            let entry = config
                .datasets
                .iter()
                .find(|d| d.trace_id == id)
                .ok_or_else(|| CliError::Config(format!("unknown trace_id {id}")))?;
            vec![entry]
        }
        None => config.datasets.iter().collect(),
    };
    let temperatures: Vec<f64> = match overrides.temperature {
        Some(t) => vec![t],
        None => config.generate.temperatures.clone(),
    };
    if temperatures.is_empty() {
        return Err(CliError::Config("no temperatures configured".into()));
    }
    let requests = overrides.requests.unwrap_or(config.generate.requests);
    let scale_mask = overrides.scale_mask.or(config.generate.scale_mask);

    // Assemble every (trace, temperature) job, then sample them in
    // parallel; each job has its own derived seed, so order cannot matter.
    let mut jobs = Vec::new();
    for entry in entries {
        // The segment schedule comes from the original trace unless pinned.
        let segment_length = match overrides.segment_length {
            Some(sl) => sl,
            None => {
                let path = config.preprocessed_path(&entry.name);
                let meta = load_sidecar(&sidecar_path(&path))?;
                let trace = load_trace(&path, TraceFormat::CsvPairs, meta)?;
                (2 * trace.len() / config.meta_params.segments as usize).max(1)
            }
        };
        for (ti, &temperature) in temperatures.iter().enumerate() {
            let spec = GenerationSpec {
                trace_id: entry.trace_id,
                target_requests: requests,
                temperature,
                scale_mask,
                segment_length,
                seed: derive_seed(
                    config.seed,
                    0x6e67_0000 + entry.trace_id as u64 * 64 + ti as u64,
                ),
                prompt: None,
            };
            jobs.push((entry.name.clone(), spec));
        }
    }

    use rayon::prelude::*;
    let traces: Result<Vec<_>, crate::generator::GenError> = jobs
        .par_iter()
        .map(|(name, spec)| {
            let mut trace = generate(&model, spec)?;
            trace.meta.name = format!("{}_t{}", name, spec.temperature);
            Ok(trace)
        })
        .collect();
    let traces = traces?;

    let mut outputs = Vec::new();
    for ((_, spec), trace) in jobs.into_iter().zip(traces) {
        let out = dir.join(format!("{}.csv", trace.meta.name));
        save_trace(&trace, &out, TraceFormat::CsvPairs)?;
        save_sidecar(&trace.meta, &sidecar_path(&out))?;
        let provenance = GenerationProvenance {
            spec,
            checkpoint: checkpoint_path.display().to_string(),
            checkpoint_checksum: format!("{checksum:016x}"),
            model_config,
        };
        let prov_path = out.with_extension("spec.json");
        std::fs::write(
            &prov_path,
            serde_json::to_string_pretty(&provenance).expect("provenance serializes"),
        )
        .map_err(io_err(&prov_path))?;
        outputs.push(out);
    }
    config.save(&config.out_dir.join("generate.resolved.json"))?;
    Ok(outputs)
}

/// Evaluation knobs (the `eval` flag set).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub window: usize,
    pub stride: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub ngram_samples: usize,
    pub repeats: usize,
    pub seed: u64,
    pub original_format: TraceFormat,
    pub generated_format: TraceFormat,
    /// Cell cap applied to the exported matrices (similarity uses raw counts).
    pub matrix_clip: Option<u64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            window: 20_000,
            stride: 1,
            ngram_min: 1,
            ngram_max: 40,
            ngram_samples: 6000,
            repeats: 3,
            seed: 0,
            original_format: TraceFormat::CsvPairs,
            generated_format: TraceFormat::CsvPairs,
            matrix_clip: Some(100),
        }
    }
}

/// Score a generated trace against its original: truncate the original to
/// the generated length, then run matrix similarity, complexity profiles,
/// burst series, and n-gram novelty/uniqueness. Writes plot-ready CSVs and
/// one aggregate JSON into `out_dir`.
pub fn cmd_eval(
    original_path: &Path,
    generated_path: &Path,
    options: &EvalOptions,
    out_dir: &Path,
) -> Result<EvalReport, CliError> {
    ensure_dir(out_dir)?;
    let original_full = load_trace_auto(original_path, options.original_format)?;
    let generated = load_trace_auto(generated_path, options.generated_format)?;
    let original = original_full.truncate(generated.len());

    // Traffic matrices. A node-count mismatch (scale-masked generation) is
    // reported, not fatal: both matrices are zero-padded to the larger n.
    let node_count_mismatch = original.meta.n_nodes != generated.meta.n_nodes;
    let n_common = original.meta.n_nodes.max(generated.meta.n_nodes) as usize;
    let m_orig = original.traffic_matrix().padded_to(n_common);
    let m_gen = generated.traffic_matrix().padded_to(n_common);
    let similarity = matrix_similarity(&m_orig, &m_gen)?;
    let export = |m: &crate::trace::TrafficMatrix, path: &Path| -> Result<(), CliError> {
        let clipped = match options.matrix_clip {
            Some(cap) => m.clip(cap),
            None => m.clone(),
        };
        clipped.export_csv(path).map_err(CliError::Trace)
    };
    export(&m_orig, &out_dir.join("matrix_original.csv"))?;
    export(&m_gen, &out_dir.join("matrix_generated.csv"))?;

    // Complexity profiles. Both sides share one baseline seed so that
    // comparing a trace against itself gives exactly distance zero.
    let profile_seed = derive_seed(options.seed, 1);
    let p_orig = complexity_profile(&original, profile_seed, options.repeats)?;
    let p_gen = complexity_profile(&generated, profile_seed, options.repeats)?;
    let dist = profile_distance(&p_orig, &p_gen);
    write_complexity_csv(
        &[
            (original.meta.name.clone(), ProfilePoint::from(p_orig)),
            (generated.meta.name.clone(), ProfilePoint::from(p_gen)),
        ],
        &out_dir.join("complexity.csv"),
    )
    .map_err(io_err(out_dir))?;

    // Burst series; the window is clamped to the compared length.
    let w = options.window.min(original.len()).min(generated.len()).max(1);
    let b_orig = burst_series(&original, w, options.stride)?;
    let b_gen = burst_series(&generated, w, options.stride)?;
    b_orig
        .export_csv(&out_dir.join("bursts_original.csv"))
        .map_err(io_err(out_dir))?;
    b_gen
        .export_csv(&out_dir.join("bursts_generated.csv"))
        .map_err(io_err(out_dir))?;

    // N-grams: novelty of generated against original, uniqueness of the
    // original; the max length is clamped to what both traces can support.
    let limit = generated.len().min(original.len());
    let ngram_max = options.ngram_max.min(limit);
    let range = (options.ngram_min, ngram_max);
    let novelty = ngram_novelty(&generated, &original, range, options.ngram_samples, options.seed)?;
    let uniqueness = ngram_uniqueness(&original, range, options.ngram_samples, options.seed)?;
    let merged = NgramReport::merged(&novelty, &uniqueness);
    merged
        .export_csv(&out_dir.join("ngrams.csv"))
        .map_err(io_err(out_dir))?;

    let report = EvalReport {
        original: original_path.display().to_string(),
        generated: generated_path.display().to_string(),
        requests_compared: generated.len(),
        node_count_original: original.meta.n_nodes,
        node_count_generated: generated.meta.n_nodes,
        node_count_mismatch,
        matrix_similarity: similarity,
        original_profile: p_orig.into(),
        generated_profile: p_gen.into(),
        profile_distance: dist,
        burst_window: w,
        burst_stride: options.stride,
        original_mean_mb: mean_mb(&b_orig)?,
        original_mean_par: mean_par(&b_orig)?,
        generated_mean_mb: mean_mb(&b_gen)?,
        generated_mean_par: mean_par(&b_gen)?,
        ngram: merged.rows.clone(),
        seed: options.seed,
    };
    report.save(&out_dir.join("report.json")).map_err(io_err(out_dir))?;
    let echo = serde_json::to_string_pretty(options).expect("options serialize");
    std::fs::write(out_dir.join("eval.resolved.json"), echo).map_err(io_err(out_dir))?;
    Ok(report)
}

/// One generated trace in a sweep; the temperature comes from the flag or
/// from the provenance sidecar written by `generate`.
#[derive(Debug, Clone)]
pub struct SweepInput {
    pub path: PathBuf,
    pub temperature: Option<f64>,
}

fn sweep_temperature(input: &SweepInput) -> Result<f64, CliError> {
    if let Some(t) = input.temperature {
        return Ok(t);
    }
    let prov_path = input.path.with_extension("spec.json");
    let text = std::fs::read_to_string(&prov_path).map_err(|_| {
        CliError::Config(format!(
            "{}: no temperature label and no provenance sidecar at {}",
            input.path.display(),
            prov_path.display()
        ))
    })?;
    let prov: GenerationProvenance = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", prov_path.display())))?;
    Ok(prov.spec.temperature)
}

/// Distance-vs-temperature summary over a set of generated traces: one CSV
/// row per trace with its complexity-map distance to the (truncated)
/// original and its mean burst PAR.
pub fn cmd_sweep_report(
    original_path: &Path,
    inputs: &[SweepInput],
    options: &EvalOptions,
    out_csv: &Path,
) -> Result<Vec<SweepRow>, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Config("no generated traces given".into()));
    }
    let original_full = load_trace_auto(original_path, options.original_format)?;
    let mut rows = Vec::new();
    for input in inputs {
        let temperature = sweep_temperature(input)?;
        let generated = load_trace_auto(&input.path, options.generated_format)?;
        let original = original_full.truncate(generated.len());
        let profile_seed = derive_seed(options.seed, 1);
        let p_orig = complexity_profile(&original, profile_seed, options.repeats)?;
        let p_gen = complexity_profile(&generated, profile_seed, options.repeats)?;
        let w = options.window.min(generated.len()).max(1);
        let series = burst_series(&generated, w, options.stride)?;
        rows.push(SweepRow {
            temperature,
            profile_distance: profile_distance(&p_orig, &p_gen),
            mean_par: mean_par(&series)?,
        });
    }
    rows.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
    write_sweep_csv(&rows, out_csv).map_err(io_err(out_csv))?;
    Ok(rows)
}

/// Arguments for the `synth` command.
#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub pattern: SynthPattern,
    pub n_nodes: u32,
    pub length: usize,
    pub seed: u64,
    pub name: String,
    pub trace_id: u32,
    pub out: PathBuf,
}

/// Write a synthetic trace plus its sidecar.
pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf, CliError> {
    let trace = synth_trace(
        args.pattern,
        args.n_nodes,
        args.length,
        args.seed,
        args.name.clone(),
        args.trace_id,
    )?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    save_trace(&trace, &args.out, TraceFormat::CsvPairs)?;
    save_sidecar(&trace.meta, &sidecar_path(&args.out))?;
    Ok(args.out.clone())
}
