//! The whole pipeline as a library call sequence: synth raw inputs, then
//! preprocess -> train -> generate (five temperatures) -> eval ->
//! sweep-report, everything under one output directory.
//!
//! This is what `tracegen <subcommand>` does, minus the flag parsing.
//! Takes a few minutes on a laptop CPU.
//!
//! Run with: cargo run --release --example full_pipeline

use tracegen::cli::{
    cmd_eval, cmd_generate, cmd_preprocess, cmd_sweep_report, cmd_synth, cmd_train, DatasetEntry,
    EvalOptions, GenerateOverrides, RunConfig, SweepInput, SynthArgs,
};
use tracegen::trace::{SynthPattern, TraceFormat};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Raw synthetic corpus: one periodic trace, one block-structured trace.
    let mut datasets = Vec::new();
    for (name, trace_id, pattern, n) in [
        ("ring", 0u32, SynthPattern::PeriodicRing, 8u32),
        ("block", 1, SynthPattern::BlockDiagonal { blocks: 4 }, 16),
    ] {
        let out = root.join(format!("{name}_raw.csv"));
        cmd_synth(&SynthArgs {
            pattern,
            n_nodes: n,
            length: 20_000,
            seed: 40 + trace_id as u64,
            name: name.into(),
            trace_id,
            out: out.clone(),
        })
        .unwrap();
        datasets.push(DatasetEntry {
            path: out,
            name: name.into(),
            trace_id,
            n_nodes: n,
            format: TraceFormat::CsvPairs,
            max_len: Some(15_000),
            filter_remap: false,
            shift: 0,
        });
    }

    let mut config = RunConfig::desk(root.join("out"), datasets, 123).unwrap();
    config.train.steps = 120;
    config.train.tokens_per_step = 1024;
    config.generate.requests = 5_000;

    println!("preprocess ...");
    let preprocessed = cmd_preprocess(&config).unwrap();
    for p in &preprocessed {
        println!("  {}", p.display());
    }

    println!("train ({} steps) ...", config.train.steps);
    let ckpt = cmd_train(&config).unwrap();
    println!("  checkpoint {}", ckpt.display());

    println!("generate (5 temperatures x 2 traces) ...");
    let generated = cmd_generate(&config, &ckpt, &GenerateOverrides::default()).unwrap();
    for g in &generated {
        println!("  {}", g.display());
    }

    let options = EvalOptions {
        window: 2000,
        ngram_max: 20,
        ngram_samples: 1000,
        seed: config.seed,
        ..EvalOptions::default()
    };
    println!("eval (block trace, t = 1) ...");
    let block_gen: Vec<_> = generated
        .iter()
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("block_"))
        .cloned()
        .collect();
    let report = cmd_eval(
        &config.preprocessed_path("block"),
        &block_gen[2],
        &options,
        &config.out_dir.join("eval_block"),
    )
    .unwrap();
    println!(
        "  matrix similarity {:.4}, profile distance {:.4}",
        report.matrix_similarity, report.profile_distance
    );

    println!("sweep-report (block trace) ...");
    let inputs: Vec<SweepInput> = block_gen
        .iter()
        .map(|p| SweepInput {
            path: p.clone(),
            temperature: None, // read from the provenance sidecars
        })
        .collect();
    let rows = cmd_sweep_report(
        &config.preprocessed_path("block"),
        &inputs,
        &options,
        &config.out_dir.join("sweep_block.csv"),
    )
    .unwrap();
    for row in rows {
        println!(
            "  t = {:<5} distance {:.4}  mean PAR {:.2}",
            row.temperature, row.profile_distance, row.mean_par
        );
    }
    println!("done; outputs under {}", config.out_dir.display());
}
